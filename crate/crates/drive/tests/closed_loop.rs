use sdai_core::slit::{augment_episode, StackLayout};
use sdai_core::track::{make_track, TrackKind};
use sdai_core::{CameraIntrinsics, SimConfig, SlitConfig};
use sdai_drive::telemetry::{parse_csv, replays_exactly, to_csv};
use sdai_drive::{closed_loop_run, collect_expert_episode, CollectConfig, Driver, PidGains, RunOptions};
use sdai_nn::{train, Dataset, PolicySpec, TrainConfig};

#[test]
fn expert_converges_from_a_metre_off_on_the_s_curve() {
    let track = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
    let sim = SimConfig::default();
    for start in [-1.0, -0.5, 0.5, 1.0] {
        let opts = RunOptions { start_lateral: start, ..RunOptions::for_track(&track, &sim) };
        let r = closed_loop_run(
            Driver::Expert { lookahead: CollectConfig::default().lookahead },
            &track,
            &sim,
            &CameraIntrinsics::default(),
            &PidGains::default(),
            &opts,
        )
        .unwrap();
        assert!(!r.metrics.departed, "start {start}");
        assert_eq!(r.metrics.completion, 1.0);
        let end = r.telemetry.last().unwrap().lateral_error;
        assert!(end.abs() < 0.1, "start {start}: ends {end}");
    }
}

#[test]
fn expert_telemetry_replays_through_csv() {
    let track = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
    let sim = SimConfig::default();
    let gains = PidGains::default();
    let opts = RunOptions { start_lateral: 0.4, ..RunOptions::for_track(&track, &sim) };
    let r = closed_loop_run(Driver::Expert { lookahead: 3.0 }, &track, &sim, &CameraIntrinsics::default(), &gains, &opts).unwrap();
    let rows = parse_csv(&to_csv(&r.telemetry)).unwrap();
    assert!(replays_exactly(&rows, &gains, sim.dt));
    let mut tampered = rows.clone();
    tampered[10].target += 1e-9;
    assert!(!replays_exactly(&tampered, &gains, sim.dt));
}

#[test]
fn slit_trained_policy_recovers_from_a_lateral_offset() {
    let track = make_track(TrackKind::Straight { length: 150.0 }).unwrap();
    let sim = SimConfig::default();
    let cam = CameraIntrinsics::default();
    let gains = PidGains::default();
    let spec = PolicySpec::default();
    let slit = SlitConfig { recovery_gain: 0.29, ..SlitConfig::default() };
    let layout = StackLayout { sample_stride: 3, ..StackLayout::for_dt(sim.dt) };
    let collect = CollectConfig { start_lateral_max: 1.0, ..CollectConfig::default() };

    let mut data = Dataset::new(spec.n_frames, spec.height, cam.width_full, slit.crop_width, spec.m_steps, layout.depth_grid);
    for seed in 0..8 {
        let ep = collect_expert_episode(&track, "straight", &sim, &cam, &gains, &collect, seed).unwrap();
        data.push_augmented(&augment_episode(&ep, &cam, &slit, &layout, 11).unwrap()).unwrap();
    }
    let out = train(&data, &spec, &TrainConfig { epochs: 6, seed: 3, ..TrainConfig::default() }).unwrap();

    let opts = RunOptions { start_lateral: 1.0, max_steps: 150, ..RunOptions::for_track(&track, &sim) };
    let r = closed_loop_run(Driver::Policy { params: &out.params, spec: &spec }, &track, &sim, &cam, &gains, &opts).unwrap();
    let within_10s = r.telemetry.iter().take_while(|row| row.time_s <= 10.0).any(|row| row.lateral_error.abs() < 0.3);
    let lats: Vec<String> = r.telemetry.iter().step_by(10).map(|row| format!("{:+.2}", row.lateral_error)).collect();
    assert!(within_10s, "lateral error every second: {}", lats.join(" "));
}
