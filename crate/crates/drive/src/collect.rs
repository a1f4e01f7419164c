//! Expert demonstrations recorded through the same PID loop used at
//! deployment.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sdai_core::camera::{quantize, render_frame};
use sdai_core::kv::KvMap;
use sdai_core::rng::seeded;
use sdai_core::sim::{pure_pursuit_from, SimConfig, VehicleState, DEFAULT_LOOKAHEAD};
use sdai_core::{CameraIntrinsics, Episode, EpisodeId, Sample, Source, Track};

use crate::closed_loop::Progress;
use crate::pid::{actuate, pid_step, PidGains, PidState};
use crate::{DriveError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub n_frames: u8,
    pub m_steps: u8,
    /// σ of the Gaussian noise added to the executed target, radians; the
    /// recorded labels stay noise-free
    pub label_noise: f64,
    /// initial lateral offset drawn uniformly from ±this, meters
    pub start_lateral_max: f64,
    /// store the depth map on every n-th sample
    pub depth_every: usize,
    pub lookahead: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_frames: 6,
            m_steps: 5,
            label_noise: 0.01,
            start_lateral_max: 0.5,
            depth_every: 10,
            lookahead: DEFAULT_LOOKAHEAD,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.m_steps == 0 {
            return Err(DriveError::Config("n_frames and m_steps must be positive".into()));
        }
        if !(self.label_noise >= 0.0 && self.start_lateral_max >= 0.0 && self.lookahead > 0.0) {
            return Err(DriveError::Config("noise and start offset must be non-negative, lookahead positive".into()));
        }
        if self.depth_every == 0 {
            return Err(DriveError::Config("depth_every must be positive".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            n_frames: kv.get("n_frames")?.unwrap_or(d.n_frames),
            m_steps: kv.get("m_steps")?.unwrap_or(d.m_steps),
            label_noise: kv.get_f64("label_noise")?.unwrap_or(d.label_noise),
            start_lateral_max: kv.get_f64("start_lateral_max")?.unwrap_or(d.start_lateral_max),
            depth_every: kv.get("depth_every")?.unwrap_or(d.depth_every),
            lookahead: kv.get_f64("lookahead")?.unwrap_or(d.lookahead),
        };
        c.validate()?;
        Ok(c)
    }
}

/// Records one expert run from a random lateral start to the end of the
/// track (or a lane departure). Sample `t` holds the view before tick `t`
/// and the expert's noise-free targets for ticks `t .. t + m_steps`, padded
/// with the last target at the end of the run.
pub fn collect_expert_episode(
    track: &Track,
    scenario_tag: &str,
    sim: &SimConfig,
    cam: &CameraIntrinsics,
    gains: &PidGains,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Episode> {
    sim.validate()?;
    cam.validate()?;
    gains.validate()?;
    cfg.validate()?;
    let mut rng = seeded(seed);
    let id = EpisodeId::random(&mut rng);
    let lat0 = if cfg.start_lateral_max > 0.0 {
        rng.random_range(-cfg.start_lateral_max..=cfg.start_lateral_max)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, cfg.label_noise).map_err(|e| DriveError::Config(e.to_string()))?;
    let max_steps = (2.0 * track.total_length() / (sim.speed * sim.dt)).ceil() as usize + 10;

    let mut state = VehicleState::on_track(track, 0.0, lat0, 0.0, sim.speed);
    let mut progress = Progress::new(track, &state);
    let window = 2.0 * sim.speed * sim.dt + 5.0;
    let mut pid = PidState::default();
    let mut states = Vec::new();
    let mut frames = Vec::new();
    let mut clean = Vec::new();
    for t in 0..max_steps {
        let (s, lat) = progress.update(track, &state, window);
        if progress.finished(track) || lat.abs() > track.lane_half_width() {
            break;
        }
        let frame = render_frame(&state, track, cam);
        let pixels: Vec<u8> = frame.pixels.iter().map(|&v| quantize(v)).collect();
        let depth = (t % cfg.depth_every == 0).then(|| frame.depth.iter().map(|&d| d as f32).collect::<Vec<f32>>());
        frames.push((pixels, depth));
        let target = pure_pursuit_from(&state, track, s, cfg.lookahead, sim);
        clean.push(target);
        states.push(state);
        let executed = target + if cfg.label_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let (out, next) = pid_step(gains, &pid, executed, state.steer, sim.dt);
        pid = next;
        state = actuate(&state, out.rate, sim);
    }
    if states.is_empty() {
        return Err(DriveError::Config("run ended before the first tick".into()));
    }

    let m = cfg.m_steps as usize;
    let last = clean.len() - 1;
    let samples = frames
        .into_iter()
        .zip(states)
        .enumerate()
        .map(|(t, ((pixels, depth), state))| Sample {
            timestamp: t as f64 * sim.dt,
            state,
            pixels,
            depth,
            steer: (t..t + m).map(|k| clean[k.min(last)]).collect(),
        })
        .collect();
    let ep = Episode {
        id,
        scenario_tag: scenario_tag.to_string(),
        dt: sim.dt,
        camera: *cam,
        n_frames: cfg.n_frames,
        m_steps: cfg.m_steps,
        source: Source::Expert,
        samples,
    };
    ep.validate().map_err(|e| DriveError::Config(e.to_string()))?;
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdai_core::track::{make_track, TrackKind};

    fn collect(seed: u64, cfg: &CollectConfig) -> Episode {
        let track = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
        let sim = SimConfig::default();
        collect_expert_episode(&track, "s_curve", &sim, &CameraIntrinsics::default(), &PidGains::default(), cfg, seed).unwrap()
    }

    #[test]
    fn episode_covers_the_track_with_clean_labels() {
        let ep = collect(3, &CollectConfig::default());
        assert_eq!(ep.samples.len(), 286);
        assert_eq!(ep.scenario_tag, "s_curve");
        assert!(ep.samples.iter().all(|s| s.steer.len() == 5 && s.pixels.len() == 128 * 64));
        let with_depth = ep.samples.iter().filter(|s| s.depth.is_some()).count();
        assert_eq!(with_depth, 29);
        // labels shift by one tick along the horizon
        for w in ep.samples.windows(2) {
            assert_eq!(w[0].steer[1..], w[1].steer[..4]);
        }
        let lat0 = ep.samples[0].state.y;
        assert!(lat0.abs() <= 0.5);
        assert_eq!(ep.encode().unwrap(), collect(3, &CollectConfig::default()).encode().unwrap());
        assert_ne!(collect(4, &CollectConfig::default()).id, ep.id);
    }

    #[test]
    fn noise_perturbs_the_path_but_not_the_labels() {
        let quiet = CollectConfig { label_noise: 0.0, start_lateral_max: 0.0, ..CollectConfig::default() };
        let noisy = CollectConfig { start_lateral_max: 0.0, ..CollectConfig::default() };
        let a = collect(7, &quiet);
        let b = collect(7, &noisy);
        assert_ne!(a.samples[50].state, b.samples[50].state);
        // labels are the expert's response to the recorded pose
        let track = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
        let sim = SimConfig::default();
        for s in &b.samples[..100] {
            let p = track.project(s.state.position());
            let want = pure_pursuit_from(&s.state, &track, p.s, DEFAULT_LOOKAHEAD, &sim);
            assert!((s.steer[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let track = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
        let bad = CollectConfig { depth_every: 0, ..CollectConfig::default() };
        let r = collect_expert_episode(&track, "x", &SimConfig::default(), &CameraIntrinsics::default(), &PidGains::default(), &bad, 1);
        assert!(r.is_err());
    }
}
