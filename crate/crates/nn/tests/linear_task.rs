use rand::Rng;
use sdai_core::rng::seeded;
use sdai_nn::train::evaluate_loss;
use sdai_nn::{train, Dataset, LossWeights, PolicySpec, TrainConfig};

/// Each sample is a noisy stack around one gray level; every horizon step is
/// labelled with half the mean intensity offset from mid-gray.
fn linear_task(spec: &PolicySpec, n: usize) -> Dataset {
    let mut rng = seeded(2024);
    let mut ds = Dataset::new(spec.n_frames, spec.height, spec.width, spec.width, spec.m_steps, spec.depth_grid());
    let px = spec.height * spec.width;
    for _ in 0..n {
        let level: f64 = rng.random_range(30.0..225.0);
        let frames: Vec<Vec<u8>> = (0..spec.n_frames)
            .map(|_| (0..px).map(|_| (level + rng.random_range(-30.0..30.0)).round() as u8).collect())
            .collect();
        let total: f64 = frames.iter().flatten().map(|&v| v as f64).sum();
        let mean = total / (255.0 * (px * spec.n_frames) as f64);
        ds.push_stack(frames, vec![0.5 * (mean - 0.5); spec.m_steps], None).unwrap();
    }
    ds
}

#[test]
fn learns_steering_from_mean_intensity() {
    let spec = PolicySpec { aux_depth: false, ..PolicySpec::default() };
    let data = linear_task(&spec, 200);
    let cfg = TrainConfig { epochs: 30, seed: 3, ..TrainConfig::default() };
    let out = train(&data, &spec, &cfg).unwrap();
    assert_eq!(out.loss_trace.len(), 31);
    let mse = evaluate_loss(&out.params, &spec, &data, &LossWeights::default()).unwrap();
    eprintln!("initial {:.5} final {mse:.3e}", out.loss_trace[0]);
    assert!(mse < 1e-3, "final training MSE {mse}");
}
