//! Backward pass versus central finite differences on a small seeded network.

use rand::Rng;
use sdai_core::rng::{derive_seed, seeded};

use crate::loss::{loss, LossWeights};
use crate::policy::{backward, forward, random_input, BlockSpec, PolicyParams, PolicySpec};
use crate::Result;

/// Below this magnitude both gradients count as zero and the absolute
/// difference is used instead of the relative one.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub layers: Vec<LayerReport>,
}

/// Network with the full policy structure (stem, downsampling and
/// same-resolution residual blocks, head, aux head) at a size where
/// finite differences are cheap.
pub fn tiny_spec() -> PolicySpec {
    PolicySpec {
        n_frames: 2,
        height: 12,
        width: 16,
        stem_channels: 3,
        blocks: vec![
            BlockSpec { channels: 3, stride: 1 },
            BlockSpec { channels: 5, stride: 2 },
            BlockSpec { channels: 6, stride: 1 },
        ],
        m_steps: 3,
        aux_depth: true,
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares analytic and central-difference gradients of the full training
/// loss on at least `min_params` parameters, sampled across every tensor.
pub fn gradcheck(seed: u64, min_params: usize) -> Result<GradcheckReport> {
    let spec = tiny_spec();
    let params = PolicyParams::init(&spec, derive_seed(seed, b"params"));
    let mut rng = seeded(derive_seed(seed, b"data"));
    let x = random_input(&spec, &mut rng);
    let labels: Vec<f64> = (0..spec.m_steps).map(|_| rng.random_range(-0.3..0.3)).collect();
    let (gh, gw) = spec.depth_grid();
    let depth: Vec<f32> = (0..gh * gw)
        .map(|i| if i < gw { f32::INFINITY } else { rng.random_range(2.0..20.0) })
        .collect();
    let weights = LossWeights::default();
    let eval = |p: &PolicyParams| -> Result<f64> {
        let f = forward(p, &spec, &x)?;
        Ok(loss(&f.steer, f.depth.as_deref(), &labels, Some(&depth), &weights)?.value)
    };

    let f = forward(&params, &spec, &x)?;
    let l = loss(&f.steer, f.depth.as_deref(), &labels, Some(&depth), &weights)?;
    let grads = backward(&params, &spec, &f.cache, &l.d_steer, l.d_depth.as_deref())?;

    let total = params.param_count();
    let n_tensors = params.tensors().len();
    let h = 1e-6;
    let mut probe = params.clone();
    let mut layers = Vec::new();
    let mut checked = 0;
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        let quota = (min_params * len).div_ceil(total).max(4).min(len);
        let mut report = LayerReport {
            name: params.names()[ti].clone(),
            checked: 0,
            max_rel_error: 0.0,
        };
        for _ in 0..quota {
            let j = rng.random_range(0..len);
            let orig = params.tensors()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(grads[ti].data()[j], numeric);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
        checked += report.checked;
        layers.push(report);
    }
    let max_rel_error = layers.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        checked,
        max_rel_error,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network_gradients_match() {
        let r = gradcheck(1, 200).unwrap();
        assert!(r.checked >= 200);
        assert_eq!(r.layers.len(), 18);
        assert!(r.max_rel_error < 1e-4, "{r:#?}");
    }

    #[test]
    fn floor_only_applies_to_tiny_gradients() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0 + 1e-6) - 1e-6 / (1.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(relative_error(1e-12, 0.0), 1e-12 / GRAD_FLOOR);
    }
}
