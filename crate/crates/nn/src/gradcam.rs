//! Grad-CAM attention for the steering output.

use crate::policy::{feature_gradient, forward, PolicyParams, PolicySpec};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    /// signed first-step steering angle
    Step0Steer,
    /// mean absolute steering over the horizon
    MeanAbsSteer,
}

impl CamTarget {
    /// Gradient of the target scalar with respect to the steering outputs.
    pub fn output_gradient(self, steer: &[f64]) -> Vec<f64> {
        match self {
            CamTarget::Step0Steer => {
                let mut g = vec![0.0; steer.len()];
                g[0] = 1.0;
                g
            }
            CamTarget::MeanAbsSteer => {
                let m = steer.len() as f64;
                steer.iter().map(|&s| if s > 0.0 { 1.0 / m } else if s < 0.0 { -1.0 / m } else { 0.0 }).collect()
            }
        }
    }
}

/// Spatial weights in [0, 1] at input resolution, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl AttentionMap {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// `ReLU(Σ_k α_k A_k)` with `α_k` the spatial mean of `∂target/∂A_k`, for
/// `channels × h × w` feature maps and gradients.
pub fn weighted_activation(features: &[f64], grads: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut map = vec![0.0; hw];
    for c in 0..channels {
        let alpha = grads[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
        for (m, a) in map.iter_mut().zip(&features[c * hw..(c + 1) * hw]) {
            *m += alpha * a;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    map
}

/// Scales so the maximum is 1; an all-zero map stays zero.
pub fn max_normalize(map: &mut [f64]) {
    let max = map.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in map {
            *v /= max;
        }
    }
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Grad-CAM for an arbitrary target given by its gradient with respect to
/// the steering outputs.
pub fn grad_cam_for(params: &PolicyParams, spec: &PolicySpec, frames: &[f64], d_steer: &[f64]) -> Result<AttentionMap> {
    let f = forward(params, spec, frames)?;
    let grads = feature_gradient(params, spec, &f.cache, d_steer)?;
    let (c, h, w) = spec.feature_dims();
    let coarse = weighted_activation(f.cache.features(), &grads, c, h, w);
    let mut values = upsample_bilinear(&coarse, h, w, spec.height, spec.width);
    max_normalize(&mut values);
    Ok(AttentionMap {
        width: spec.width,
        height: spec.height,
        values,
    })
}

pub fn grad_cam(params: &PolicyParams, spec: &PolicySpec, frames: &[f64], target: CamTarget) -> Result<AttentionMap> {
    let f = forward(params, spec, frames)?;
    grad_cam_for(params, spec, frames, &target.output_gradient(&f.steer))
}
