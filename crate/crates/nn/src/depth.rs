//! Scoring of the auxiliary coarse-depth head.

use crate::dataset::Dataset;
use crate::policy::{forward, PolicyParams, PolicySpec};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthScore {
    /// mean absolute error in meters over the scored cells, 0 when none
    pub mae: f64,
    pub cells: usize,
}

impl DepthScore {
    pub fn no_ground_cells(&self) -> bool {
        self.cells == 0
    }
}

fn accumulate(pred: &[f64], truth: &[f32], max_depth: f64, sum: &mut f64, cells: &mut usize) {
    for (p, &t) in pred.iter().zip(truth) {
        if t.is_finite() && (t as f64) < max_depth {
            *sum += (p - t as f64).abs();
            *cells += 1;
        }
    }
}

/// Error of the coarse prediction for one input against a block-averaged
/// truth grid. Sky cells (non-finite truth) and cells at or beyond
/// `max_depth` are not scored.
pub fn eval_depth_head(params: &PolicyParams, spec: &PolicySpec, frames: &[f64], truth: &[f32], max_depth: f64) -> Result<DepthScore> {
    if !spec.aux_depth {
        return Err(NnError::AuxDisabled);
    }
    let (gh, gw) = spec.depth_grid();
    if truth.len() != gh * gw {
        return Err(NnError::Shape(format!("aux: truth has {} cells, grid is {gh}×{gw}", truth.len())));
    }
    let f = forward(params, spec, frames)?;
    let (mut sum, mut cells) = (0.0, 0);
    accumulate(f.depth.as_deref().expect("aux head"), truth, max_depth, &mut sum, &mut cells);
    Ok(DepthScore {
        mae: if cells > 0 { sum / cells as f64 } else { 0.0 },
        cells,
    })
}

/// Cell-weighted error over every dataset entry that carries a depth target.
pub fn eval_depth_dataset(params: &PolicyParams, spec: &PolicySpec, data: &Dataset, max_depth: f64) -> Result<DepthScore> {
    if !spec.aux_depth {
        return Err(NnError::AuxDisabled);
    }
    let (mut sum, mut cells) = (0.0, 0);
    let mut x = Vec::new();
    for (i, e) in data.entries.iter().enumerate() {
        let Some(truth) = &e.depth else { continue };
        data.input(i, &mut x);
        let f = forward(params, spec, &x)?;
        accumulate(f.depth.as_deref().expect("aux head"), truth, max_depth, &mut sum, &mut cells);
    }
    Ok(DepthScore {
        mae: if cells > 0 { sum / cells as f64 } else { 0.0 },
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::random_input;
    use sdai_core::rng::seeded;

    #[test]
    fn exact_prediction_scores_zero() {
        let spec = PolicySpec::default();
        let mut p = PolicyParams::init(&spec, 1);
        p.get_mut("aux.w").unwrap().fill(0.0);
        p.get_mut("aux.b").unwrap().fill(7.5);
        let x = random_input(&spec, &mut seeded(1));
        let mut truth = vec![7.5f32; 96];
        truth[..12].fill(f32::INFINITY);
        let s = eval_depth_head(&p, &spec, &x, &truth, 20.0).unwrap();
        assert_eq!((s.mae, s.cells), (0.0, 84));
        truth[20] = 9.5;
        let s = eval_depth_head(&p, &spec, &x, &truth, 20.0).unwrap();
        assert!((s.mae - 2.0 / 84.0).abs() < 1e-12);
    }

    #[test]
    fn all_sky_is_flagged() {
        let spec = PolicySpec::default();
        let p = PolicyParams::init(&spec, 1);
        let x = random_input(&spec, &mut seeded(1));
        let s = eval_depth_head(&p, &spec, &x, &[f32::INFINITY; 96], 20.0).unwrap();
        assert!(s.no_ground_cells());
        assert_eq!(s.mae, 0.0);
    }

    #[test]
    fn disabled_head_is_an_error() {
        let spec = PolicySpec { aux_depth: false, ..PolicySpec::default() };
        let p = PolicyParams::init(&spec, 1);
        let x = random_input(&spec, &mut seeded(1));
        assert!(matches!(eval_depth_head(&p, &spec, &x, &[1.0; 96], 20.0), Err(NnError::AuxDisabled)));
    }
}
