//! Training objective: mean squared error over the steering horizon plus a
//! weighted mean absolute error over the ground cells of the depth grid.

use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub steering: f64,
    pub aux_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            steering: 1.0,
            aux_depth: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub steer_mse: f64,
    /// `None` when no depth term applied (no aux output, no target, or no
    /// ground cells)
    pub depth_mae: Option<f64>,
    pub d_steer: Vec<f64>,
    pub d_depth: Option<Vec<f64>>,
}

/// Loss and its gradient with respect to the predictions. Depth cells with a
/// non-finite target are sky and ignored.
pub fn loss(
    pred_steer: &[f64],
    pred_depth: Option<&[f64]>,
    label_steer: &[f64],
    label_depth: Option<&[f32]>,
    weights: &LossWeights,
) -> Result<LossOutput> {
    if pred_steer.len() != label_steer.len() || pred_steer.is_empty() {
        return Err(NnError::Shape(format!(
            "loss: {} steering predictions for {} labels",
            pred_steer.len(),
            label_steer.len()
        )));
    }
    let m = pred_steer.len() as f64;
    let mut steer_mse = 0.0;
    let mut d_steer = Vec::with_capacity(pred_steer.len());
    for (p, y) in pred_steer.iter().zip(label_steer) {
        let e = p - y;
        steer_mse += e * e;
        d_steer.push(weights.steering * 2.0 * e / m);
    }
    steer_mse /= m;
    let mut value = weights.steering * steer_mse;

    let mut depth_mae = None;
    let mut d_depth = None;
    if let (Some(pred), Some(label)) = (pred_depth, label_depth) {
        if pred.len() != label.len() {
            return Err(NnError::Shape(format!("loss: {} depth predictions for {} targets", pred.len(), label.len())));
        }
        let ground = label.iter().filter(|d| d.is_finite()).count();
        if ground > 0 {
            let n = ground as f64;
            let mut mae = 0.0;
            let grad = pred
                .iter()
                .zip(label)
                .map(|(&p, &y)| {
                    if !y.is_finite() {
                        return 0.0;
                    }
                    let e = p - y as f64;
                    mae += e.abs();
                    let sign = if e > 0.0 {
                        1.0
                    } else if e < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    weights.aux_depth * sign / n
                })
                .collect();
            mae /= n;
            value += weights.aux_depth * mae;
            depth_mae = Some(mae);
            d_depth = Some(grad);
        }
    }
    Ok(LossOutput {
        value,
        steer_mse,
        depth_mae,
        d_steer,
        d_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_predictions_give_zero() {
        let y = [0.1, -0.2, 0.0, 0.3, 0.05];
        let out = loss(&y, Some(&[4.0, 9.0]), &y, Some(&[4.0, 9.0]), &LossWeights::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.d_steer.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_computed_mse() {
        let out = loss(&[0.1, 0.0, 0.0, 0.0, 0.0], None, &[0.0; 5], None, &LossWeights::default()).unwrap();
        assert!((out.value - 0.002).abs() < 1e-15);
    }

    #[test]
    fn depth_term_ignores_sky_and_needs_both_heads() {
        let w = LossWeights::default();
        let out = loss(&[0.0], Some(&[1.0, 50.0, 3.0]), &[0.0], Some(&[2.0, f32::INFINITY, 3.0]), &w).unwrap();
        assert!((out.depth_mae.unwrap() - 0.5).abs() < 1e-15);
        assert!((out.value - 0.05).abs() < 1e-15);
        assert_eq!(out.d_depth.unwrap(), vec![-0.05, 0.0, 0.0]);
        let sky = loss(&[0.0], Some(&[1.0]), &[0.0], Some(&[f32::INFINITY]), &w).unwrap();
        assert_eq!(sky.value, 0.0);
        assert!(sky.depth_mae.is_none());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = LossWeights::default();
        let pred = [0.13, -0.4, 0.27, 0.0, -0.05];
        let label = [0.1, -0.2, 0.3, 0.2, 0.05];
        let dp = [3.0, 7.5, 12.0];
        let dl = [2.0f32, 8.0, f32::INFINITY];
        let out = loss(&pred, Some(&dp), &label, Some(&dl), &w).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let (mut a, mut b) = (pred, pred);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, Some(&dp), &label, Some(&dl), &w).unwrap().value
                - loss(&b, Some(&dp), &label, Some(&dl), &w).unwrap().value)
                / (2.0 * h);
            let rel = (fd - out.d_steer[i]).abs() / fd.abs().max(out.d_steer[i].abs());
            assert!(rel < 1e-6, "steer {i}: {fd} vs {}", out.d_steer[i]);
        }
        let dd = out.d_depth.unwrap();
        for i in 0..2 {
            let (mut a, mut b) = (dp, dp);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&pred, Some(&a), &label, Some(&dl), &w).unwrap().value
                - loss(&pred, Some(&b), &label, Some(&dl), &w).unwrap().value)
                / (2.0 * h);
            assert!((fd - dd[i]).abs() / dd[i].abs() < 1e-6, "depth {i}");
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        assert!(loss(&[0.0; 4], None, &[0.0; 5], None, &LossWeights::default()).is_err());
    }
}
