//! Mini-batch training.
//!
//! Per-sample gradients may be computed on several workers, but they are
//! always summed in sample order, so results do not depend on the thread
//! count. The optimizer step uses the batch mean of the summed gradient.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use sdai_core::rng::{derive_seed, seeded};

use crate::dataset::Dataset;
use crate::loss::{loss, LossWeights};
use crate::policy::{backward_into, forward, PolicyParams, PolicySpec};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::SgdMomentum { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            optimizer: Optimizer::adam(),
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(NnError::Config("learning_rate and batch_size must be positive".into()));
        }
        if self.loss_weights.steering < 0.0 || self.loss_weights.aux_depth < 0.0 {
            return Err(NnError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// entry 0: mean loss of the initial parameters; entry k: mean batch loss
    /// seen during epoch k
    pub loss_trace: Vec<f64>,
}

/// Loss of one entry and its gradients accumulated into `grads`.
fn sample_gradient(
    params: &PolicyParams,
    spec: &PolicySpec,
    data: &Dataset,
    i: usize,
    weights: &LossWeights,
    grads: &mut [Tensor],
) -> Result<f64> {
    let mut x = Vec::new();
    data.input(i, &mut x);
    let f = forward(params, spec, &x)?;
    let e = &data.entries[i];
    let out = loss(&f.steer, f.depth.as_deref(), &e.steer, e.depth.as_deref(), weights)?;
    backward_into(params, spec, &f.cache, &out.d_steer, out.d_depth.as_deref(), grads)?;
    Ok(out.value)
}

/// Summed loss and summed gradient over `indices`.
pub fn batch_gradient(
    params: &PolicyParams,
    spec: &PolicySpec,
    data: &Dataset,
    indices: &[usize],
    weights: &LossWeights,
) -> Result<(f64, Vec<Tensor>)> {
    let per_sample: Vec<(f64, Vec<Tensor>)> = indices
        .par_iter()
        .map(|&i| {
            let mut g = params.zeros_like();
            sample_gradient(params, spec, data, i, weights, &mut g).map(|l| (l, g))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for (l, g) in &per_sample {
        loss_sum += l;
        for (t, gi) in total.iter_mut().zip(g) {
            t.add_assign(gi);
        }
    }
    Ok((loss_sum, total))
}

/// Mean loss over the whole dataset.
pub fn evaluate_loss(params: &PolicyParams, spec: &PolicySpec, data: &Dataset, weights: &LossWeights) -> Result<f64> {
    let losses: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut x = Vec::new();
            data.input(i, &mut x);
            let f = forward(params, spec, &x)?;
            let e = &data.entries[i];
            Ok(loss(&f.steer, f.depth.as_deref(), &e.steer, e.depth.as_deref(), weights)?.value)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len().max(1) as f64)
}

fn check_dataset(data: &Dataset, spec: &PolicySpec) -> Result<()> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if data.n_frames != spec.n_frames || data.height != spec.height || data.crop_width != spec.width || data.m_steps != spec.m_steps {
        return Err(NnError::Shape(format!(
            "dataset holds {}×{}×{} inputs with {} labels, spec expects {}×{}×{} with {}",
            data.n_frames, data.height, data.crop_width, data.m_steps, spec.n_frames, spec.height, spec.width, spec.m_steps
        )));
    }
    if spec.aux_depth && data.entries.iter().any(|e| e.depth.is_some()) && data.depth_grid != spec.depth_grid() {
        return Err(NnError::Shape(format!(
            "aux: dataset depth grid {:?} does not match the feature map {:?}",
            data.depth_grid,
            spec.depth_grid()
        )));
    }
    Ok(())
}

/// Starting point for the aux bias: mean of all ground depth targets.
fn aux_bias_prior(data: &Dataset) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for d in data.entries.iter().filter_map(|e| e.depth.as_ref()) {
        for v in d.iter().filter(|v| v.is_finite()) {
            sum += *v as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

struct OptState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

fn apply_update(params: &mut PolicyParams, grads: &[Tensor], scale: f64, cfg: &TrainConfig, st: &mut OptState) {
    st.t += 1;
    let lr = cfg.learning_rate;
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = st.m[i].data_mut();
        match cfg.optimizer {
            Optimizer::SgdMomentum { momentum } => {
                for ((w, gv), mv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()) {
                    *mv = momentum * *mv + gv * scale;
                    *w -= lr * *mv;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let v = st.v[i].data_mut();
                let c1 = 1.0 - beta1.powi(st.t);
                let c2 = 1.0 - beta2.powi(st.t);
                for (((w, gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let gs = gv * scale;
                    *mv = beta1 * *mv + (1.0 - beta1) * gs;
                    *vv = beta2 * *vv + (1.0 - beta2) * gs * gs;
                    *w -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Trains from `PolicyParams::init(spec, cfg.seed)`, with the aux bias
/// started at the mean ground depth target.
pub fn train(data: &Dataset, spec: &PolicySpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, spec, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_with(
    data: &Dataset,
    spec: &PolicySpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    check_dataset(data, spec)?;
    let mut params = PolicyParams::init(spec, cfg.seed);
    if spec.aux_depth {
        if let Some(b) = aux_bias_prior(data) {
            params.get_mut("aux.b").expect("aux head").data_mut()[0] = b;
        }
    }
    let mut order_rng = seeded(derive_seed(cfg.seed, b"order"));
    let initial = evaluate_loss(&params, spec, data, &cfg.loss_weights)?;
    if !initial.is_finite() {
        return Err(NnError::NonFinite { epoch: 0, batch: 0 });
    }
    let mut trace = vec![initial];
    on_epoch(0, initial);
    let mut st = OptState {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss_sum, grads) = batch_gradient(&params, spec, data, idx, &cfg.loss_weights)?;
            if !loss_sum.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(NnError::NonFinite { epoch, batch });
            }
            epoch_loss += loss_sum;
            apply_update(&mut params, &grads, 1.0 / idx.len() as f64, cfg, &mut st);
        }
        let mean = epoch_loss / data.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome { params, loss_trace: trace })
}
