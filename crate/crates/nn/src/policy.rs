//! The residual steering policy.
//!
//! Input is a channel-stacked set of past frames. A stride-2 stem conv is
//! followed by residual blocks of two 3×3 convs each. The skip path is the
//! identity, strided and zero-padded in channels when the block downsamples
//! or widens. Global average pooling feeds a linear head with `m_steps`
//! steering outputs. An optional 1×1 conv over the last feature map predicts
//! coarse depth.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sdai_core::rng::seeded;

use crate::conv::{conv_backward, conv_forward, im2col, ConvGeom};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySpec {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub m_steps: usize,
    pub aux_depth: bool,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            n_frames: 6,
            height: 64,
            width: 96,
            stem_channels: 8,
            blocks: vec![
                BlockSpec { channels: 8, stride: 2 },
                BlockSpec { channels: 16, stride: 2 },
                BlockSpec { channels: 32, stride: 1 },
            ],
            m_steps: 5,
            aux_depth: true,
        }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Spec(m.to_string()));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1");
        }
        if self.m_steps == 0 {
            return bad("m_steps must be at least 1");
        }
        if self.height < 2 || self.width < 2 || self.stem_channels == 0 {
            return bad("input and stem dimensions must be positive");
        }
        let mut c = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels < c || b.stride == 0 {
                return Err(NnError::Spec(format!(
                    "block{i}: channels must not shrink ({c} -> {}) and stride must be positive",
                    b.channels
                )));
            }
            c = b.channels;
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.n_frames * self.height * self.width
    }

    fn stem_geom(&self) -> ConvGeom {
        ConvGeom {
            c_in: self.n_frames,
            c_out: self.stem_channels,
            h: self.height,
            w: self.width,
            k: 3,
            stride: 2,
        }
    }

    /// `(conv1, conv2)` geometry of every block.
    fn block_geoms(&self) -> Vec<(ConvGeom, ConvGeom)> {
        let stem = self.stem_geom();
        let (mut c, mut h, mut w) = (stem.c_out, stem.out_h(), stem.out_w());
        self.blocks
            .iter()
            .map(|b| {
                let g1 = ConvGeom { c_in: c, c_out: b.channels, h, w, k: 3, stride: b.stride };
                let g2 = ConvGeom { c_in: b.channels, c_out: b.channels, h: g1.out_h(), w: g1.out_w(), k: 3, stride: 1 };
                (c, h, w) = (b.channels, g2.out_h(), g2.out_w());
                (g1, g2)
            })
            .collect()
    }

    /// Channels, rows and columns of the last feature map.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        match self.block_geoms().last() {
            Some((_, g2)) => (g2.c_out, g2.out_h(), g2.out_w()),
            None => {
                let s = self.stem_geom();
                (s.c_out, s.out_h(), s.out_w())
            }
        }
    }

    /// Rows and columns of the coarse depth prediction.
    pub fn depth_grid(&self) -> (usize, usize) {
        let (_, h, w) = self.feature_dims();
        (h, w)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let stem = self.stem_geom();
        out.push(("stem.w".into(), vec![stem.c_out, stem.c_in, 3, 3]));
        out.push(("stem.b".into(), vec![stem.c_out]));
        for (i, (g1, g2)) in self.block_geoms().iter().enumerate() {
            for (j, g) in [g1, g2].into_iter().enumerate() {
                out.push((format!("block{i}.conv{}.w", j + 1), vec![g.c_out, g.c_in, 3, 3]));
                out.push((format!("block{i}.conv{}.b", j + 1), vec![g.c_out]));
            }
        }
        let (c, _, _) = self.feature_dims();
        out.push(("head.w".into(), vec![self.m_steps, c]));
        out.push(("head.b".into(), vec![self.m_steps]));
        if self.aux_depth {
            out.push(("aux.w".into(), vec![1, c]));
            out.push(("aux.b".into(), vec![1]));
        }
        out
    }

    fn head_index(&self) -> usize {
        2 + 4 * self.blocks.len()
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Named weight tensors. Every mutable access bumps an internal version so a
/// forward cache taken before an update cannot be used for backward.
#[derive(Debug)]
pub struct PolicyParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub init_seed: u64,
    version: u64,
}

impl Clone for PolicyParams {
    fn clone(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            init_seed: self.init_seed,
            version: fresh_version(),
        }
    }
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors && self.init_seed == other.init_seed
    }
}

impl PolicyParams {
    pub fn zeros(spec: &PolicySpec) -> Self {
        let shapes = spec.param_shapes();
        Self {
            names: shapes.iter().map(|(n, _)| n.clone()).collect(),
            tensors: shapes.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
            init_seed: 0,
            version: fresh_version(),
        }
    }

    /// He-normal conv weights, small head weights, zero biases.
    pub fn init(spec: &PolicySpec, seed: u64) -> Self {
        let mut p = Self::zeros(spec);
        p.init_seed = seed;
        let mut rng = seeded(seed);
        for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
            if name.ends_with(".b") {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let std = match name.as_str() {
                "head.w" => 0.1 / (fan_in as f64).sqrt(),
                "aux.w" => 1.0 / (fan_in as f64).sqrt(),
                _ => (2.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in t.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    /// Rebuilds parameters from named tensors, checking them against `spec`.
    pub fn from_tensors(spec: &PolicySpec, named: Vec<(String, Tensor)>, init_seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != named.len() {
            return Err(NnError::Shape(format!("expected {} tensors, got {}", shapes.len(), named.len())));
        }
        for ((want_name, want_shape), (name, t)) in shapes.iter().zip(&named) {
            if want_name != name || want_shape.as_slice() != t.shape() {
                return Err(NnError::Shape(format!(
                    "{want_name}: expected shape {want_shape:?}, got {name} {:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            names,
            tensors,
            init_seed,
            version: fresh_version(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.version = fresh_version();
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        self.version = fresh_version();
        Some(&mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    fn t(&self, i: usize) -> &[f64] {
        self.tensors[i].data()
    }
}

struct BlockCache {
    cols1: Vec<f64>,
    hidden: Vec<f64>,
    cols2: Vec<f64>,
    out: Vec<f64>,
}

/// Activations retained by [`forward`] for [`backward`] and Grad-CAM.
pub struct Cache {
    version: u64,
    spec: PolicySpec,
    stem_cols: Vec<f64>,
    stem_out: Vec<f64>,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
}

impl Cache {
    /// Output of the last residual block, `channels × rows × cols`.
    pub fn features(&self) -> &[f64] {
        match self.blocks.last() {
            Some(b) => &b.out,
            None => &self.stem_out,
        }
    }
}

pub struct Forward {
    pub steer: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub cache: Cache,
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu_mask(grad: &mut [f64], out: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Strided, channel-zero-padded identity: `out[c,y,x] += in[c, y·s, x·s]`.
fn skip_add(g1: &ConvGeom, input: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g1.out_h(), g1.out_w());
    for c in 0..g1.c_in {
        for y in 0..oh {
            for x in 0..ow {
                out[(c * oh + y) * ow + x] += input[(c * g1.h + y * g1.stride) * g1.w + x * g1.stride];
            }
        }
    }
}

fn skip_backward(g1: &ConvGeom, dout: &[f64], dinput: &mut [f64]) {
    let (oh, ow) = (g1.out_h(), g1.out_w());
    for c in 0..g1.c_in {
        for y in 0..oh {
            for x in 0..ow {
                dinput[(c * g1.h + y * g1.stride) * g1.w + x * g1.stride] += dout[(c * oh + y) * ow + x];
            }
        }
    }
}

fn check_params(params: &PolicyParams, spec: &PolicySpec) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.tensors.len() {
        return Err(NnError::Shape(format!(
            "spec has {} parameter tensors, params have {}",
            shapes.len(),
            params.tensors.len()
        )));
    }
    for ((name, shape), t) in shapes.iter().zip(&params.tensors) {
        if shape.as_slice() != t.shape() {
            return Err(NnError::Shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
        }
    }
    Ok(())
}

/// Runs the network on one stacked input (`n_frames × height × width`,
/// intensities in [0, 1]).
pub fn forward(params: &PolicyParams, spec: &PolicySpec, frames: &[f64]) -> Result<Forward> {
    check_params(params, spec)?;
    if frames.len() != spec.input_len() {
        return Err(NnError::Shape(format!(
            "stem: input has {} values, expected {}×{}×{}",
            frames.len(),
            spec.n_frames,
            spec.height,
            spec.width
        )));
    }
    let stem = spec.stem_geom();
    let mut stem_cols = Vec::new();
    im2col(&stem, frames, &mut stem_cols);
    let mut stem_out = Vec::new();
    conv_forward(&stem, params.t(0), params.t(1), &stem_cols, &mut stem_out);
    relu(&mut stem_out);

    let mut blocks: Vec<BlockCache> = Vec::with_capacity(spec.blocks.len());
    for (i, (g1, g2)) in spec.block_geoms().iter().enumerate() {
        let input = blocks.last().map_or_else(|| stem_out.clone(), |b| b.out.clone());
        let base = 2 + 4 * i;
        let mut cols1 = Vec::new();
        im2col(g1, &input, &mut cols1);
        let mut hidden = Vec::new();
        conv_forward(g1, params.t(base), params.t(base + 1), &cols1, &mut hidden);
        relu(&mut hidden);
        let mut cols2 = Vec::new();
        im2col(g2, &hidden, &mut cols2);
        let mut out = Vec::new();
        conv_forward(g2, params.t(base + 2), params.t(base + 3), &cols2, &mut out);
        skip_add(g1, &input, &mut out);
        relu(&mut out);
        blocks.push(BlockCache { cols1, hidden, cols2, out });
    }

    let (c, fh, fw) = spec.feature_dims();
    let hw = fh * fw;
    let feat = blocks.last().map_or(&stem_out, |b| &b.out);
    let pooled: Vec<f64> = feat.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    let hi = spec.head_index();
    let (hwt, hb) = (params.t(hi), params.t(hi + 1));
    let steer: Vec<f64> = (0..spec.m_steps)
        .map(|k| hb[k] + hwt[k * c..(k + 1) * c].iter().zip(&pooled).map(|(w, g)| w * g).sum::<f64>())
        .collect();
    let depth = spec.aux_depth.then(|| {
        let (aw, ab) = (params.t(hi + 2), params.t(hi + 3));
        (0..hw)
            .map(|p| ab[0] + (0..c).map(|ch| aw[ch] * feat[ch * hw + p]).sum::<f64>())
            .collect::<Vec<f64>>()
    });

    Ok(Forward {
        steer,
        depth,
        cache: Cache {
            version: params.version(),
            spec: spec.clone(),
            stem_cols,
            stem_out,
            blocks,
            pooled,
        },
    })
}

fn check_cache(params: &PolicyParams, spec: &PolicySpec, cache: &Cache) -> Result<()> {
    if cache.version != params.version() || &cache.spec != spec {
        return Err(NnError::StaleCache);
    }
    Ok(())
}

/// Gradient of `d_steer · steer + d_depth · depth` with respect to the last
/// feature map, plus the head parameter gradients when `grads` is given.
fn head_backward(
    params: &PolicyParams,
    spec: &PolicySpec,
    cache: &Cache,
    d_steer: &[f64],
    d_depth: Option<&[f64]>,
    grads: Option<&mut [Tensor]>,
) -> Vec<f64> {
    let (c, fh, fw) = spec.feature_dims();
    let hw = fh * fw;
    let hi = spec.head_index();
    let feat = cache.features();
    let hwt = params.t(hi);
    let mut d_feat = vec![0.0; c * hw];
    for ch in 0..c {
        let dg: f64 = (0..spec.m_steps).map(|k| hwt[k * c + ch] * d_steer[k]).sum();
        let v = dg / hw as f64;
        d_feat[ch * hw..(ch + 1) * hw].fill(v);
    }
    let d_depth = d_depth.filter(|_| spec.aux_depth);
    if let Some(dd) = d_depth {
        let aw = params.t(hi + 2);
        for ch in 0..c {
            for p in 0..hw {
                d_feat[ch * hw + p] += aw[ch] * dd[p];
            }
        }
    }
    if let Some(grads) = grads {
        let dw = grads[hi].data_mut();
        for k in 0..spec.m_steps {
            for ch in 0..c {
                dw[k * c + ch] += d_steer[k] * cache.pooled[ch];
            }
        }
        for (b, d) in grads[hi + 1].data_mut().iter_mut().zip(d_steer) {
            *b += d;
        }
        if let Some(dd) = d_depth {
            let daw = grads[hi + 2].data_mut();
            for ch in 0..c {
                daw[ch] += (0..hw).map(|p| dd[p] * feat[ch * hw + p]).sum::<f64>();
            }
            grads[hi + 3].data_mut()[0] += dd.iter().sum::<f64>();
        }
    }
    d_feat
}

/// Gradient of a scalar target with respect to the last feature map, where
/// `d_steer` is the target's gradient with respect to the steering outputs.
pub fn feature_gradient(params: &PolicyParams, spec: &PolicySpec, cache: &Cache, d_steer: &[f64]) -> Result<Vec<f64>> {
    check_cache(params, spec, cache)?;
    if d_steer.len() != spec.m_steps {
        return Err(NnError::Shape(format!("head: {} output gradients for {} steps", d_steer.len(), spec.m_steps)));
    }
    Ok(head_backward(params, spec, cache, d_steer, None, None))
}

/// Parameter gradients for output gradients `d_steer` (and `d_depth` when
/// the aux head is enabled), accumulated into `grads`.
pub fn backward_into(
    params: &PolicyParams,
    spec: &PolicySpec,
    cache: &Cache,
    d_steer: &[f64],
    d_depth: Option<&[f64]>,
    grads: &mut [Tensor],
) -> Result<()> {
    check_cache(params, spec, cache)?;
    if d_steer.len() != spec.m_steps {
        return Err(NnError::Shape(format!("head: {} output gradients for {} steps", d_steer.len(), spec.m_steps)));
    }
    if let Some(dd) = d_depth {
        let (gh, gw) = spec.depth_grid();
        if dd.len() != gh * gw {
            return Err(NnError::Shape(format!("aux: {} depth gradients for a {gh}×{gw} grid", dd.len())));
        }
    }
    if grads.len() != params.tensors.len() {
        return Err(NnError::Shape("gradient buffer does not match parameters".into()));
    }
    let mut d_out = head_backward(params, spec, cache, d_steer, d_depth, Some(grads));
    let mut scratch = Vec::new();
    let geoms = spec.block_geoms();
    for (i, (g1, g2)) in geoms.iter().enumerate().rev() {
        let b = &cache.blocks[i];
        let base = 2 + 4 * i;
        relu_mask(&mut d_out, &b.out);
        let mut d_hidden = vec![0.0; g2.in_len()];
        {
            let (lo, hi) = grads.split_at_mut(base + 3);
            conv_backward(g2, params.t(base + 2), &b.cols2, &d_out, lo[base + 2].data_mut(), hi[0].data_mut(), Some(&mut d_hidden), &mut scratch);
        }
        relu_mask(&mut d_hidden, &b.hidden);
        let mut d_in = vec![0.0; g1.in_len()];
        skip_backward(g1, &d_out, &mut d_in);
        {
            let (lo, hi) = grads.split_at_mut(base + 1);
            conv_backward(g1, params.t(base), &b.cols1, &d_hidden, lo[base].data_mut(), hi[0].data_mut(), Some(&mut d_in), &mut scratch);
        }
        d_out = d_in;
    }
    relu_mask(&mut d_out, &cache.stem_out);
    let (lo, hi) = grads.split_at_mut(1);
    conv_backward(&spec.stem_geom(), params.t(0), &cache.stem_cols, &d_out, lo[0].data_mut(), hi[0].data_mut(), None, &mut scratch);
    Ok(())
}

/// Parameter gradients for one forward pass.
pub fn backward(
    params: &PolicyParams,
    spec: &PolicySpec,
    cache: &Cache,
    d_steer: &[f64],
    d_depth: Option<&[f64]>,
) -> Result<Vec<Tensor>> {
    let mut grads = params.zeros_like();
    backward_into(params, spec, cache, d_steer, d_depth, &mut grads)?;
    Ok(grads)
}

/// Random stacked input in [0, 1] for tests and checks.
pub fn random_input(spec: &PolicySpec, rng: &mut impl Rng) -> Vec<f64> {
    (0..spec.input_len()).map(|_| rng.random::<f64>()).collect()
}
