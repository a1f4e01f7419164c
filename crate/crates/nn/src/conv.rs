//! 3×3 (or 1×1) convolution with zero padding, lowered to GEMM via im2col.

use crate::tensor::{gemm, gemm_at, gemm_bt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    /// Rows of the im2col matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.patch()
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` is inside
/// the image.
fn valid_range(out: usize, input: usize, stride: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if input + pad > kx { ((input + pad - kx - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfolds `x: c_in×h×w` into `cols: patch × (out_h·out_w)`.
pub fn im2col(g: &ConvGeom, x: &[f64], cols: &mut Vec<f64>) {
    let (oh, ow, pad, s) = (g.out_h(), g.out_w(), g.pad(), g.stride);
    let p = oh * ow;
    cols.clear();
    cols.resize(g.patch() * p, 0.0);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (y0, y1) = valid_range(oh, g.h, s, ky, pad);
            for kx in 0..g.k {
                let (x0, x1) = valid_range(ow, g.w, s, kx, pad);
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = oy * s + ky - pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let out = &mut dst[oy * ow + x0..oy * ow + x1];
                    let first = x0 * s + kx - pad;
                    if s == 1 {
                        out.copy_from_slice(&src[first..first + out.len()]);
                    } else {
                        for (o, v) in out.iter_mut().zip(src[first..].iter().step_by(s)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `dx`.
pub fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow, pad, s) = (g.out_h(), g.out_w(), g.pad(), g.stride);
    let p = oh * ow;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (y0, y1) = valid_range(oh, g.h, s, ky, pad);
            for kx in 0..g.k {
                let (x0, x1) = valid_range(ow, g.w, s, kx, pad);
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = oy * s + ky - pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let first = x0 * s + kx - pad;
                    let vals = &src[oy * ow + x0..oy * ow + x1];
                    for (d, v) in dst[first..].iter_mut().step_by(s).zip(vals) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `y = W·cols + b`; `cols` must already hold `im2col(x)`.
pub fn conv_forward(g: &ConvGeom, weight: &[f64], bias: &[f64], cols: &[f64], y: &mut Vec<f64>) {
    let p = g.out_h() * g.out_w();
    y.clear();
    y.resize(g.c_out * p, 0.0);
    for (co, row) in y.chunks_mut(p).enumerate() {
        row.fill(bias[co]);
    }
    gemm(g.c_out, g.patch(), p, weight, cols, y, true);
}

/// Accumulates weight and bias gradients and, if `dx` is given, the input
/// gradient.
pub fn conv_backward(
    g: &ConvGeom,
    weight: &[f64],
    cols: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
    scratch: &mut Vec<f64>,
) {
    let p = g.out_h() * g.out_w();
    gemm_bt(g.c_out, p, g.patch(), dy, cols, dw, true);
    for (co, row) in dy.chunks(p).enumerate() {
        db[co] += row.iter().sum::<f64>();
    }
    if let Some(dx) = dx {
        scratch.clear();
        scratch.resize(g.patch() * p, 0.0);
        gemm_at(g.patch(), g.c_out, p, weight, dy, scratch, false);
        col2im(g, scratch, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let pad = g.pad() as isize;
        let mut y = vec![0.0; g.out_len()];
        for co in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride) as isize + ky as isize - pad;
                                let ix = (ox * g.stride) as isize + kx as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    acc += w[((co * g.c_in + ci) * g.k + ky) * g.k + kx]
                                        * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn vals(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.731 + phase).sin()).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        for (stride, h, w, k) in [(1, 5, 7, 3), (2, 6, 9, 3), (2, 7, 8, 3), (1, 4, 4, 1)] {
            let g = ConvGeom { c_in: 3, c_out: 4, h, w, k, stride };
            let x = vals(g.in_len(), 0.3);
            let wt = vals(g.weight_len(), 1.1);
            let b = vals(4, 2.0);
            let mut cols = Vec::new();
            im2col(&g, &x, &mut cols);
            let mut y = Vec::new();
            conv_forward(&g, &wt, &b, &cols, &mut y);
            let want = direct(&g, &x, &wt, &b);
            assert!(y.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "stride {stride}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom { c_in: 2, c_out: 1, h: 7, w: 6, k: 3, stride: 2 };
        let x = vals(g.in_len(), 0.5);
        let mut cols = Vec::new();
        im2col(&g, &x, &mut cols);
        let c = vals(cols.len(), 1.7);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; g.in_len()];
        col2im(&g, &c, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
