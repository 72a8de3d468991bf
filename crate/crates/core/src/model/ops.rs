//! Forward and backward kernels for the fixed layer vocabulary of the network.
//!
//! Per-sample work runs in parallel; anything reduced across samples (weight
//! and normalization gradients) is summed in sample order so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::tensor::{Real, Tensor};

/// Unfolds one `C x H x W` sample into a `(C*k*k) x (H*W)` matrix for a
/// same-size convolution with zero padding `k / 2`.
fn im2col<S: Real>(x: &[S], c: usize, h: usize, w: usize, k: usize, col: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            S::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
fn col2im<S: Real>(col: &[S], c: usize, h: usize, w: usize, k: usize, dx: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, &g) in src.iter().enumerate() {
                        let sx = x as isize + ddx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Same-size convolution, `weight` laid out `[cout][cin][k][k]`.
pub fn conv_forward<S: Real>(
    x: &Tensor<S>,
    weight: &[S],
    bias: &[S],
    cout: usize,
    k: usize,
) -> Tensor<S> {
    let (cin, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let kk = cin * k * k;
    assert_eq!(weight.len(), cout * kk);
    let mut out = Tensor::zeros(x.n, cout, h, w);
    out.data
        .par_chunks_mut(cout * hw)
        .enumerate()
        .for_each(|(n, o)| {
            for (co, plane) in o.chunks_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            if k == 1 {
                S::gemm(cout, kk, hw, S::one(), weight, false, x.sample(n), false, S::one(), o);
            } else {
                let mut col = vec![S::zero(); kk * hw];
                im2col(x.sample(n), cin, h, w, k, &mut col);
                S::gemm(cout, kk, hw, S::one(), weight, false, &col, false, S::one(), o);
            }
        });
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv_backward<S: Real>(
    x: &Tensor<S>,
    weight: &[S],
    dout: &Tensor<S>,
    k: usize,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let (cin, h, w) = (x.c, x.h, x.w);
    let cout = dout.c;
    let hw = h * w;
    let kk = cin * k * k;
    let per_sample: Vec<(Vec<S>, Vec<S>, Vec<S>)> = (0..x.n)
        .into_par_iter()
        .map(|n| {
            let d = dout.sample(n);
            let mut dw = vec![S::zero(); cout * kk];
            let mut dx = vec![S::zero(); cin * hw];
            let db: Vec<S> = d.chunks(hw).map(|p| p.iter().copied().sum()).collect();
            if k == 1 {
                S::gemm(cout, hw, kk, S::one(), d, false, x.sample(n), true, S::zero(), &mut dw);
                S::gemm(kk, cout, hw, S::one(), weight, true, d, false, S::zero(), &mut dx);
            } else {
                let mut col = vec![S::zero(); kk * hw];
                im2col(x.sample(n), cin, h, w, k, &mut col);
                S::gemm(cout, hw, kk, S::one(), d, false, &col, true, S::zero(), &mut dw);
                S::gemm(kk, cout, hw, S::one(), weight, true, d, false, S::zero(), &mut col);
                col2im(&col, cin, h, w, k, &mut dx);
            }
            (dx, dw, db)
        })
        .collect();

    let mut dx = Tensor::zeros_like(x);
    let mut dw = vec![S::zero(); cout * kk];
    let mut db = vec![S::zero(); cout];
    for (n, (sx, sw, sb)) in per_sample.into_iter().enumerate() {
        dx.data[n * cin * hw..(n + 1) * cin * hw].copy_from_slice(&sx);
        for (a, b) in dw.iter_mut().zip(sw) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(sb) {
            *a += b;
        }
    }
    (dx, dw, db)
}

pub const BN_EPS: f64 = 1e-5;

/// Cached quantities of a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Per-channel statistics over `N x H x W`; the variance is biased.
pub fn batch_stats<S: Real>(x: &Tensor<S>) -> BatchStats<S> {
    let hw = x.plane();
    let count = S::from_usize(x.n * hw).unwrap();
    let eps = S::from_f64_lossy(BN_EPS);
    let mut mean = vec![S::zero(); x.c];
    let mut var = vec![S::zero(); x.c];
    for c in 0..x.c {
        let mut sum = S::zero();
        for n in 0..x.n {
            sum += x.data[(n * x.c + c) * hw..][..hw].iter().copied().sum::<S>();
        }
        let m = sum / count;
        let mut sq = S::zero();
        for n in 0..x.n {
            sq += x.data[(n * x.c + c) * hw..][..hw]
                .iter()
                .map(|&v| (v - m) * (v - m))
                .sum::<S>();
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    let inv_std = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    BatchStats { mean, var, inv_std }
}

/// `y = gamma * (x - mean) * inv_std + beta` per channel.
pub fn normalize<S: Real>(
    x: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    beta: &[S],
) -> Tensor<S> {
    let hw = x.plane();
    let mut out = Tensor::zeros_like(x);
    for (i, (o, &v)) in out.data.iter_mut().zip(&x.data).enumerate() {
        let c = (i / hw) % x.c;
        *o = gamma[c] * (v - mean[c]) * inv_std[c] + beta[c];
    }
    out
}

/// Backward of a training-mode normalization. Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<S: Real>(
    x: &Tensor<S>,
    stats: &BatchStats<S>,
    gamma: &[S],
    dy: &Tensor<S>,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let hw = x.plane();
    let m = S::from_usize(x.n * hw).unwrap();
    let mut dgamma = vec![S::zero(); x.c];
    let mut dbeta = vec![S::zero(); x.c];
    for n in 0..x.n {
        for c in 0..x.c {
            let off = (n * x.c + c) * hw;
            for i in off..off + hw {
                let xhat = (x.data[i] - stats.mean[c]) * stats.inv_std[c];
                dgamma[c] += dy.data[i] * xhat;
                dbeta[c] += dy.data[i];
            }
        }
    }
    let mut dx = Tensor::zeros_like(x);
    for n in 0..x.n {
        for c in 0..x.c {
            let off = (n * x.c + c) * hw;
            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
            let k = gamma[c] * stats.inv_std[c] / m;
            for i in off..off + hw {
                let xhat = (x.data[i] - stats.mean[c]) * stats.inv_std[c];
                dx.data[i] = k * (m * dy.data[i] - dbeta[c] - xhat * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward of an inference-mode (frozen statistics) normalization.
pub fn frozen_norm_backward<S: Real>(
    x: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    dy: &Tensor<S>,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let hw = x.plane();
    let mut dx = Tensor::zeros_like(x);
    let mut dgamma = vec![S::zero(); x.c];
    let mut dbeta = vec![S::zero(); x.c];
    for (i, (d, &g)) in dx.data.iter_mut().zip(&dy.data).enumerate() {
        let c = (i / hw) % x.c;
        *d = g * gamma[c] * inv_std[c];
        dgamma[c] += g * (x.data[i] - mean[c]) * inv_std[c];
        dbeta[c] += g;
    }
    (dx, dgamma, dbeta)
}

pub fn leaky_relu<S: Real>(x: &Tensor<S>, slope: S) -> Tensor<S> {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < S::zero() {
            *v *= slope;
        }
    }
    out
}

pub fn leaky_relu_backward<S: Real>(x: &Tensor<S>, slope: S, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v < S::zero() {
            *d *= slope;
        }
    }
    dx
}

/// 2x2 max pooling with stride 2; returns the output and the flat input
/// index of each maximum (first maximum on ties).
pub fn max_pool<S: Real>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.n, x.c, h2, w2);
    let mut arg = vec![0u32; out.data.len()];
    for nc in 0..x.n * x.c {
        let base = nc * x.h * x.w;
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = base + 2 * y * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                let o = (nc * h2 + y) * w2 + xx;
                out.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<S: Real>(input: &Tensor<S>, arg: &[u32], dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros_like(input);
    for (&a, &g) in arg.iter().zip(&dy.data) {
        dx.data[a as usize] += g;
    }
    dx
}

/// Source taps for 2x bilinear upsampling along one axis (half-pixel
/// centres, edge clamped): output `o` reads `w0 * x[i0] + w1 * x[i1]`.
fn upsample_taps(n: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            if src <= 0.0 {
                (0, 1.0, 0, 0.0)
            } else if src >= (n - 1) as f64 {
                (n - 1, 1.0, n - 1, 0.0)
            } else {
                let i0 = src.floor() as usize;
                let f = src - i0 as f64;
                (i0, 1.0 - f, i0 + 1, f)
            }
        })
        .collect()
}

pub fn upsample<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let ty = upsample_taps(x.h);
    let tx = upsample_taps(x.w);
    let mut out = Tensor::zeros(x.n, x.c, h2, w2);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * x.h * x.w..][..x.h * x.w];
        let dst = &mut out.data[nc * h2 * w2..][..h2 * w2];
        for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (S::from_f64_lossy(wy0), S::from_f64_lossy(wy1));
            for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (S::from_f64_lossy(wx0), S::from_f64_lossy(wx1));
                let r0 = wx0 * src[y0 * x.w + x0] + wx1 * src[y0 * x.w + x1];
                let r1 = wx0 * src[y1 * x.w + x0] + wx1 * src[y1 * x.w + x1];
                dst[oy * w2 + ox] = wy0 * r0 + wy1 * r1;
            }
        }
    }
    out
}

pub fn upsample_backward<S: Real>(input: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let (h2, w2) = (dy.h, dy.w);
    let ty = upsample_taps(input.h);
    let tx = upsample_taps(input.w);
    let mut dx = Tensor::zeros_like(input);
    for nc in 0..input.n * input.c {
        let g = &dy.data[nc * h2 * w2..][..h2 * w2];
        let dst = &mut dx.data[nc * input.h * input.w..][..input.h * input.w];
        for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (S::from_f64_lossy(wy0), S::from_f64_lossy(wy1));
            for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (S::from_f64_lossy(wx0), S::from_f64_lossy(wx1));
                let v = g[oy * w2 + ox];
                dst[y0 * input.w + x0] += v * wy0 * wx0;
                dst[y0 * input.w + x1] += v * wy0 * wx1;
                dst[y1 * input.w + x0] += v * wy1 * wx0;
                dst[y1 * input.w + x1] += v * wy1 * wx1;
            }
        }
    }
    dx
}

pub fn concat<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w));
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (la, lb) = (a.sample_len(), b.sample_len());
    for n in 0..a.n {
        let dst = &mut out.data[n * (la + lb)..(n + 1) * (la + lb)];
        dst[..la].copy_from_slice(a.sample(n));
        dst[la..].copy_from_slice(b.sample(n));
    }
    out
}

/// Splits a channel-concatenated gradient into the parts for `a` and `b`.
pub fn concat_backward<S: Real>(ca: usize, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let cb = dy.c - ca;
    let hw = dy.plane();
    let mut da = Tensor::zeros(dy.n, ca, dy.h, dy.w);
    let mut db = Tensor::zeros(dy.n, cb, dy.h, dy.w);
    for n in 0..dy.n {
        let src = dy.sample(n);
        da.data[n * ca * hw..(n + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
        db.data[n * cb * hw..(n + 1) * cb * hw].copy_from_slice(&src[ca * hw..]);
    }
    (da, db)
}

/// Channel softmax at every pixel, computed with the max subtracted.
pub fn softmax<S: Real>(logits: &Tensor<S>) -> Tensor<S> {
    let hw = logits.plane();
    let c = logits.c;
    let mut out = Tensor::zeros_like(logits);
    for n in 0..logits.n {
        let src = logits.sample(n);
        let dst = &mut out.data[n * c * hw..(n + 1) * c * hw];
        for i in 0..hw {
            let mut max = src[i];
            for ch in 1..c {
                max = max.max(src[ch * hw + i]);
            }
            let mut sum = S::zero();
            for ch in 0..c {
                let e = (src[ch * hw + i] - max).exp();
                dst[ch * hw + i] = e;
                sum += e;
            }
            for ch in 0..c {
                dst[ch * hw + i] = dst[ch * hw + i] / sum;
            }
        }
    }
    out
}
