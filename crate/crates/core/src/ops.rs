//! Forward/backward kernels for the layers used by the detector.
//!
//! All kernels are pure functions of their inputs so the same code serves the
//! tape-based training path, teacher inference and the finite-difference
//! harness.

use crate::tensor::{Scalar, Tensor};

/// im2col over a `[N, H, W, IC]` input for a `KHxKW` kernel.
///
/// Produces a `[N*OH*OW, KH*KW*IC]` matrix whose column order matches a
/// `[KH, KW, IC, OC]` weight layout flattened to `[KH*KW*IC, OC]`.
pub fn im2col<T: Scalar>(
    x: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, usize, usize) {
    let (n, h, w, ic) = dims4(x);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let ck = kh * kw * ic;
    let mut cols = vec![T::zero(); n * oh * ow * ck];
    let xd = x.data();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * ck;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * ic;
                        let dst = row + (ky * kw + kx) * ic;
                        cols[dst..dst + ic].copy_from_slice(&xd[src..src + ic]);
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(&[n * oh * ow, ck], cols).expect("im2col shape"),
        oh,
        ow,
    )
}

/// Scatter of an im2col-shaped gradient back onto the input.
fn col2im<T: Scalar>(
    dcols: &[T],
    x_shape: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor<T> {
    let (n, h, w, ic) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let ck = kh * kw * ic;
    let mut dx = Tensor::zeros(x_shape);
    let dxd = dx.data_mut();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * ck;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * ic;
                        let src = row + (ky * kw + kx) * ic;
                        for c in 0..ic {
                            dxd[dst + c] += dcols[src + c];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution forward. `x: [N,H,W,IC]`, `w: [KH,KW,IC,OC]`, `b: [OC]`.
/// Returns the output and the im2col matrix (reused by the backward pass).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>) {
    let (n, _, _, _) = dims4(x);
    let (kh, kw, _ic, oc) = dims4(w);
    let (cols, oh, ow) = im2col(x, kh, kw, stride, pad);
    let rows = cols.shape()[0];
    let ck = cols.shape()[1];
    let mut y = vec![T::zero(); rows * oc];
    T::gemm(rows, ck, oc, T::one(), cols.data(), false, w.data(), false, T::zero(), &mut y);
    let bd = b.data();
    for r in 0..rows {
        for c in 0..oc {
            y[r * oc + c] += bd[c];
        }
    }
    (
        Tensor::from_vec(&[n, oh, ow, oc], y).expect("conv output shape"),
        cols,
    )
}

/// Convolution backward. Returns `(dx, dw, db)`; `dx` is skipped when
/// `need_dx` is false (first layer fed by constant images).
pub fn conv2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    cols: &Tensor<T>,
    x_shape: &[usize],
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (kh, kw, _ic, oc) = dims4(w);
    let oh = dy.shape()[1];
    let ow = dy.shape()[2];
    let rows = cols.shape()[0];
    let ck = cols.shape()[1];

    let mut dw = vec![T::zero(); ck * oc];
    T::gemm(ck, rows, oc, T::one(), cols.data(), true, dy.data(), false, T::zero(), &mut dw);

    let mut db = vec![T::zero(); oc];
    for r in 0..rows {
        for c in 0..oc {
            db[c] += dy.data()[r * oc + c];
        }
    }

    let dx = if need_dx {
        let mut dcols = vec![T::zero(); rows * ck];
        T::gemm(rows, oc, ck, T::one(), dy.data(), false, w.data(), true, T::zero(), &mut dcols);
        Some(col2im(&dcols, x_shape, kh, kw, stride, pad, oh, ow))
    } else {
        None
    };

    (
        dx,
        Tensor::from_vec(w.shape(), dw).expect("dw shape"),
        Tensor::from_vec(&[oc], db).expect("db shape"),
    )
}

/// Fully connected layer over the trailing axis. `x: [.., IN]`, `w: [IN, OUT]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let d_in = w.shape()[0];
    let d_out = w.shape()[1];
    assert_eq!(x.last_dim(), d_in, "dense input width");
    let rows = x.len() / d_in;
    let mut y = vec![T::zero(); rows * d_out];
    T::gemm(rows, d_in, d_out, T::one(), x.data(), false, w.data(), false, T::zero(), &mut y);
    let bd = b.data();
    for r in 0..rows {
        for c in 0..d_out {
            y[r * d_out + c] += bd[c];
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::from_vec(&shape, y).expect("dense output shape")
}

pub fn dense_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let d_in = w.shape()[0];
    let d_out = w.shape()[1];
    let rows = x.len() / d_in;

    let mut dw = vec![T::zero(); d_in * d_out];
    T::gemm(d_in, rows, d_out, T::one(), x.data(), true, dy.data(), false, T::zero(), &mut dw);

    let mut db = vec![T::zero(); d_out];
    for r in 0..rows {
        for c in 0..d_out {
            db[c] += dy.data()[r * d_out + c];
        }
    }

    let dx = if need_dx {
        let mut dxv = vec![T::zero(); rows * d_in];
        T::gemm(rows, d_out, d_in, T::one(), dy.data(), false, w.data(), true, T::zero(), &mut dxv);
        Some(Tensor::from_vec(x.shape(), dxv).expect("dx shape"))
    } else {
        None
    };

    (
        dx,
        Tensor::from_vec(w.shape(), dw).expect("dw shape"),
        Tensor::from_vec(&[d_out], db).expect("db shape"),
    )
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU backward from the forward *output* (y > 0 iff x > 0).
pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data().iter()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Per-channel batch statistics and normalized output.
pub struct BnTrainOut<T> {
    pub y: Tensor<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch-norm training forward over the trailing (channel) axis; statistics
/// reduce over every leading axis.
pub fn batchnorm_train_forward<T: Scalar>(
    x: &Tensor<T>,
    alpha: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> BnTrainOut<T> {
    let c = x.last_dim();
    let m = x.len() / c;
    let inv_m = T::one() / T::from_f64(m as f64);
    let xd = x.data();

    let mut mean = vec![T::zero(); c];
    for r in 0..m {
        for ch in 0..c {
            mean[ch] += xd[r * c + ch];
        }
    }
    for v in mean.iter_mut() {
        *v *= inv_m;
    }

    let mut var = vec![T::zero(); c];
    for r in 0..m {
        for ch in 0..c {
            let d = xd[r * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_m;
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); m * c];
    let mut y = vec![T::zero(); m * c];
    let (al, be) = (alpha.data(), beta.data());
    for r in 0..m {
        for ch in 0..c {
            let h = (xd[r * c + ch] - mean[ch]) * inv_std[ch];
            xhat[r * c + ch] = h;
            y[r * c + ch] = al[ch] * h + be[ch];
        }
    }

    BnTrainOut {
        y: Tensor::from_vec(x.shape(), y).expect("bn y shape"),
        mean,
        var,
        xhat: Tensor::from_vec(x.shape(), xhat).expect("bn xhat shape"),
        inv_std,
    }
}

/// Batch-norm backward (training mode, batch statistics on the tape).
pub fn batchnorm_train_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    alpha: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = dy.last_dim();
    let m = dy.len() / c;
    let inv_m = T::one() / T::from_f64(m as f64);
    let dyd = dy.data();
    let xh = xhat.data();
    let al = alpha.data();

    let mut dalpha = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut sum_dxhat = vec![T::zero(); c];
    let mut sum_dxhat_xhat = vec![T::zero(); c];
    for r in 0..m {
        for ch in 0..c {
            let g = dyd[r * c + ch];
            dbeta[ch] += g;
            dalpha[ch] += g * xh[r * c + ch];
            let dxh = g * al[ch];
            sum_dxhat[ch] += dxh;
            sum_dxhat_xhat[ch] += dxh * xh[r * c + ch];
        }
    }

    let mut dx = vec![T::zero(); m * c];
    for r in 0..m {
        for ch in 0..c {
            let dxh = dyd[r * c + ch] * al[ch];
            dx[r * c + ch] = inv_std[ch]
                * (dxh - inv_m * (sum_dxhat[ch] + xh[r * c + ch] * sum_dxhat_xhat[ch]));
        }
    }

    (
        Tensor::from_vec(dy.shape(), dx).expect("bn dx shape"),
        Tensor::from_vec(&[c], dalpha).expect("bn dalpha shape"),
        Tensor::from_vec(&[c], dbeta).expect("bn dbeta shape"),
    )
}

/// Batch-norm inference forward with fixed statistics.
pub fn batchnorm_infer_forward<T: Scalar>(
    x: &Tensor<T>,
    mean: &[T],
    var: &[T],
    alpha: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let c = x.last_dim();
    let m = x.len() / c;
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); m * c];
    let (al, be) = (alpha.data(), beta.data());
    let xd = x.data();
    for r in 0..m {
        for ch in 0..c {
            y[r * c + ch] = al[ch] * (xd[r * c + ch] - mean[ch]) * inv_std[ch] + be[ch];
        }
    }
    Tensor::from_vec(x.shape(), y).expect("bn infer shape")
}

/// A box to crop from one image of a batched feature map; coordinates are in
/// input-image pixels.
#[derive(Clone, Debug)]
pub struct RoiWindow {
    pub image_index: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// One interpolation axis tap: feature coordinate = pixel/stride - 0.5 with
/// border clamping.
fn tap(p: f64, stride: f64, limit: usize) -> Tap {
    let f = p / stride - 0.5;
    let lo = f.floor();
    let frac = f - lo;
    let clamp = |v: isize| -> usize { v.clamp(0, limit as isize - 1) as usize };
    Tap { lo: clamp(lo as isize), hi: clamp(lo as isize + 1), frac }
}

/// Bilinear crop of `grid x grid` interior sample points per box.
/// `feat: [N, Hf, Wf, C]` -> `[B, grid, grid, C]`.
pub fn roi_bilinear_forward<T: Scalar>(
    feat: &Tensor<T>,
    rois: &[RoiWindow],
    grid: usize,
    stride: f64,
) -> Tensor<T> {
    let (_n, hf, wf, c) = dims4(feat);
    let fd = feat.data();
    let mut out = vec![T::zero(); rois.len() * grid * grid * c];
    for (bi, roi) in rois.iter().enumerate() {
        let bw = roi.x2 - roi.x1;
        let bh = roi.y2 - roi.y1;
        for gy in 0..grid {
            let py = roi.y1 + (gy as f64 + 0.5) * bh / grid as f64;
            let ty = tap(py, stride, hf);
            for gx in 0..grid {
                let px = roi.x1 + (gx as f64 + 0.5) * bw / grid as f64;
                let tx = tap(px, stride, wf);
                let dst = ((bi * grid + gy) * grid + gx) * c;
                let base = roi.image_index * hf * wf;
                let w00 = T::from_f64((1.0 - ty.frac) * (1.0 - tx.frac));
                let w01 = T::from_f64((1.0 - ty.frac) * tx.frac);
                let w10 = T::from_f64(ty.frac * (1.0 - tx.frac));
                let w11 = T::from_f64(ty.frac * tx.frac);
                let i00 = (base + ty.lo * wf + tx.lo) * c;
                let i01 = (base + ty.lo * wf + tx.hi) * c;
                let i10 = (base + ty.hi * wf + tx.lo) * c;
                let i11 = (base + ty.hi * wf + tx.hi) * c;
                for ch in 0..c {
                    out[dst + ch] = w00 * fd[i00 + ch]
                        + w01 * fd[i01 + ch]
                        + w10 * fd[i10 + ch]
                        + w11 * fd[i11 + ch];
                }
            }
        }
    }
    Tensor::from_vec(&[rois.len(), grid, grid, c], out).expect("roi crop shape")
}

/// Scatter of crop gradients back onto the feature map.
pub fn roi_bilinear_backward<T: Scalar>(
    dcrops: &Tensor<T>,
    feat_shape: &[usize],
    rois: &[RoiWindow],
    grid: usize,
    stride: f64,
) -> Tensor<T> {
    let (hf, wf, c) = (feat_shape[1], feat_shape[2], feat_shape[3]);
    let mut dfeat = Tensor::zeros(feat_shape);
    let dfd = dfeat.data_mut();
    let dcd = dcrops.data();
    for (bi, roi) in rois.iter().enumerate() {
        let bw = roi.x2 - roi.x1;
        let bh = roi.y2 - roi.y1;
        for gy in 0..grid {
            let py = roi.y1 + (gy as f64 + 0.5) * bh / grid as f64;
            let ty = tap(py, stride, hf);
            for gx in 0..grid {
                let px = roi.x1 + (gx as f64 + 0.5) * bw / grid as f64;
                let tx = tap(px, stride, wf);
                let src = ((bi * grid + gy) * grid + gx) * c;
                let base = roi.image_index * hf * wf;
                let w00 = T::from_f64((1.0 - ty.frac) * (1.0 - tx.frac));
                let w01 = T::from_f64((1.0 - ty.frac) * tx.frac);
                let w10 = T::from_f64(ty.frac * (1.0 - tx.frac));
                let w11 = T::from_f64(ty.frac * tx.frac);
                let i00 = (base + ty.lo * wf + tx.lo) * c;
                let i01 = (base + ty.lo * wf + tx.hi) * c;
                let i10 = (base + ty.hi * wf + tx.lo) * c;
                let i11 = (base + ty.hi * wf + tx.hi) * c;
                for ch in 0..c {
                    let g = dcd[src + ch];
                    dfd[i00 + ch] += w00 * g;
                    dfd[i01 + ch] += w01 * g;
                    dfd[i10 + ch] += w10 * g;
                    dfd[i11 + ch] += w11 * g;
                }
            }
        }
    }
    dfeat
}

/// Row-wise softmax over the trailing axis.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim();
    let m = x.len() / c;
    let mut out = vec![T::zero(); m * c];
    let xd = x.data();
    for r in 0..m {
        let row = &xd[r * c..(r + 1) * c];
        let mx = row.iter().cloned().fold(row[0], T::max);
        let mut sum = T::zero();
        for ch in 0..c {
            let e = (row[ch] - mx).exp();
            out[r * c + ch] = e;
            sum += e;
        }
        for ch in 0..c {
            out[r * c + ch] /= sum;
        }
    }
    Tensor::from_vec(x.shape(), out).expect("softmax shape")
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn dims4<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "expected a 4-axis tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}
