//! Forward and backward kernels on raw row-major buffers.
//!
//! Convolution lowers to im2col + GEMM. All reductions run in a fixed order so
//! repeated calls on identical inputs are bit-identical.

use super::{gemm, MatRef, Scalar};
use crate::error::{Error, Result};

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [batch, in_channels, height, width] = match *input {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::dim("conv2d", format!("input must be NCHW, got {input:?}"))),
        };
        let [out_channels, w_in, kh, kw] = match *weight {
            [o, i, kh, kw] => [o, i, kh, kw],
            _ => return Err(Error::dim("conv2d", format!("weight must be OIKK, got {weight:?}"))),
        };
        if kh != kw {
            return Err(Error::dim("conv2d", format!("kernel axes differ: {kh}x{kw}")));
        }
        if w_in != in_channels {
            return Err(Error::dim(
                "conv2d",
                format!("input channel axis (1) is {in_channels} but weight input axis (1) is {w_in}"),
            ));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let kernel = kh;
        if height + 2 * padding < kernel || width + 2 * padding < kernel {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "spatial axes (2,3) of {height}x{width} with padding {padding} admit no {kernel}x{kernel} placement"
                ),
            ));
        }
        Ok(ConvGeom {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    /// 1×1, stride 1, unpadded: the input already is its own column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_sample(&self) -> usize {
        self.out_channels * self.col_cols()
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.col_cols();
    for c in 0..g.in_channels {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_height {
                    let ih = (oh * s) as isize + ki as isize - p;
                    let line = &mut dst[oh * g.out_width..(oh + 1) * g.out_width];
                    if ih < 0 || ih >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * s) as isize + kj as isize - p;
                        *v = if iw < 0 || iw >= g.width as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.col_cols();
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_height {
                    let ih = (oh * s) as isize + ki as isize - p;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let line = &mut dxc[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for ow in 0..g.out_width {
                        let iw = (ow * s) as isize + kj as isize - p;
                        if iw >= 0 && iw < g.width as isize {
                            line[iw as usize] = line[iw as usize] + src[oh * g.out_width + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and, for non-pointwise kernels, the column buffers of
/// every sample (reused by the backward pass).
pub fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> (Vec<T>, Option<Vec<T>>) {
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    let col_len = g.col_rows() * g.col_cols();
    let mut cols = (!g.is_pointwise()).then(|| vec![T::zero(); g.batch * col_len]);
    let w = MatRef::new(weight, g.out_channels, g.col_rows());
    for n in 0..g.batch {
        let xn = &x[n * g.in_sample()..(n + 1) * g.in_sample()];
        let cn: &[T] = match cols.as_mut() {
            Some(buf) => {
                let cn = &mut buf[n * col_len..(n + 1) * col_len];
                im2col(xn, g, cn);
                cn
            }
            None => xn,
        };
        let on = &mut out[n * g.out_sample()..(n + 1) * g.out_sample()];
        gemm(w, MatRef::new(cn, g.col_rows(), g.col_cols()), T::zero(), on);
        if let Some(b) = bias {
            for (o, row) in on.chunks_mut(g.col_cols()).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + b[o]);
            }
        }
    }
    (out, cols)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    cols: Option<&[T]>,
    weight: &[T],
    g: &ConvGeom,
    need_input: bool,
) -> ConvGrads<T> {
    let col_len = g.col_rows() * g.col_cols();
    let mut dw = vec![T::zero(); g.out_channels * g.col_rows()];
    let mut db = vec![T::zero(); g.out_channels];
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut dcols = vec![T::zero(); if need_input { col_len } else { 0 }];
    for n in 0..g.batch {
        let dyn_ = &dy[n * g.out_sample()..(n + 1) * g.out_sample()];
        let cn = match cols {
            Some(c) => &c[n * col_len..(n + 1) * col_len],
            None => &x[n * g.in_sample()..(n + 1) * g.in_sample()],
        };
        gemm(
            MatRef::new(dyn_, g.out_channels, g.col_cols()),
            MatRef::t(cn, g.col_rows(), g.col_cols()),
            T::one(),
            &mut dw,
        );
        for (o, row) in dyn_.chunks(g.col_cols()).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.in_sample()..(n + 1) * g.in_sample()];
            let wt = MatRef::t(weight, g.out_channels, g.col_rows());
            let dyv = MatRef::new(dyn_, g.out_channels, g.col_cols());
            if g.is_pointwise() {
                gemm(wt, dyv, T::zero(), dxn);
            } else {
                gemm(wt, dyv, T::zero(), &mut dcols);
                col2im(&dcols, g, dxn);
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

/// Per-channel statistics and normalized activations of a batch-norm pass.
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
}

fn channel_planes(dims: [usize; 4]) -> (usize, usize, usize) {
    let [n, c, h, w] = dims;
    (n, c, h * w)
}

/// Batch-statistics normalization. Returns output and cache.
pub fn batchnorm_train<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let (n, c, hw) = channel_planes(dims);
    let count = T::from_usize(n * hw).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                sq = sq + (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, normalized) = normalize(x, dims, gamma, beta, &mean, &inv_std);
    (y, NormCache { normalized, inv_std, mean, var })
}

/// Normalization with fixed running statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, normalized) = normalize(x, dims, gamma, beta, running_mean, &inv_std);
    (y, NormCache { normalized, inv_std, mean: running_mean.to_vec(), var: running_var.to_vec() })
}

fn normalize<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> (Vec<T>, Vec<T>) {
    let (n, c, hw) = channel_planes(dims);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let (m, is, ga, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for ((yv, hv), &xv) in y[range.clone()].iter_mut().zip(&mut xhat[range.clone()]).zip(&x[range]) {
                *hv = (xv - m) * is;
                *yv = ga * *hv + be;
            }
        }
    }
    (y, xhat)
}

pub struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward of batch normalization. `batch_stats` selects whether the batch
/// statistics themselves depend on the input (train mode).
pub fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    dims: [usize; 4],
    gamma: &[T],
    cache: &NormCache<T>,
    batch_stats: bool,
) -> NormGrads<T> {
    let (n, c, hw) = channel_planes(dims);
    let count = T::from_usize(n * hw).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (&d, &h) in dy[range.clone()].iter().zip(&cache.normalized[range]) {
                dbeta[ch] = dbeta[ch] + d;
                dgamma[ch] = dgamma[ch] + d * h;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let scale = gamma[ch] * cache.inv_std[ch];
            for ((o, &d), &h) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&cache.normalized[range]) {
                *o = if batch_stats { scale * (d - dbeta[ch] / count - h * dgamma[ch] / count) } else { scale * d };
            }
        }
    }
    NormGrads { input: dx, gamma: dgamma, beta: dbeta }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward<T: Scalar>(dy: &[T], x: &[T]) -> Vec<T> {
    dy.iter()
        .zip(x)
        .map(|(&d, &v)| {
            let s = sigmoid(v);
            d * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

/// Non-overlapping max pooling; returns output and flat argmax indices.
pub fn max_pool_forward<T: Scalar>(x: &[T], dims: [usize; 4], window: usize) -> (Vec<T>, Vec<usize>) {
    let [n, c, h, w] = dims;
    let (ho, wo) = (h / window, w / window);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * window * w + ow * window;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oh * window + i) * w + ow * window + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn global_avg_pool_forward<T: Scalar>(x: &[T], dims: [usize; 4]) -> Vec<T> {
    let [_, _, h, w] = dims;
    let area = T::from_usize(h * w).unwrap();
    x.chunks(h * w).map(|plane| plane.iter().copied().sum::<T>() / area).collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], dims: [usize; 4]) -> Vec<T> {
    let [_, _, h, w] = dims;
    let area = T::from_usize(h * w).unwrap();
    dy.iter().flat_map(|&d| std::iter::repeat_n(d / area, h * w)).collect()
}

/// `x (b×f) · w (f×u) + bias`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], batch: usize, fan_in: usize, units: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * units);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    gemm(MatRef::new(x, batch, fan_in), MatRef::new(w, fan_in, units), T::one(), &mut out);
    out
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    fan_in: usize,
    units: usize,
) -> LinearGrads<T> {
    let mut dx = vec![T::zero(); batch * fan_in];
    gemm(MatRef::new(dy, batch, units), MatRef::t(w, fan_in, units), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); fan_in * units];
    gemm(MatRef::t(x, batch, fan_in), MatRef::new(dy, batch, units), T::zero(), &mut dw);
    let mut db = vec![T::zero(); units];
    for row in dy.chunks(units) {
        for (b, &d) in db.iter_mut().zip(row) {
            *b = *b + d;
        }
    }
    LinearGrads { input: dx, weight: dw, bias: db }
}

/// Row-wise softmax via the max-shifted exponential.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &z in row {
            let e = (z - m).exp();
            total = total + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|p| *p = *p / total);
    }
    out
}

/// Index of the hot entry of every row; rejects rows that are not one-hot.
pub fn one_hot_rows<T: Scalar>(targets: &[T], classes: usize) -> Result<Vec<usize>> {
    targets
        .chunks(classes)
        .enumerate()
        .map(|(r, row)| {
            let mut hot = None;
            for (i, &v) in row.iter().enumerate() {
                if v == T::one() && hot.is_none() {
                    hot = Some(i);
                } else if v != T::zero() {
                    return Err(Error::Validation(format!("target row {r} is not one-hot")));
                }
            }
            hot.ok_or_else(|| Error::Validation(format!("target row {r} is not one-hot")))
        })
        .collect()
}

/// Mean cross-entropy over the batch using the log-sum-exp form.
/// Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy_forward<T: Scalar>(logits: &[T], hot: &[usize], classes: usize) -> (T, Vec<T>) {
    let mut total = T::zero();
    for (row, &t) in logits.chunks(classes).zip(hot) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
        total = total + (lse - row[t]);
    }
    let batch = T::from_usize(hot.len()).unwrap();
    (total / batch, softmax_rows(logits, classes))
}
