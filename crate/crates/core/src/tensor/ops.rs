use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Variance floor added inside the square root of every normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Value written into masked attention scores before the softmax.
pub const MASK_FILL: f64 = -1e9;

/// `a[..., k] x b[k, n] -> [..., n]`. Leading axes of `a` are treated as rows.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() != 2 || a.last_dim() != b.shape()[0] {
        return Err(Error::dim(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
        ));
    }
    let k = a.last_dim();
    let n = b.shape()[1];
    let rows = a.len() / k;
    let mut out = vec![T::ZERO; rows * n];
    matmul_into(a.data(), b.data(), &mut out, rows, k, n);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

// out[r, j] += a[r, p] * b[p, j], p ascending for every (r, j).
fn matmul_into<T: Element>(a: &[T], b: &[T], out: &mut [T], rows: usize, k: usize, n: usize) {
    for r in 0..rows {
        let acc = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Batched product `a[..., m, k] x b[..., k, n]` with identical leading axes.
pub fn bmm<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] || a.shape()[ra - 1] != b.shape()[rb - 2] {
        return Err(Error::dim(
            "bmm",
            format!("cannot batch-multiply {:?} by {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[ra - 2], a.shape()[ra - 1], b.shape()[rb - 1]);
    let batches = a.len() / (m * k);
    let mut out = vec![T::ZERO; batches * m * n];
    for bi in 0..batches {
        matmul_into(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    let mut shape = a.shape().to_vec();
    shape[ra - 1] = n;
    Tensor::new(shape, out)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "mul", |x, y| x * y)
}

pub fn scale<T: Element>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

fn check_last_axis<T: Element>(op: &'static str, x: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
    if v.rank() != 1 || v.len() != x.last_dim() {
        return Err(Error::dim(
            op,
            format!("vector {:?} does not match last axis of {:?}", v.shape(), x.shape()),
        ));
    }
    Ok(())
}

/// Adds `bias[j]` to every element whose last-axis index is `j`.
pub fn add_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    check_last_axis("add_bias", x, bias)?;
    let n = bias.len();
    let b = bias.data();
    Ok(Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] + b[i % n]))
}

/// Multiplies every element whose last-axis index is `j` by `gain[j]`.
pub fn mul_bias<T: Element>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    check_last_axis("mul_bias", x, gain)?;
    let n = gain.len();
    let g = gain.data();
    Ok(Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] * g[i % n]))
}

fn conv_dims<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<[usize; 7]> {
    if x.rank() != 4 || kernel.rank() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("expected rank-4 input and kernel, got {:?} and {:?}", x.shape(), kernel.shape()),
        ));
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (fh, fw, kc, nf) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    if kc != c {
        return Err(Error::dim(
            "conv2d",
            format!("input {:?} has {c} channels but kernel {:?} expects {kc}", x.shape(), kernel.shape()),
        ));
    }
    if fh % 2 == 0 || fw % 2 == 0 {
        return Err(Error::dim("conv2d", format!("kernel {:?} must have odd spatial size", kernel.shape())));
    }
    Ok([n, h, w, c, fh, fw, nf])
}

/// Stride-1 "same"-padded cross-correlation plus per-filter bias.
///
/// Kernel layout is `[fh, fw, c_in, n_f]`; for each output pixel the receptive
/// field is visited in `(dy, dx, ci)` order and filters accumulate in that order.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c, fh, fw, nf] = conv_dims(x, kernel)?;
    if bias.rank() != 1 || bias.len() != nf {
        return Err(Error::dim("conv2d", format!("bias {:?} must have {nf} entries", bias.shape())));
    }
    let (ph, pw) = (fh / 2, fw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![T::ZERO; n * h * w * nf];
    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                let acc = &mut out[((b * h + oy) * w + ox) * nf..][..nf];
                for dy in 0..fh {
                    let iy = oy + dy;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let iy = iy - ph;
                    for dx in 0..fw {
                        let ix = ox + dx;
                        if ix < pw || ix - pw >= w {
                            continue;
                        }
                        let ix = ix - pw;
                        let xrow = &xd[((b * h + iy) * w + ix) * c..][..c];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            let krow = &kd[((dy * fw + dx) * c + ci) * nf..][..nf];
                            for (o, &kv) in acc.iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    add_bias(&Tensor::new([n, h, w, nf], out)?, bias)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, h, w, c, fh, fw, nf] = conv_dims(x, kernel)?;
    let (ph, pw) = (fh / 2, fw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad.data();
    let mut dx = vec![T::ZERO; x.len()];
    let mut dk = vec![T::ZERO; kernel.len()];
    let mut db = vec![T::ZERO; nf];
    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                let g = &gd[((b * h + oy) * w + ox) * nf..][..nf];
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d += gv;
                }
                for dy in 0..fh {
                    let iy = oy + dy;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let iy = iy - ph;
                    for ddx in 0..fw {
                        let ix = ox + ddx;
                        if ix < pw || ix - pw >= w {
                            continue;
                        }
                        let ix = ix - pw;
                        let xbase = ((b * h + iy) * w + ix) * c;
                        for ci in 0..c {
                            let kbase = ((dy * fw + ddx) * c + ci) * nf;
                            let xv = xd[xbase + ci];
                            let mut acc = T::ZERO;
                            for f in 0..nf {
                                acc += g[f] * kd[kbase + f];
                                dk[kbase + f] += xv * g[f];
                            }
                            dx[xbase + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new([nf], db)?,
    ))
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2d_with_argmax(x).map(|(t, _)| t)
}

/// Max pooling that also reports, per output element, the flat input index
/// that won. Ties go to the first element in row-major order.
pub(crate) fn maxpool2d_with_argmax<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::dim("maxpool2d", format!("expected rank-4 input, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("maxpool2d", format!("spatial dims of {:?} must be even", x.shape())));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_i = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if xd[i] > xd[best_i] {
                            best_i = i;
                        }
                    }
                    out.push(xd[best_i]);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::new([n, oh, ow, c], out)?, arg))
}

/// Mean over the two spatial axes: `[n, h, w, c] -> [n, c]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::dim("global_avg_pool", format!("expected rank-4 input, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![T::ZERO; n * c];
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for p in 0..h * w {
            for (o, &v) in acc.iter_mut().zip(&x.data()[(b * h * w + p) * c..][..c]) {
                *o += v;
            }
        }
        let denom = T::of((h * w) as f64);
        for o in acc.iter_mut() {
            *o /= denom;
        }
    }
    Tensor::new([n, c], out)
}

/// Activation applied at the end of every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Gelu,
    Softmax,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Linear => "linear",
            Self::Relu => "relu",
            Self::Gelu => "gelu",
            Self::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::ONE + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let cdf = T::of(0.5) * (T::ONE + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Linear => x.clone(),
        Activation::Relu => x.map(|v| if v > T::ZERO { v } else { T::ZERO }),
        Activation::Gelu => x.map(gelu_scalar),
        Activation::Softmax => softmax(x),
    }
}

/// Softmax over the last axis, shifted by the row maximum.
pub fn softmax<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Output of a grouped normalization, with the statistics backward needs.
pub(crate) struct Normalized<T> {
    pub out: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each consecutive run of `group` elements to zero mean and unit
/// (population) standard deviation.
pub(crate) fn normalize_groups<T: Element>(x: &Tensor<T>, group: usize, eps: T) -> Normalized<T> {
    debug_assert!(group > 0 && x.len() % group == 0);
    let count = T::of(group as f64);
    let mut out = x.data().to_vec();
    let mut inv_std = Vec::with_capacity(x.len() / group);
    for chunk in out.chunks_mut(group) {
        let mut sum = T::ZERO;
        for &v in chunk.iter() {
            sum += v;
        }
        let mean = sum / count;
        let mut sq = T::ZERO;
        for &v in chunk.iter() {
            let d = v - mean;
            sq += d * d;
        }
        let r = T::ONE / (sq / count + eps).sqrt();
        for v in chunk.iter_mut() {
            *v = (*v - mean) * r;
        }
        inv_std.push(r);
    }
    Normalized { out: Tensor::new(x.shape().to_vec(), out).expect("shape preserved"), inv_std }
}

/// Per-example normalization over every non-batch axis.
pub fn normalize_features<T: Element>(x: &Tensor<T>, eps: T) -> Tensor<T> {
    let group = if x.rank() == 1 { x.len() } else { x.len() / x.shape()[0] };
    normalize_groups(x, group, eps).out
}

/// Normalization over the last axis only (one "example" per token).
pub fn normalize_last_axis<T: Element>(x: &Tensor<T>, eps: T) -> Tensor<T> {
    normalize_groups(x, x.last_dim(), eps).out
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", format!("{perm:?} is not a permutation of {:?}", x.shape())));
    }
    let in_shape = x.shape();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Lower-triangular ones: position `i` may attend to positions `0..=i`.
pub fn causal_mask<T: Element>(len: usize) -> Tensor<T> {
    Tensor::from_fn([len, len], |i| if i % len <= i / len { T::ONE } else { T::ZERO })
}

/// Replaces scores where `mask == 0` by `fill`. `x` is `[..., L, L]`, `mask` is `[L, L]`.
pub fn mask_fill<T: Element>(x: &Tensor<T>, mask: &Tensor<T>, fill: T) -> Result<Tensor<T>> {
    let r = x.rank();
    if mask.rank() != 2 || r < 2 || x.shape()[r - 2..] != *mask.shape() {
        return Err(Error::dim(
            "mask_fill",
            format!("mask {:?} does not match trailing axes of {:?}", mask.shape(), x.shape()),
        ));
    }
    let m = mask.len();
    Ok(Tensor::from_fn(x.shape().to_vec(), |i| {
        if mask.data()[i % m] == T::ZERO {
            fill
        } else {
            x.data()[i]
        }
    }))
}

/// Selects rows of `table[v, d]`: `[ids.len(), d]`.
pub fn gather_rows<T: Element>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(Error::dim("gather_rows", format!("table {:?} must be rank 2", table.shape())));
    }
    if ids.is_empty() {
        return Err(Error::Contract("gather_rows needs at least one index".into()));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::Data(format!("index {id} out of range for {v} rows")));
        }
        out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::new([ids.len(), d], out)
}
