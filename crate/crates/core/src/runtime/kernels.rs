//! Packed kernels. Weights are never expanded: every kernel walks the set
//! bits of its rows and adds the matching input, in the same order as the
//! float path's multiply-accumulate so the two agree exactly.

use crate::binarize::PackedBits;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `z[r, j] = sum over p with bit(p, j) of x[r, p]`, plus bias bit `j`.
pub fn dense(x: &Tensor<f32>, kernel: &PackedBits, bias: &PackedBits) -> Result<Tensor<f32>> {
    let (k, n) = (kernel.shape()[0], kernel.shape()[1]);
    if x.last_dim() != k {
        return Err(Error::dim("packed_dense", format!("input {:?} against kernel {:?}", x.shape(), kernel.shape())));
    }
    let rows = x.len() / k;
    let mut out = vec![0.0f32; rows * n];
    for (xr, acc) in x.data().chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (p, &xv) in xr.iter().enumerate() {
            kernel.for_each_one_in(p * n, (p + 1) * n, |j| acc[j] += xv);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    add_bias_bits(Tensor::new(shape, out)?, bias)
}

/// Rows `ids` of the kernel as 0/1 values, plus the bias bits.
pub fn embedding_rows(ids: &[usize], kernel: &PackedBits, bias: &PackedBits) -> Result<Tensor<f32>> {
    let (rows, n) = (kernel.shape()[0], kernel.shape()[1]);
    if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
        return Err(Error::Data(format!("index {bad} out of range for {rows} rows")));
    }
    let mut out = vec![0.0f32; ids.len() * n];
    for (&id, acc) in ids.iter().zip(out.chunks_exact_mut(n)) {
        kernel.for_each_one_in(id * n, (id + 1) * n, |j| acc[j] = 1.0);
    }
    add_bias_bits(Tensor::new([ids.len(), n], out)?, bias)
}

/// Same-padding, stride-1 cross-correlation with a `[fh, fw, c, nf]` bit kernel.
pub fn conv2d(x: &Tensor<f32>, kernel: &PackedBits, bias: &PackedBits) -> Result<Tensor<f32>> {
    let ks = kernel.shape();
    let (fh, fw, c, nf) = (ks[0], ks[1], ks[2], ks[3]);
    let s = x.shape();
    if s.len() != 4 || s[3] != c {
        return Err(Error::dim("packed_conv2d", format!("input {s:?} against kernel {ks:?}")));
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = (fh / 2, fw / 2);
    let xd = x.data();
    let mut out = vec![0.0f32; n * h * w * nf];
    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                let acc = &mut out[((b * h + oy) * w + ox) * nf..][..nf];
                for dy in 0..fh {
                    let Some(iy) = (oy + dy).checked_sub(ph).filter(|&iy| iy < h) else { continue };
                    for dx in 0..fw {
                        let Some(ix) = (ox + dx).checked_sub(pw).filter(|&ix| ix < w) else { continue };
                        let xrow = &xd[((b * h + iy) * w + ix) * c..][..c];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            let start = ((dy * fw + dx) * c + ci) * nf;
                            kernel.for_each_one_in(start, start + nf, |o| acc[o] += xv);
                        }
                    }
                }
            }
        }
    }
    add_bias_bits(Tensor::new([n, h, w, nf], out)?, bias)
}

fn add_bias_bits(mut z: Tensor<f32>, bias: &PackedBits) -> Result<Tensor<f32>> {
    let n = bias.bit_count();
    if z.last_dim() != n {
        return Err(Error::dim("packed_bias", format!("{n} bias bits for output {:?}", z.shape())));
    }
    for row in z.data_mut().chunks_exact_mut(n) {
        for (j, v) in row.iter_mut().enumerate() {
            *v += if bias.get(j) { 1.0 } else { 0.0 };
        }
    }
    Ok(z)
}
