//! Mean-threshold quantization and the 1-bit packing codec.
//!
//! A parameter becomes `1` iff it is strictly greater than the mean of its own
//! tensor. Kernel and bias are thresholded separately. Packed bits use the
//! row-major flat index of the logical tensor, LSB-first within little-endian
//! 64-bit words; the model file format depends on this layout.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Threshold of [`quantize`]: the arithmetic mean, accumulated in `f64`.
pub fn threshold<T: Element>(values: &[T]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("cannot quantize an empty parameter tensor".into()));
    }
    let mut sum = 0.0f64;
    for v in values {
        sum += v.as_f64();
    }
    Ok(sum / values.len() as f64)
}

/// Binarizes a slice: `1` where `p > mean(p)`, else `0` (ties go to `0`).
pub fn quantize_slice<T: Element>(values: &[T]) -> Result<Vec<T>> {
    let mean = threshold(values)?;
    Ok(values
        .iter()
        .map(|v| if v.as_f64() > mean { T::ONE } else { T::ZERO })
        .collect())
}

pub fn quantize<T: Element>(p: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::new(p.shape().to_vec(), quantize_slice(p.data())?)
}

/// Quantized forward value with an identity backward into `p`.
pub fn quantize_ste<T: Element>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    let q = quantize(tape.value(p))?;
    tape.ste_passthrough(p, q)
}

/// 1-bit tensor packed into 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBits {
    shape: Vec<usize>,
    words: Vec<u64>,
    bit_count: usize,
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl PackedBits {
    /// Wraps raw words, checking length and that padding bits are clear.
    pub fn from_words(shape: Vec<usize>, words: Vec<u64>) -> Result<Self> {
        let bit_count: usize = shape.iter().product();
        if shape.is_empty() || bit_count == 0 {
            return Err(Error::format(0, format!("invalid packed shape {shape:?}")));
        }
        if words.len() != words_for(bit_count) {
            return Err(Error::format(
                0,
                format!("{} words cannot hold {bit_count} bits", words.len()),
            ));
        }
        let tail = bit_count % 64;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return Err(Error::format(0, "nonzero padding bits past the end of the tensor"));
        }
        Ok(Self { shape, words, bit_count })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.bit_count);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Calls `f(i - start)` for every set bit `i` in `start..end`, ascending.
    #[inline]
    pub fn for_each_one_in(&self, start: usize, end: usize, mut f: impl FnMut(usize)) {
        debug_assert!(start <= end && end <= self.bit_count);
        if start == end {
            return;
        }
        let (first, last) = (start / 64, (end - 1) / 64);
        for wi in first..=last {
            let mut w = self.words[wi];
            if wi == first {
                w &= u64::MAX << (start % 64);
            }
            if wi == last && end % 64 != 0 {
                w &= u64::MAX >> (64 - end % 64);
            }
            while w != 0 {
                let bit = w.trailing_zeros() as usize;
                f(wi * 64 + bit - start);
                w &= w - 1;
            }
        }
    }
}

/// Packs a tensor whose elements are exactly `0.0` or `1.0`.
pub fn pack_bits<T: Element>(q: &Tensor<T>) -> Result<PackedBits> {
    let mut words = vec![0u64; words_for(q.len())];
    for (i, &v) in q.data().iter().enumerate() {
        if v == T::ONE {
            words[i / 64] |= 1 << (i % 64);
        } else if v != T::ZERO {
            return Err(Error::Contract(format!("element {i} is {v}, not 0 or 1")));
        }
    }
    Ok(PackedBits { shape: q.shape().to_vec(), words, bit_count: q.len() })
}

pub fn unpack_bits<T: Element>(pb: &PackedBits) -> Result<Tensor<T>> {
    let tail = pb.bit_count % 64;
    if tail != 0 && pb.words.last().is_some_and(|w| w >> tail != 0) {
        return Err(Error::format(0, "nonzero padding bits past the end of the tensor"));
    }
    Tensor::new(
        pb.shape.clone(),
        (0..pb.bit_count).map(|i| if pb.get(i) { T::ONE } else { T::ZERO }).collect(),
    )
}
