//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! walks the records once in reverse. Tapes are meant to be rebuilt for each
//! training step.

mod backward;
mod check;

pub use backward::Gradients;
pub use check::{finite_diff_check, finite_diff_gradient, max_relative_error};

use crate::error::{Error, Result};
use crate::tensor::{self, Activation, Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Conv2d(Var, Var, Var),
    MaxPool(Var, Vec<usize>),
    GlobalAvg(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    Normalize { x: Var, group: usize, inv_std: Vec<T> },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MaskFill(Var, Tensor<T>),
    Dropout(Var, Tensor<T>),
    Ste(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Vec<usize>),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape<T = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul_bias(&mut self, x: Var, gain: Var) -> Result<Var> {
        let out = tensor::mul_bias(self.value(x), self.value(gain))?;
        Ok(self.push(out, Op::MulBias(x, gain), &[x, gain]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = tensor::scale(self.value(x), c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::bmm(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Bmm(a, b), &[a, b]))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(out, Op::Conv2d(x, kernel, bias), &[x, kernel, bias]))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, arg) = tensor::maxpool2d_with_argmax(self.value(x))?;
        Ok(self.push(out, Op::MaxPool(x, arg), &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = tensor::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvg(x), &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = tensor::activation(self.value(x), kind);
        let op = match kind {
            Activation::Linear => return x,
            Activation::Relu => Op::Relu(x),
            Activation::Gelu => Op::Gelu(x),
            Activation::Softmax => Op::Softmax(x),
        };
        self.push(out, op, &[x])
    }

    /// Normalizes consecutive groups of `group` elements (see [`tensor::normalize_features`]).
    pub fn normalize(&mut self, x: Var, group: usize) -> Result<Var> {
        let len = self.value(x).len();
        if group == 0 || len % group != 0 {
            return Err(Error::dim("normalize", format!("group {group} does not divide {len}")));
        }
        let n = tensor::normalize_groups(self.value(x), group, T::of(tensor::NORM_EPS));
        Ok(self.push(n.out, Op::Normalize { x, group, inv_std: n.inv_std }, &[x]))
    }

    /// Per-example normalization over all non-batch axes.
    pub fn normalize_features(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let group = if v.rank() == 1 { v.len() } else { v.len() / v.shape()[0] };
        self.normalize(x, group)
    }

    /// Normalization over the last axis.
    pub fn normalize_last_axis(&mut self, x: Var) -> Result<Var> {
        let group = self.value(x).last_dim();
        self.normalize(x, group)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = tensor::permute(self.value(x), perm)?;
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Sets scores to [`tensor::MASK_FILL`] wherever `mask` is zero.
    pub fn mask_fill(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let out = tensor::mask_fill(self.value(x), mask, T::of(tensor::MASK_FILL))?;
        Ok(self.push(out, Op::MaskFill(x, mask.clone()), &[x]))
    }

    /// Multiplies by a fixed, already-scaled keep mask. The mask is saved so
    /// backward routes gradients through the same survivors.
    pub fn dropout_mask(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let out = tensor::mul(self.value(x), &mask)?;
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    /// Forward value is `quantized`; backward passes the gradient to `x` unchanged.
    pub fn ste_passthrough(&mut self, x: Var, quantized: Tensor<T>) -> Result<Var> {
        if quantized.shape() != self.value(x).shape() {
            return Err(Error::dim(
                "ste_passthrough",
                format!("{:?} vs {:?}", self.value(x).shape(), quantized.shape()),
            ));
        }
        Ok(self.push(quantized, Op::Ste(x), &[x]))
    }

    /// Row lookup in a `[rows, dim]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = tensor::gather_rows(self.value(table), ids)?;
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), &[table]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean of `-ln(max(p[label], PROB_FLOOR))` over rows of `probs`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let loss = crate::train::cross_entropy(self.value(probs), labels)?;
        Ok(self.push(Tensor::scalar(T::of(loss)), Op::CrossEntropy(probs, labels.to_vec()), &[probs]))
    }
}
