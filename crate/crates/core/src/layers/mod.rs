//! Binary normalized layers and their 32-bit counterparts.
//!
//! Every layer stores [`ParamId`]s into a [`ParamStore`] and records its
//! forward pass on a [`Tape`] through a [`Forward`] context. Binary layers
//! quantize their masters on every forward; nothing quantized is ever stored.
//!
//! Normalization runs over the last axis for dense layers (which is every
//! non-batch axis for `[batch, features]` input, and per token for sequences)
//! and over all of `(h, w, c)` for convolutions.

mod attention;
mod conv;
mod dense;
mod dropout;
mod embedding;
mod norm;
mod transformer;

pub use attention::Attention;
pub use conv::Conv;
pub use dense::Dense;
pub use dropout::Dropout;
pub use embedding::Embedding;
pub use norm::Norm;
pub(crate) use norm::NormAxes;

pub use transformer::TransformerBlock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::binarize;
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// How binary layers turn masters into forward weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Quantize with a straight-through gradient into the master.
    Train,
    /// Quantize as a constant; no gradient.
    Infer,
    /// Use master values as-is. Only for gradient checks that swap the
    /// quantizer for the identity.
    Bypass,
}

/// Per-step forward context: the tape, the parameter bindings and the mode.
pub struct Forward<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
    quant: QuantMode,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'a, T: Element> Forward<'a, T> {
    /// Training pass: masters require gradients, quantization is
    /// straight-through and dropout is active (seeded by `seed`).
    pub fn train(tape: &'a mut Tape<T>, params: &'a ParamStore, seed: u64) -> Self {
        Self::with_mode(tape, params, QuantMode::Train, true, seed)
    }

    /// Inference pass: hard quantization, no dropout, no gradients.
    pub fn infer(tape: &'a mut Tape<T>, params: &'a ParamStore) -> Self {
        Self::with_mode(tape, params, QuantMode::Infer, false, 0)
    }

    pub fn with_mode(
        tape: &'a mut Tape<T>,
        params: &'a ParamStore,
        quant: QuantMode,
        training: bool,
        seed: u64,
    ) -> Self {
        Self {
            tape,
            params,
            bound: vec![None; params.len()],
            quant,
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn quant_mode(&self) -> QuantMode {
        self.quant
    }

    /// Overrides the master of `id` with a value already on the tape.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.index()] = Some(var);
    }

    /// Tape variable holding the 32-bit master of `id`.
    pub fn master(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let value = self.params.get(id).cast::<T>();
        let v = self.tape.leaf(value, self.quant == QuantMode::Train || self.quant == QuantMode::Bypass);
        self.bound[id.index()] = Some(v);
        v
    }

    /// Forward weights of a binary parameter, quantized according to the mode.
    pub fn binary(&mut self, id: ParamId) -> Result<Var> {
        let m = self.master(id);
        match self.quant {
            QuantMode::Train => binarize::quantize_ste(self.tape, m),
            QuantMode::Infer => {
                let q = binarize::quantize(self.tape.value(m))?;
                Ok(self.tape.constant(q))
            }
            QuantMode::Bypass => Ok(m),
        }
    }

    /// Master or quantized weights depending on whether the layer is binary.
    pub(crate) fn weight(&mut self, id: ParamId, binary: bool) -> Result<Var> {
        if binary {
            self.binary(id)
        } else {
            Ok(self.master(id))
        }
    }

    /// Tape gradient for every parameter that was used, in registry order.
    pub fn param_grads(&self, grads: &mut crate::autograd::Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.take(v))).collect()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Name and shape of one parameter tensor, without its values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Sink<'s> {
    Store(&'s mut ParamStore),
    Layout(&'s mut Vec<ParamShape>),
}

/// Allocates and initializes parameters while a model is being assembled,
/// or only records their shapes when built with [`Builder::layout`].
pub struct Builder<'s> {
    sink: Sink<'s>,
    rng: ChaCha8Rng,
    pub binary: bool,
}

impl<'s> Builder<'s> {
    pub fn new(params: &'s mut ParamStore, seed: u64, binary: bool) -> Self {
        Self { sink: Sink::Store(params), rng: ChaCha8Rng::seed_from_u64(seed), binary }
    }

    /// Records names and shapes without allocating values, so very large
    /// configurations can be inspected cheaply.
    pub fn layout(shapes: &'s mut Vec<ParamShape>, binary: bool) -> Self {
        Self { sink: Sink::Layout(shapes), rng: ChaCha8Rng::seed_from_u64(0), binary }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: impl FnOnce(&mut ChaCha8Rng, Vec<usize>) -> Tensor<f32>) -> ParamId {
        match &mut self.sink {
            Sink::Store(params) => params.insert(name, init(&mut self.rng, shape)),
            Sink::Layout(shapes) => {
                assert!(shapes.iter().all(|s| s.name != name), "duplicate parameter name {name}");
                shapes.push(ParamShape { name, shape });
                ParamId(shapes.len() - 1)
            }
        }
    }

    /// Glorot uniform: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
    pub(crate) fn glorot(&mut self, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        self.push(name, shape, |rng, shape| Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit)))
    }

    pub(crate) fn constant(&mut self, name: String, len: usize, value: f32) -> ParamId {
        self.push(name, vec![len], |_, shape| Tensor::full(shape, value))
    }
}

#[cfg(test)]
mod tests;
