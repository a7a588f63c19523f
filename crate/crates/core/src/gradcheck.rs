//! Finite-difference gradient checks for the tape primitives and for whole
//! binary layers.
//!
//! A binary layer's gradient with respect to its masters is the gradient of
//! the same layer with the quantizer replaced by the identity, evaluated at
//! the quantized weights. The layer checks compare the straight-through
//! gradient against central differences of that identity-swapped layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{finite_diff_check, finite_diff_gradient, max_relative_error, Tape, Var};
use crate::binarize;
use crate::error::Result;
use crate::layers::{Attention, Builder, Conv, Dense, Embedding, Forward, QuantMode, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Activation, Tensor};

/// Largest acceptable relative error.
pub const TOLERANCE: f64 = 1e-3;
/// Central-difference step.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// `sum(y * w)` for weights drawn from `seed`, so every output coordinate
/// contributes to the scalar.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    if tape.value(y).len() == 1 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.value(y).shape());
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Primitive = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

fn primitive_cases() -> Vec<(&'static str, Vec<usize>, Primitive)> {
    vec![
        ("matmul", vec![3, 4], Box::new(|t, x| {
            let w = t.constant(Tensor::from_fn([4, 2], |i| (i as f64 * 0.37).sin()));
            t.matmul(x, w)
        })),
        ("bmm", vec![2, 3, 4], Box::new(|t, x| {
            let w = t.constant(Tensor::from_fn([2, 4, 3], |i| (i as f64 * 0.21).cos()));
            let y = t.bmm(x, w)?;
            t.bmm(y, x)
        })),
        ("conv2d", vec![1, 4, 4, 2], Box::new(|t, x| {
            let k = t.constant(Tensor::from_fn([3, 3, 2, 3], |i| (i as f64 * 0.13).sin()));
            let b = t.constant(Tensor::from_fn([3], |i| i as f64 * 0.1));
            t.conv2d(x, k, b)
        })),
        ("normalize_last_axis", vec![2, 3, 8], Box::new(|t, x| t.normalize_last_axis(x))),
        ("normalize_per_example", vec![2, 8], Box::new(|t, x| t.normalize_features(x))),
        ("relu", vec![3, 5], Box::new(|t, x| Ok(t.activation(x, Activation::Relu)))),
        ("gelu", vec![3, 5], Box::new(|t, x| Ok(t.activation(x, Activation::Gelu)))),
        ("softmax", vec![3, 5], Box::new(|t, x| Ok(t.activation(x, Activation::Softmax)))),
        ("add_mul", vec![2, 3], Box::new(|t, x| {
            let c = t.constant(Tensor::full([2, 3], 0.5));
            let y = t.add(x, c)?;
            t.mul(y, x)
        })),
        ("reshape", vec![2, 6], Box::new(|t, x| {
            let r = t.reshape(x, &[3, 4])?;
            t.mul(r, r)
        })),
        ("permute", vec![2, 3, 4], Box::new(|t, x| {
            let p = t.permute(x, &[2, 0, 1])?;
            t.mul(p, p)
        })),
        ("bias", vec![3, 4], Box::new(|t, x| {
            let b = t.gather_rows(x, &[1])?;
            let b = t.reshape(b, &[4])?;
            let y = t.add_bias(x, b)?;
            t.mul_bias(y, b)
        })),
        ("maxpool", vec![1, 4, 4, 2], Box::new(|t, x| t.maxpool2d(x))),
        ("global_avg_pool", vec![2, 2, 2, 3], Box::new(|t, x| t.global_avg_pool(x))),
        ("mask_fill", vec![2, 3, 3], Box::new(|t, x| {
            let s = t.mask_fill(x, &tensor::causal_mask(3))?;
            Ok(t.activation(s, Activation::Softmax))
        })),
        ("dropout", vec![4, 4], Box::new(|t, x| {
            t.dropout_mask(x, Tensor::from_fn([4, 4], |i| if i % 3 == 0 { 0.0 } else { 1.5 }))
        })),
        ("cross_entropy", vec![3, 4], Box::new(|t, x| {
            let p = t.activation(x, Activation::Softmax);
            t.cross_entropy(p, &[0, 3, 1])
        })),
    ]
}

/// One check per tape primitive, each at a random point drawn from `seed`.
pub fn check_primitives(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, (name, shape, f)) in primitive_cases().into_iter().enumerate() {
        let x0 = random(&mut rng, &shape);
        let ws = seed.wrapping_add(1000 + i as u64);
        let err = finite_diff_check(|t, x| {
            let y = f(t, x)?;
            weighted_sum(t, y, ws)
        }, &x0, STEP)?;
        out.push(CheckResult { name: name.to_string(), max_rel_error: err });
    }
    Ok(out)
}

type LayerRun<'r> = dyn Fn(&mut Forward<f64>, Option<Var>) -> Result<Var> + 'r;

/// Straight-through gradients of a layer against central differences of the
/// identity-swapped layer at the quantized weights, for every parameter and
/// for the input when there is one.
fn check_layer(store: &ParamStore, input: Option<&Tensor<f64>>, run: &LayerRun, loss_seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let mut f = Forward::train(&mut tape, store, 0);
    let x = input.map(|v| f.tape.leaf(v.clone(), true));
    let y = run(&mut f, x)?;
    let s = weighted_sum(f.tape, y, loss_seed)?;
    let mut grads = f.tape.backward(s)?;
    let input_grad = x.and_then(|x| grads.get(x).cloned());
    let param_grads = f.param_grads(&mut grads);

    let quantized: Vec<Tensor<f64>> = store
        .ids()
        .map(|id| binarize::quantize(&store.get(id).cast::<f64>()))
        .collect::<Result<_>>()?;
    // Runs the identity-swapped layer with every parameter pinned to its
    // quantized value, except `free`, which takes the tape leaf `v`.
    let swapped = |t: &mut Tape<f64>, v: Var, free: Option<ParamId>| -> Result<Var> {
        let mut f = Forward::with_mode(t, store, QuantMode::Bypass, false, 0);
        for id in store.ids() {
            if Some(id) != free {
                let c = f.tape.constant(quantized[id.index()].clone());
                f.bind(id, c);
            }
        }
        let x = match free {
            Some(id) => {
                f.bind(id, v);
                input.map(|v| f.tape.constant(v.clone()))
            }
            None => Some(v),
        };
        let y = run(&mut f, x)?;
        weighted_sum(f.tape, y, loss_seed)
    };

    let mut worst = 0.0f64;
    for id in store.ids() {
        let Some(analytic) = &param_grads[id.index()] else { continue };
        let numeric = finite_diff_gradient(|t, v| swapped(t, v, Some(id)), &quantized[id.index()], STEP)?;
        worst = worst.max(max_relative_error(&numeric, analytic)?);
    }
    if let (Some(x0), Some(analytic)) = (input, input_grad) {
        let numeric = finite_diff_gradient(|t, v| swapped(t, v, None), x0, STEP)?;
        worst = worst.max(max_relative_error(&numeric, &analytic)?);
    }
    Ok(worst)
}

/// Replaces every master with uniform noise so biases do not all tie at zero.
fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let p = store.get_mut(id);
        for v in p.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

/// Whole binary layers: dense, convolution, embedding, attention and a
/// transformer block.
pub fn check_binary_layers(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push(CheckResult { name: name.to_string(), max_rel_error: err });

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut Builder::new(&mut store, seed, true), "dense", 5, 4, Activation::Gelu);
    scramble(&mut store, &mut rng);
    let x = random(&mut rng, &[3, 5]);
    push("binary_dense", check_layer(&store, Some(&x), &|f, x| dense.forward(f, x.unwrap()), seed)?);

    let mut store = ParamStore::new();
    let conv = Conv::new(&mut Builder::new(&mut store, seed, true), "conv", 3, 2, 3, Activation::Gelu)?;
    scramble(&mut store, &mut rng);
    let x = random(&mut rng, &[2, 4, 4, 2]);
    push("binary_conv", check_layer(&store, Some(&x), &|f, x| conv.forward(f, x.unwrap()), seed)?);

    let mut store = ParamStore::new();
    let embed = Embedding::new(&mut Builder::new(&mut store, seed, true), "embed", 5, 4, 6);
    scramble(&mut store, &mut rng);
    let ids: Vec<usize> = (0..8).map(|_| rng.gen_range(0..5)).collect();
    push("binary_embedding", check_layer(&store, None, &|f, _| embed.forward(f, &ids, 2, 4), seed)?);

    let mask = tensor::causal_mask::<f64>(4);
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut Builder::new(&mut store, seed, true), "attn", 8, 2)?;
    scramble(&mut store, &mut rng);
    let x = random(&mut rng, &[2, 4, 8]);
    push("binary_attention", check_layer(&store, Some(&x), &|f, x| {
        let x = x.unwrap();
        attn.forward(f, x, x, x, &mask)
    }, seed)?);

    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut Builder::new(&mut store, seed, true), "block", 8, 2, 12)?;
    scramble(&mut store, &mut rng);
    let x = random(&mut rng, &[2, 4, 8]);
    push("binary_transformer_block", check_layer(&store, Some(&x), &|f, x| block.forward(f, x.unwrap(), &mask), seed)?);

    Ok(out)
}

/// Primitives followed by whole binary layers.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = check_primitives(seed)?;
    all.extend(check_binary_layers(seed)?);
    Ok(all)
}
