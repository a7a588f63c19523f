//! WebAssembly bindings for the demo page in `www/`.

use binorm::binarize::{pack_bits, quantize, threshold};
use binorm::data::Tokenizer;
use binorm::layers::{Attention, Builder, Dense, Embedding, Forward};
use binorm::tensor::{causal_mask, Activation};
use binorm::{ParamStore, Tape, Tensor};
use wasm_bindgen::prelude::*;

fn js(e: binorm::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A parameter vector after mean-threshold quantization and packing.
#[wasm_bindgen]
pub struct Quantized {
    threshold: f64,
    bits: Vec<u8>,
    words: Vec<String>,
}

#[wasm_bindgen]
impl Quantized {
    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[wasm_bindgen(getter)]
    pub fn bits(&self) -> Vec<u8> {
        self.bits.clone()
    }

    /// Packed 64-bit words as hex, least significant bit = first element.
    #[wasm_bindgen(getter)]
    pub fn words(&self) -> Vec<String> {
        self.words.clone()
    }
}

pub fn quantize_values(values: &[f32]) -> binorm::Result<Quantized> {
    let t = Tensor::new([values.len()], values.to_vec())?;
    let q = quantize(&t)?;
    let packed = pack_bits(&q)?;
    Ok(Quantized {
        threshold: threshold(values)?,
        bits: q.data().iter().map(|&v| v as u8).collect(),
        words: packed.words().iter().map(|w| format!("{w:016x}")).collect(),
    })
}

#[wasm_bindgen(js_name = quantizeValues)]
pub fn quantize_values_js(values: Vec<f32>) -> Result<Quantized, JsError> {
    quantize_values(&values).map_err(js)
}

/// Causal attention probabilities of a freshly initialized binary layer.
#[wasm_bindgen]
pub struct AttentionMap {
    tokens: Vec<String>,
    heads: usize,
    probs: Vec<f32>,
}

#[wasm_bindgen]
impl AttentionMap {
    #[wasm_bindgen(getter)]
    pub fn tokens(&self) -> Vec<String> {
        self.tokens.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Row-major `[heads, len, len]`; row `i` is how token `i` attends to tokens `0..=i`.
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Vec<f32> {
        self.probs.clone()
    }
}

pub const MAX_TOKENS: usize = 32;

pub fn attention_map(text: &str, heads: usize, seed: u64) -> binorm::Result<AttentionMap> {
    let words: Vec<String> = text.split_whitespace().take(MAX_TOKENS).map(str::to_string).collect();
    if words.is_empty() {
        return Err(binorm::Error::Data("type at least one word".into()));
    }
    let dim = 32;
    let tokenizer = Tokenizer::build(&words.join(" "), 256);
    let ids = tokenizer.encode(&words.join(" "));
    let len = ids.len();

    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, seed, true);
    let embed = Embedding::new(&mut b, "embed", tokenizer.len(), MAX_TOKENS, dim);
    let attn = Attention::new(&mut b, "attn", dim, heads)?;
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    let x = embed.forward(&mut f, &ids, 1, len)?;
    let x = f.tape.normalize_last_axis(x)?;
    let (_, probs) = attn.forward_with_probs(&mut f, x, x, x, &causal_mask(len))?;
    Ok(AttentionMap { tokens: words, heads, probs: f.tape.value(probs).data().to_vec() })
}

#[wasm_bindgen(js_name = attentionMap)]
pub fn attention_map_js(text: &str, heads: usize, seed: u32) -> Result<AttentionMap, JsError> {
    attention_map(text, heads, seed as u64).map_err(js)
}

/// One binary dense layer applied to a single input vector.
#[wasm_bindgen]
pub struct DenseTrace {
    kernel_bits: Vec<u8>,
    bias_bits: Vec<u8>,
    pre: Vec<f32>,
    post: Vec<f32>,
}

#[wasm_bindgen]
impl DenseTrace {
    /// Quantized kernel, row-major `[inputs, units]`.
    #[wasm_bindgen(getter, js_name = kernelBits)]
    pub fn kernel_bits(&self) -> Vec<u8> {
        self.kernel_bits.clone()
    }

    #[wasm_bindgen(getter, js_name = biasBits)]
    pub fn bias_bits(&self) -> Vec<u8> {
        self.bias_bits.clone()
    }

    /// `x · W + b` before normalization.
    #[wasm_bindgen(getter)]
    pub fn pre(&self) -> Vec<f32> {
        self.pre.clone()
    }

    /// Normalized output (linear activation).
    #[wasm_bindgen(getter)]
    pub fn post(&self) -> Vec<f32> {
        self.post.clone()
    }
}

pub fn dense_trace(inputs: &[f32], units: usize, seed: u64) -> binorm::Result<DenseTrace> {
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut Builder::new(&mut store, seed, true), "dense", inputs.len(), units, Activation::Linear);
    let kernel = quantize(store.get(dense.kernel))?;
    let bias = quantize(store.get(dense.bias))?;
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    let x = f.tape.constant(Tensor::new([1, inputs.len()], inputs.to_vec())?);
    let w = f.tape.constant(kernel.clone());
    let b = f.tape.constant(bias.clone());
    let z = f.tape.matmul(x, w)?;
    let z = f.tape.add_bias(z, b)?;
    let pre = f.tape.value(z).data().to_vec();
    let y = dense.forward(&mut f, x)?;
    let to_bits = |t: &Tensor<f32>| t.data().iter().map(|&v| v as u8).collect();
    Ok(DenseTrace { kernel_bits: to_bits(&kernel), bias_bits: to_bits(&bias), pre, post: f.tape.value(y).data().to_vec() })
}

#[wasm_bindgen(js_name = denseTrace)]
pub fn dense_trace_js(inputs: Vec<f32>, units: usize, seed: u32) -> Result<DenseTrace, JsError> {
    dense_trace(&inputs, units, seed as u64).map_err(js)
}
