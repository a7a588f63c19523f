//! Export to 1-bit model files and inference straight from packed bits.
//!
//! Activations stay 32-bit. Normalization recomputes its statistics from each
//! input exactly as in training, so no state besides the bits is stored.

mod format;
pub mod kernels;

pub use format::{load_packed, save_packed, PackedLayer, PackedModel, RecordKind, MAGIC, VERSION};

use std::path::Path;
use std::time::Instant;

use crate::binarize::{pack_bits, quantize};
use crate::error::{Error, Result};
use crate::models::{naming, Architecture, ConvNetConfig, Input, LanguageModelConfig, Model};
use crate::tensor::{self, Activation, Tensor, MASK_FILL, NORM_EPS};
use crate::train::argmax;

/// Quantizes and packs every layer of a binary model.
pub fn export_packed(model: &Model) -> Result<PackedModel> {
    if !model.config.binary {
        return Err(Error::Contract("standard models keep 32-bit parameters and cannot be packed".into()));
    }
    let mut layers = Vec::new();
    let ids: Vec<_> = model.params.ids().collect();
    for pair in ids.chunks(2) {
        let (w, b) = (pair[0], pair[1]);
        let name = model.params.name(w).strip_suffix(".W").map(str::to_string);
        let name = name.ok_or_else(|| Error::Contract(format!("unexpected parameter '{}'", model.params.name(w))))?;
        for id in [w, b] {
            if !model.params.get(id).all_finite() {
                return Err(Error::Contract(format!("parameter '{}' is not finite", model.params.name(id))));
            }
        }
        let kernel = model.params.get(w);
        layers.push(PackedLayer {
            kind: RecordKind::for_layer(&name, kernel.rank()),
            kernel: pack_bits(&quantize(kernel)?)?,
            bias: pack_bits(&quantize(model.params.get(b))?)?,
            name,
        });
    }
    PackedModel::new(model.config.clone(), layers)
}

pub fn export_to_file(model: &Model, path: &Path) -> Result<PackedModel> {
    let pm = export_packed(model)?;
    save_packed(&pm, path)?;
    Ok(pm)
}

fn eps() -> f32 {
    NORM_EPS as f32
}

impl PackedModel {
    fn dense(&self, name: &str, x: &Tensor<f32>, act: Activation) -> Result<Tensor<f32>> {
        let l = self.layer(name)?;
        let z = kernels::dense(x, &l.kernel, &l.bias)?;
        Ok(tensor::activation(&tensor::normalize_last_axis(&z, eps()), act))
    }

    fn embedding(&self, name: &str, ids: &[usize]) -> Result<Tensor<f32>> {
        let l = self.layer(name)?;
        let z = kernels::embedding_rows(ids, &l.kernel, &l.bias)?;
        Ok(tensor::normalize_last_axis(&z, eps()))
    }

    fn conv(&self, name: &str, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let l = self.layer(name)?;
        let z = kernels::conv2d(x, &l.kernel, &l.bias)?;
        Ok(tensor::activation(&tensor::normalize_features(&z, eps()), Activation::Relu))
    }

    /// Probabilities, shaped as [`Model::forward`] returns them.
    pub fn forward(&self, input: Input) -> Result<Tensor<f32>> {
        match (&self.config.arch, input) {
            (Architecture::Bcvnn(c), Input::Images(x)) => self.forward_conv(c, x),
            (Architecture::Blm(c), Input::Tokens { ids, batch, len }) => self.forward_language(c, ids, batch, len),
            _ => Err(Error::Data(format!("input kind does not match a {} model", self.config.kind_name()))),
        }
    }

    fn forward_conv(&self, c: &ConvNetConfig, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = images.shape();
        let div = c.spatial_divisor();
        if s.len() != 4 || s[3] != c.input_channels || s[1] % div != 0 || s[2] % div != 0 {
            return Err(Error::dim(
                "bcvnn",
                format!("expected [batch, h, w, {}] with h, w divisible by {div}, got {s:?}", c.input_channels),
            ));
        }
        let mut x = images.clone();
        for block in 0..c.blocks() {
            x = self.conv(&naming::conv(block, 0), &x)?;
            x = self.conv(&naming::conv(block, 1), &x)?;
            if block + 1 < c.blocks() {
                x = tensor::maxpool2d(&x)?;
            }
        }
        x = tensor::global_avg_pool(&x)?;
        for k in 0..c.dense_units.len() {
            x = self.dense(&naming::head_dense(k), &x, Activation::Relu)?;
        }
        self.dense(naming::OUTPUT, &x, Activation::Softmax)
    }

    fn forward_language(&self, c: &LanguageModelConfig, ids: &[usize], batch: usize, len: usize) -> Result<Tensor<f32>> {
        if len == 0 || len > c.max_len || ids.len() != batch * len {
            return Err(Error::dim(
                "embedding",
                format!("{} ids for batch {batch} x length {len} (max_len {})", ids.len(), c.max_len),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::Data(format!("token id {bad} >= vocab size {}", c.vocab_size)));
        }
        let tok = self.embedding(&naming::embed_token(), ids)?;
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let pos = self.embedding(&naming::embed_position(), &positions)?;
        let x = tensor::add(&tok, &pos)?.reshape([batch, len, c.emb_dim])?;
        let mut x = tensor::normalize_last_axis(&x, eps());
        let mask = tensor::causal_mask::<f32>(len);
        for i in 0..c.num_blocks {
            let attn = self.attention(i, c, &x, &mask)?;
            let h = tensor::normalize_last_axis(&tensor::add(&x, &attn)?, eps());
            let [ffn1, ffn2] = naming::ffn(i);
            let ff = self.dense(&ffn1, &h, Activation::Gelu)?;
            let ff = self.dense(&ffn2, &ff, Activation::Linear)?;
            x = tensor::normalize_last_axis(&tensor::add(&h, &ff)?, eps());
        }
        for name in naming::MLP {
            x = self.dense(name, &x, Activation::Gelu)?;
        }
        self.dense(naming::OUTPUT, &x, Activation::Softmax)
    }

    fn attention(&self, i: usize, c: &LanguageModelConfig, x: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (batch, len) = (x.shape()[0], x.shape()[1]);
        let head_dim = c.emb_dim / c.num_heads;
        let [q, k, v, out] = naming::attention(i);
        let split = |t: Tensor<f32>, perm: &[usize]| tensor::permute(&t.reshape([batch, len, c.num_heads, head_dim])?, perm);
        let q = split(self.dense(&q, x, Activation::Linear)?, &[0, 2, 1, 3])?;
        let kt = split(self.dense(&k, x, Activation::Linear)?, &[0, 2, 3, 1])?;
        let v = split(self.dense(&v, x, Activation::Linear)?, &[0, 2, 1, 3])?;
        let scores = tensor::scale(&tensor::bmm(&q, &kt)?, (1.0 / (head_dim as f64).sqrt()) as f32);
        let probs = tensor::softmax(&tensor::mask_fill(&scores, mask, MASK_FILL as f32)?);
        let a = tensor::permute(&tensor::bmm(&probs, &v)?, &[0, 2, 1, 3])?.reshape([batch, len, c.emb_dim])?;
        self.dense(&out, &a, Activation::Linear)
    }
}

/// Output of [`infer`]: probabilities, the top index of every row and the
/// time the forward pass took.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub probabilities: Tensor<f32>,
    pub argmax: Vec<usize>,
    pub latency_ns: u128,
}

pub fn infer(pm: &PackedModel, input: Input) -> Result<Inference> {
    let start = Instant::now();
    let probabilities = pm.forward(input)?;
    let latency_ns = start.elapsed().as_nanos();
    let k = probabilities.last_dim();
    let argmax = probabilities.data().chunks(k).map(argmax).collect();
    Ok(Inference { probabilities, argmax, latency_ns })
}
