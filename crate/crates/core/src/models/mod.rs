//! Builders for the convolutional classifier and the decoder language model,
//! in binary and standard (32-bit) variants, plus parameter accounting.

mod checkpoint;
mod config;
pub mod naming;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Architecture, ConvNetConfig, LanguageModelConfig, ModelConfig, HEAD_DROPOUT};

use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Builder, Conv, Dense, Dropout, Embedding, Forward, Norm, NormAxes, ParamShape, TransformerBlock};
use crate::params::ParamStore;
use crate::tensor::{self, Activation, Element, Tensor};

/// Model input for one batch.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    /// `[batch, h, w, c]` images.
    Images(&'a Tensor<f32>),
    /// Row-major `[batch, len]` token ids.
    Tokens { ids: &'a [usize], batch: usize, len: usize },
}

impl Input<'_> {
    pub fn batch(&self) -> usize {
        match self {
            Input::Images(x) => x.shape()[0],
            Input::Tokens { batch, .. } => *batch,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvNet {
    convs: Vec<Conv>,
    dense: Vec<Dense>,
    dropout: Vec<Option<Dropout>>,
    out: Dense,
}

#[derive(Clone, Debug)]
struct LanguageModel {
    embed: Embedding,
    embed_norm: Norm,
    blocks: Vec<TransformerBlock>,
    mlp: [Dense; 2],
    out: Dense,
}

#[derive(Clone, Debug)]
enum Network {
    Conv(ConvNet),
    Language(LanguageModel),
}

fn build_network(b: &mut Builder, config: &ModelConfig) -> Result<Network> {
    config.validate()?;
    match &config.arch {
        Architecture::Bcvnn(c) => {
            let mut convs = Vec::with_capacity(c.channels.len());
            let mut prev = c.input_channels;
            for (k, &filters) in c.channels.iter().enumerate() {
                let name = naming::conv(k / 2, k % 2);
                convs.push(Conv::new(b, &name, c.filter_size, prev, filters, Activation::Relu)?);
                prev = filters;
            }
            let mut dense = Vec::new();
            let mut dropout = Vec::new();
            for (k, &units) in c.dense_units.iter().enumerate() {
                dense.push(Dense::new(b, &naming::head_dense(k), prev, units, Activation::Relu));
                let rate = HEAD_DROPOUT.get(k).filter(|_| !config.binary);
                dropout.push(rate.map(|&r| Dropout::new(r)).transpose()?);
                prev = units;
            }
            let out = Dense::new(b, naming::OUTPUT, prev, c.num_classes, Activation::Softmax);
            Ok(Network::Conv(ConvNet { convs, dense, dropout, out }))
        }
        Architecture::Blm(c) => {
            let embed = Embedding::new(b, naming::EMBED, c.vocab_size, c.max_len, c.emb_dim);
            let embed_norm = Norm::new(b, naming::EMBED_NORM, c.emb_dim, NormAxes::Last);
            let blocks = (0..c.num_blocks)
                .map(|i| TransformerBlock::new(b, &naming::block(i), c.emb_dim, c.num_heads, c.ff_dim))
                .collect::<Result<Vec<_>>>()?;
            let mlp = [
                Dense::new(b, naming::MLP[0], c.emb_dim, c.mlp_units_0, Activation::Gelu),
                Dense::new(b, naming::MLP[1], c.mlp_units_0, c.mlp_units_1, Activation::Gelu),
            ];
            let out = Dense::new(b, naming::OUTPUT, c.mlp_units_1, c.vocab_size, Activation::Softmax);
            Ok(Network::Language(LanguageModel { embed, embed_norm, blocks, mlp, out }))
        }
    }
}

/// Per-layer and total trainable scalar counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_layer: Vec<(String, usize)>,
}

impl ParamCount {
    fn from_shapes<'a>(items: impl Iterator<Item = (&'a str, usize)>) -> Self {
        let mut per_layer: Vec<(String, usize)> = Vec::new();
        for (name, n) in items {
            let layer = naming::owner(name);
            match per_layer.last_mut() {
                Some((last, count)) if last == layer => *count += n,
                _ => per_layer.push((layer.to_string(), n)),
            }
        }
        Self { total: per_layer.iter().map(|(_, n)| n).sum(), per_layer }
    }
}

/// Parameter names and shapes a configuration would create, in registry order.
pub fn layout(config: &ModelConfig) -> Result<Vec<ParamShape>> {
    let mut shapes = Vec::new();
    build_network(&mut Builder::layout(&mut shapes, config.binary), config)?;
    Ok(shapes)
}

/// Counts parameters from the configuration alone, without allocating them.
pub fn count_params(config: &ModelConfig) -> Result<ParamCount> {
    let shapes = layout(config)?;
    Ok(ParamCount::from_shapes(shapes.iter().map(|s| (s.name.as_str(), s.len()))))
}

/// A built model: its configuration, the 32-bit master parameters and the
/// layer stack that reads them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Network,
}

impl Model {
    /// Builds with Glorot-uniform kernels and zero biases drawn from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = build_network(&mut Builder::new(&mut params, seed, config.binary), &config)?;
        Ok(Self { config, params, net })
    }

    pub fn count_params(&self) -> ParamCount {
        ParamCount::from_shapes(self.params.iter().map(|(_, p)| (p.name.as_str(), p.value.len())))
    }

    /// Class (or next-token) probabilities: `[batch, classes]` for images,
    /// `[batch, len, vocab]` for tokens.
    pub fn forward<T: Element>(&self, f: &mut Forward<T>, input: Input) -> Result<Var> {
        match (&self.net, input) {
            (Network::Conv(net), Input::Images(x)) => net.forward(f, x),
            (Network::Language(net), Input::Tokens { ids, batch, len }) => net.forward(f, ids, batch, len),
            _ => Err(Error::Data(format!("input kind does not match a {} model", self.config.kind_name()))),
        }
    }

    /// Mean cross-entropy over every predicted position, with the
    /// probabilities flattened to `[rows, classes]`.
    pub fn loss<T: Element>(&self, f: &mut Forward<T>, input: Input, labels: &[usize]) -> Result<(Var, Var)> {
        let probs = self.forward(f, input)?;
        let classes = f.tape.value(probs).last_dim();
        let rows = f.tape.value(probs).len() / classes;
        let flat = f.tape.reshape(probs, &[rows, classes])?;
        let loss = f.tape.cross_entropy(flat, labels)?;
        Ok((loss, flat))
    }

    /// Inference-mode probabilities with hard-quantized weights.
    pub fn predict(&self, input: Input) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let mut f = Forward::infer(&mut tape, &self.params);
        let out = self.forward(&mut f, input)?;
        Ok(tape.value(out).clone())
    }
}

impl ConvNet {
    fn forward<T: Element>(&self, f: &mut Forward<T>, images: &Tensor<f32>) -> Result<Var> {
        let s = images.shape();
        let in_ch = self.convs[0].in_channels;
        let div = 1 << (self.convs.len() / 2 - 1);
        if s.len() != 4 || s[3] != in_ch || s[1] % div != 0 || s[2] % div != 0 {
            return Err(Error::dim(
                "bcvnn",
                format!("expected [batch, h, w, {in_ch}] with h, w divisible by {div}, got {s:?}"),
            ));
        }
        let mut x = f.tape.constant(images.cast::<T>());
        let last_block = self.convs.len() / 2 - 1;
        for (k, conv) in self.convs.iter().enumerate() {
            x = conv.forward(f, x)?;
            if k % 2 == 1 && k / 2 < last_block {
                x = f.tape.maxpool2d(x)?;
            }
        }
        x = f.tape.global_avg_pool(x)?;
        for (dense, drop) in self.dense.iter().zip(&self.dropout) {
            x = dense.forward(f, x)?;
            if let Some(d) = drop {
                x = d.forward(f, x)?;
            }
        }
        self.out.forward(f, x)
    }
}

impl LanguageModel {
    fn forward<T: Element>(&self, f: &mut Forward<T>, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        let mut x = self.embed.forward(f, ids, batch, len)?;
        x = self.embed_norm.forward(f, x)?;
        let mask = tensor::causal_mask::<T>(len);
        for block in &self.blocks {
            x = block.forward(f, x, &mask)?;
        }
        for dense in &self.mlp {
            x = dense.forward(f, x)?;
        }
        self.out.forward(f, x)
    }
}
