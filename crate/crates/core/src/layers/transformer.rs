use super::norm::{Norm, NormAxes};
use super::{Attention, Builder, Dense, Forward};
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Activation, Element, Tensor};

/// Post-norm transformer block: self-attention, add and normalize, a two-layer
/// feed-forward (gelu then linear), add and normalize.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: Attention,
    pub ffn1: Dense,
    pub ffn2: Dense,
    norm1: Norm,
    norm2: Norm,
}

impl TransformerBlock {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        let attention = Attention::new(b, &format!("{name}.attn"), dim, heads)?;
        let norm1 = Norm::new(b, &format!("{name}.norm1"), dim, NormAxes::Last);
        let ffn1 = Dense::new(b, &format!("{name}.ffn1"), dim, ff_dim, Activation::Gelu);
        let ffn2 = Dense::new(b, &format!("{name}.ffn2"), ff_dim, dim, Activation::Linear);
        let norm2 = Norm::new(b, &format!("{name}.norm2"), dim, NormAxes::Last);
        Ok(Self { attention, ffn1, ffn2, norm1, norm2 })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<T>, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let attn = self.attention.forward(f, x, x, x, mask)?;
        let h = f.tape.add(x, attn)?;
        let h = self.norm1.forward(f, h)?;
        let ff = self.ffn1.forward(f, h)?;
        let ff = self.ffn2.forward(f, ff)?;
        let out = f.tape.add(h, ff)?;
        self.norm2.forward(f, out)
    }
}
