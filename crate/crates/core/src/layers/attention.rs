use super::{Builder, Dense, Forward};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Element, Tensor};

/// Multi-head scaled dot-product attention whose four projections are
/// [`Dense`] layers with linear activation.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("embedding dim {dim} is not divisible by {heads} heads")));
        }
        let proj = |b: &mut Builder, part: &str| Dense::new(b, &format!("{name}.{part}"), dim, dim, Activation::Linear);
        Ok(Self {
            query: proj(b, "query"),
            key: proj(b, "key"),
            value: proj(b, "value"),
            output: proj(b, "output"),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn split_heads<T: Element>(&self, f: &mut Forward<T>, x: Var, perm: &[usize]) -> Result<Var> {
        let s = f.tape.value(x).shape().to_vec();
        let r = f.tape.reshape(x, &[s[0], s[1], self.heads, self.head_dim()])?;
        f.tape.permute(r, perm)
    }

    /// Attention probabilities `[batch, heads, L, L]` and the projected output.
    pub fn forward_with_probs<T: Element>(
        &self,
        f: &mut Forward<T>,
        query: Var,
        key: Var,
        value: Var,
        mask: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let shape = f.tape.value(query).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::dim("attention", format!("expected [batch, len, dim], got {shape:?}")));
        }
        let (batch, len) = (shape[0], shape[1]);
        let q = self.query.forward(f, query)?;
        let k = self.key.forward(f, key)?;
        let v = self.value.forward(f, value)?;
        let q = self.split_heads(f, q, &[0, 2, 1, 3])?;
        let kt = self.split_heads(f, k, &[0, 2, 3, 1])?;
        let v = self.split_heads(f, v, &[0, 2, 1, 3])?;
        let scores = f.tape.bmm(q, kt)?;
        let scores = f.tape.scale(scores, T::of(1.0 / (self.head_dim() as f64).sqrt()));
        let scores = f.tape.mask_fill(scores, mask)?;
        let probs = f.tape.activation(scores, Activation::Softmax);
        let a = f.tape.bmm(probs, v)?;
        let a = f.tape.permute(a, &[0, 2, 1, 3])?;
        let a = f.tape.reshape(a, &[batch, len, self.dim])?;
        Ok((self.output.forward(f, a)?, probs))
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<T>, query: Var, key: Var, value: Var, mask: &Tensor<T>) -> Result<Var> {
        self.forward_with_probs(f, query, key, value, mask).map(|(out, _)| out)
    }
}
