use super::{Builder, Dense, Forward};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Element};

/// Token plus position embedding, each a linear [`Dense`] layer applied to a
/// one-hot code. Positions run `0..len` for the actual sequence length.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub token: Dense,
    pub position: Dense,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(b: &mut Builder, name: &str, vocab_size: usize, max_len: usize, dim: usize) -> Self {
        let token = Dense::new(b, &format!("{name}.token"), vocab_size, dim, Activation::Linear);
        let position = Dense::new(b, &format!("{name}.position"), max_len, dim, Activation::Linear);
        Self { token, position, vocab_size, max_len, dim }
    }

    fn check(&self, ids: &[usize], batch: usize, len: usize) -> Result<()> {
        if len == 0 || len > self.max_len || ids.len() != batch * len {
            return Err(Error::dim(
                "embedding",
                format!("{} ids for batch {batch} x length {len} (max_len {})", ids.len(), self.max_len),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Data(format!("token id {bad} >= vocab size {}", self.vocab_size)));
        }
        Ok(())
    }

    /// `ids` is row-major `[batch, len]`; output is `[batch, len, dim]`.
    pub fn forward<T: Element>(&self, f: &mut Forward<T>, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        self.check(ids, batch, len)?;
        let tok = self.token.forward_one_hot(f, ids)?;
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let pos = self.position.forward_one_hot(f, &positions)?;
        let sum = f.tape.add(tok, pos)?;
        f.tape.reshape(sum, &[batch, len, self.dim])
    }

    /// Reference path multiplying explicit one-hot matrices.
    pub fn forward_dense<T: Element>(&self, f: &mut Forward<T>, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        self.check(ids, batch, len)?;
        let one_hot = |n: usize, idx: &mut dyn Iterator<Item = usize>| {
            let rows: Vec<usize> = idx.collect();
            crate::tensor::Tensor::<T>::from_fn([rows.len(), n], |i| {
                if rows[i / n] == i % n { T::ONE } else { T::ZERO }
            })
        };
        let tok_in = one_hot(self.vocab_size, &mut ids.iter().copied());
        let pos_in = one_hot(self.max_len, &mut (0..batch).flat_map(|_| 0..len));
        let tok_in = f.tape.constant(tok_in);
        let pos_in = f.tape.constant(pos_in);
        let tok = self.token.forward(f, tok_in)?;
        let pos = self.position.forward(f, pos_in)?;
        let sum = f.tape.add(tok, pos)?;
        f.tape.reshape(sum, &[batch, len, self.dim])
    }
}
