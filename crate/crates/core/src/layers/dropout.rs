use rand::Rng;

use super::Forward;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` while training;
/// identity otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn new(rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        if !f.training() || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - self.rate as f64));
        let rate = self.rate as f64;
        let shape = f.tape.value(x).shape().to_vec();
        let rng = f.rng();
        let mask = Tensor::from_fn(shape, |_| if rng.gen_bool(rate) { T::ZERO } else { keep });
        f.tape.dropout_mask(x, mask)
    }
}
