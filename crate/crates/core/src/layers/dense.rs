use super::norm::{Norm, NormAxes};
use super::{Builder, Forward};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{Activation, Element};

/// Fully connected layer: `activation(normalize(x · W + b))`.
///
/// In a binary model `W` and `b` are quantized on every forward; the standard
/// variant uses the masters directly and adds an affine step after the
/// normalization.
#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub inputs: usize,
    pub units: usize,
    pub binary: bool,
    norm: Norm,
}

impl Dense {
    pub fn new(b: &mut Builder, name: &str, inputs: usize, units: usize, activation: Activation) -> Self {
        let kernel = b.glorot(format!("{name}.W"), vec![inputs, units], inputs, units);
        let bias = b.constant(format!("{name}.b"), units, 0.0);
        let norm = Norm::new(b, &format!("{name}.norm"), units, NormAxes::Last);
        Self { name: name.to_string(), kernel, bias, activation, inputs, units, binary: b.binary, norm }
    }

    /// `x` is `[..., inputs]`; the result is `[..., units]`.
    pub fn forward<T: Element>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let got = f.tape.value(x).last_dim();
        if got != self.inputs {
            return Err(Error::dim(
                "dense",
                format!("layer '{}' expects {} features, input has shape {:?}", self.name, self.inputs, f.tape.value(x).shape()),
            ));
        }
        let w = f.weight(self.kernel, self.binary)?;
        let z = f.tape.matmul(x, w)?;
        self.finish(f, z)
    }

    /// Same result as [`Dense::forward`] on one-hot rows selecting `ids`,
    /// computed by row lookup instead of a product. Output is `[ids.len(), units]`.
    pub fn forward_one_hot<T: Element>(&self, f: &mut Forward<T>, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.inputs) {
            return Err(Error::Data(format!("index {bad} out of range for '{}' with {} rows", self.name, self.inputs)));
        }
        let w = f.weight(self.kernel, self.binary)?;
        let z = f.tape.gather_rows(w, ids)?;
        self.finish(f, z)
    }

    fn finish<T: Element>(&self, f: &mut Forward<T>, z: Var) -> Result<Var> {
        let b = f.weight(self.bias, self.binary)?;
        let z = f.tape.add_bias(z, b)?;
        let z = self.norm.forward(f, z)?;
        Ok(f.tape.activation(z, self.activation))
    }
}
