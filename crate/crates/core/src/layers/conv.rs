use super::norm::{Norm, NormAxes};
use super::{Builder, Forward};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{Activation, Element};

/// Same-padded stride-1 convolution followed by per-example normalization
/// over `(h, w, c)` and an activation.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub filter: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub binary: bool,
    norm: Norm,
}

impl Conv {
    pub fn new(
        b: &mut Builder,
        name: &str,
        filter: usize,
        in_channels: usize,
        filters: usize,
        activation: Activation,
    ) -> Result<Self> {
        if filter % 2 == 0 {
            return Err(Error::Config(format!("filter size must be odd, got {filter}")));
        }
        let rf = filter * filter;
        let kernel = b.glorot(
            format!("{name}.W"),
            vec![filter, filter, in_channels, filters],
            rf * in_channels,
            rf * filters,
        );
        let bias = b.constant(format!("{name}.b"), filters, 0.0);
        let norm = Norm::new(b, &format!("{name}.norm"), filters, NormAxes::Example);
        Ok(Self {
            name: name.to_string(),
            kernel,
            bias,
            activation,
            filter,
            in_channels,
            filters,
            binary: b.binary,
            norm,
        })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let w = f.weight(self.kernel, self.binary)?;
        let b = f.weight(self.bias, self.binary)?;
        let z = f.tape.conv2d(x, w, b)?;
        let z = self.norm.forward(f, z)?;
        Ok(f.tape.activation(z, self.activation))
    }
}
