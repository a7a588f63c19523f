use super::{Builder, Forward};
use crate::autograd::Var;
use crate::error::Result;
use crate::params::ParamId;
use crate::tensor::Element;

/// Axes a [`Norm`] computes its statistics over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxes {
    /// Last axis only.
    Last,
    /// Every axis except the leading batch axis.
    Example,
}

/// Zero-mean, unit-variance normalization. Binary models use it without
/// parameters; standard models add a trainable per-channel scale and offset.
#[derive(Clone, Debug)]
pub struct Norm {
    axes: NormAxes,
    affine: Option<(ParamId, ParamId)>,
}

impl Norm {
    pub(crate) fn new(b: &mut Builder, name: &str, channels: usize, axes: NormAxes) -> Self {
        let affine = (!b.binary).then(|| {
            let scale = b.constant(format!("{name}.scale"), channels, 1.0);
            let offset = b.constant(format!("{name}.offset"), channels, 0.0);
            (scale, offset)
        });
        Self { axes, affine }
    }

    pub fn has_params(&self) -> bool {
        self.affine.is_some()
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let y = match self.axes {
            NormAxes::Last => f.tape.normalize_last_axis(x)?,
            NormAxes::Example => f.tape.normalize_features(x)?,
        };
        match self.affine {
            None => Ok(y),
            Some((scale, offset)) => {
                let s = f.master(scale);
                let o = f.master(offset);
                let y = f.tape.mul_bias(y, s)?;
                f.tape.add_bias(y, o)
            }
        }
    }
}
