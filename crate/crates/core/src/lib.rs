//! Binary normalized neural networks: 1-bit weights with per-layer
//! normalization, trained through 32-bit masters and served from packed bits.

pub mod autograd;
pub mod binarize;
mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod params;
pub mod runtime;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Activation, Element, Tensor};
