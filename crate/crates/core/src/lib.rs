//! DarkIR: an encoder–decoder network for joint low-light enhancement and
//! deblurring, built on a small tensor library with reverse-mode autodiff.

pub mod autodiff;
pub mod degrade;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Scalar, Spectrum, Tensor};
