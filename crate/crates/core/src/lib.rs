//! Probing and learning the transformation invariances of a small CNN.
//!
//! Two strategies: a transformation-magnitude sweep harness that measures
//! how a trained classifier's softmax and accuracy degrade under parametric
//! image transforms, and a learnable transformer that finds control-driven
//! affine color/spatial maps of maximal magnitude to which the frozen
//! classifier stays invariant.

pub mod cli;
pub mod cnn;
pub mod diff_transformer;
pub mod error;
pub mod image;
pub mod io;
pub mod itn;
pub mod scalar;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod transforms;
pub mod verification;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type of the crate: 64-bit floats for gradient-check
/// fidelity.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Image = image::Image<f64>;
pub type AffineMap = diff_transformer::AffineMap<f64>;
