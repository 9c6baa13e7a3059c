//! Segmentation laboratory core: tensors with reverse-mode autodiff,
//! intuitionistic fuzzy image encoding, UNet-family models, volume I/O,
//! phantom generation, and segmentation metrics.
//!
//! Everything is generic over the scalar type through [`scalar::Scalar`]
//! (implemented for `f32` and `f64`); the crate root re-exports `f64`
//! aliases for the common types since that is what the CLI uses.

pub mod autodiff;
pub mod container;
pub mod data;
pub mod error;
pub mod ifs;
pub mod metrics;
pub mod models;
pub mod pgm;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

/// Default-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Default-precision tape.
pub type Tape = autodiff::Tape<f64>;
/// Default-precision gradients.
pub type Gradients = autodiff::Gradients<f64>;
/// Default-precision optimizer.
pub type Adam = autodiff::adam::Adam<f64>;
/// Default-precision running normalization statistics.
pub type RunningStats = autodiff::norm::RunningStats<f64>;
/// Default-precision encoded slice.
pub type IfsImage = ifs::IfsImage<f64>;
/// Default-precision model.
pub type Model = models::Model<f64>;
