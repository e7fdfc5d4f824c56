//! Recurrent video human matting: tensors with reverse-mode autodiff, the
//! matting network, guided-filter refinement, losses, metrics, synthetic data
//! and the staged trainer.

pub mod autograd;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod datagen;
pub mod guided_filter;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod trainer;
