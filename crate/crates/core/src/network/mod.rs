//! The matting network: encoder, LR-ASPP, recurrent decoder and refinement head.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod gru;
pub mod layers;
pub mod model;
pub mod params;

pub use checkpoint::{Checkpoint, CheckpointHeader, Stored};
pub use config::{BackboneKind, ModelConfig};
pub use layers::{BnUpdate, Ctx, MacPlan};
pub use model::{build_model, internal_extent, ForwardOptions, MattingOutput, Model, Prediction, RecurrentState, Refiner};
pub use params::{Group, ParamStore};
