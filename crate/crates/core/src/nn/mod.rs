//! Convolutional layers, the offset network, the full model, Adam and
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod unet;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use layers::{Conv2d, ConvGrads};
pub use model::{Forward, ModelConfig, ModelInput, PanModel, Variant};
pub use unet::OffsetNet;
