//! Learned pixel aggregation for image and video denoising.
//!
//! A U-Net predicts, for every output pixel, offsets that deform a rigid
//! sampling grid and weights for the sampled values; the output is the
//! weighted sum. For video the grid is three-dimensional and samples are
//! read with trilinear interpolation across frames.
//!
//! Everything runs on the CPU in `f32`, with `f64` available for gradient
//! checks.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod pxt;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Rng, Tensor};
