//! CPU convolutional networks for the avatar pipeline: a small NCHW tensor
//! engine with hand-written backward passes, the dense-correspondence
//! predictor, the renderer, the multi-scale discriminator, the per-frame
//! feature network, perceptual distances and checkpoints.
//!
//! Everything runs in `f32`; results are deterministic for a given seed.

use thiserror::Error;

pub mod blocks;
pub mod checkpoint;
pub mod nets;
pub mod ops;
pub mod param;
pub mod perceptual;
pub mod tensor;

pub use blocks::Module;
pub use checkpoint::Checkpoint;
pub use param::{Adam, Param};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] egorender_core::container::ContainerError),
}
