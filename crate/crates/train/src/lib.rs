//! Training for the egocentric dense-pose network and the person-specific
//! neural renderer.

use std::path::{Path, PathBuf};

use egorender_core::img::ImageError;
use egorender_core::raster::RasterError;
use egorender_core::textures::TextureError;
use egorender_nn::NnError;
use egorender_synth::SynthError;
use thiserror::Error;

pub mod config;
pub mod csvlog;
pub mod dpnet;
pub mod losses;
pub mod render;

pub use config::{GeneratorInput, PeSource, Stage, TrainConfig, Variant, VariantSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Texture(#[from] TextureError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },
}

impl TrainError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
