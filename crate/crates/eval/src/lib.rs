//! Evaluation of trained renderers: SSIM, PSNR, L1 and a pluggable LPIPS,
//! relative improvement, and the ablation runner with its report tables.

use egorender_core::img::Image;
use egorender_core::metrics::MetricError;
use egorender_nn::perceptual::{perceptual_loss, FeatureExtractor, RandomPyramid};
use egorender_nn::Tensor;
use egorender_train::TrainError;
use thiserror::Error;

pub mod ablation;
pub mod evaluate;
pub mod report;

pub use ablation::{run_ablation, split_checks, AblationConfig};
pub use evaluate::{evaluate_model, standard_splits, EvalSplit, MetricMeans};
pub use report::{published_ri_note, MetricReport, ReportRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("insufficient cameras: {0}")]
    Cameras(String),
    #[error("split overlap: {0}")]
    Overlap(String),
    #[error("invalid ablation config: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl From<egorender_synth::SynthError> for EvalError {
    fn from(e: egorender_synth::SynthError) -> Self {
        EvalError::Train(e.into())
    }
}

/// Learned perceptual image distance `(image, image) -> scalar`.
pub trait LpipsPlugin {
    fn name(&self) -> &str;
    fn distance(&self, a: &Image<f32>, b: &Image<f32>) -> Result<f64, EvalError>;
}

/// The random-feature perceptual distance used in training, standing in
/// for LPIPS.
#[derive(Debug, Clone, Default)]
pub struct LpipsProxy {
    pub pyramid: RandomPyramid,
}

impl LpipsPlugin for LpipsProxy {
    fn name(&self) -> &str {
        "LPIPS-proxy"
    }

    fn distance(&self, a: &Image<f32>, b: &Image<f32>) -> Result<f64, EvalError> {
        let ex: &dyn FeatureExtractor = &self.pyramid;
        perceptual_loss(ex, &Tensor::from_image(a), &Tensor::from_image(b))
            .map_err(|e| EvalError::Train(e.into()))
    }
}
