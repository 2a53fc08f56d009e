//! Synthetic egocentric and external-view dataset generator with exact
//! dense-correspondence ground truth.

use std::path::{Path, PathBuf};

use egorender_core::body::{BodyConfig, BodyError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod dataset;
pub mod generate;
pub mod motion;
pub mod texture;

pub use dataset::{verify_dataset, verify_frame, Dataset, DatasetMeta, EgoSample, FrameInfo, SampleRecord, ViewSample};
pub use generate::{ego_camera, generate_dataset, ring_cameras};
pub use motion::{sample_pose, MotionSequence, PoseSamplerConfig};
pub use texture::{procedural_background, sample_texture, texture_from_atlas_image};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image: {0}")]
    Image(String),
    #[error("render: {0}")]
    Render(String),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("frame {frame}: {msg}")]
    Mismatch { frame: usize, msg: String },
}

impl SynthError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Rigid head mount of the egocentric fisheye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MountConfig {
    /// Offset from the head joint along the head's forward axis, metres.
    pub forward: f64,
    pub up: f64,
    /// Downward tilt of the optical axis from the head's forward axis.
    pub pitch_deg: f64,
    /// Full fisheye field of view, at most 180.
    pub fov_deg: f64,
}

impl Default for MountConfig {
    fn default() -> Self {
        Self { forward: 0.08, up: 0.03, pitch_deg: 70.0, fov_deg: 180.0 }
    }
}

/// External pinhole cameras evenly spaced on a ring around the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingConfig {
    pub distance: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    /// Azimuth of camera 0; camera k sits at `offset + k * 360 / n`.
    pub azimuth_offset_deg: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self { distance: 2.6, elevation_deg: 10.0, fov_deg: 45.0, azimuth_offset_deg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_frames: usize,
    pub n_textures: usize,
    pub n_backgrounds: usize,
    pub n_external_views: usize,
    pub ego_size: u32,
    pub view_size: u32,
    pub chart_size: usize,
    pub seed: u64,
    /// Fraction of frames, taken from the front, used for training.
    pub split: f64,
    pub pose: PoseSamplerConfig,
    pub mount: MountConfig,
    pub ring: RingConfig,
    pub body: BodyConfig,
    /// Atlas PNGs replacing the procedural textures.
    pub texture_dir: Option<PathBuf>,
    /// Backdrop PNGs replacing the procedural backgrounds.
    pub background_dir: Option<PathBuf>,
    /// JSON array of pose records played back instead of the sampler.
    pub motion_file: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_frames: 2000,
            n_textures: 32,
            n_backgrounds: 32,
            n_external_views: 4,
            ego_size: 128,
            view_size: 128,
            chart_size: 64,
            seed: 0,
            split: 0.8,
            pose: PoseSamplerConfig::default(),
            mount: MountConfig::default(),
            ring: RingConfig::default(),
            body: BodyConfig::default(),
            texture_dir: None,
            background_dir: None,
            motion_file: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_frames == 0 {
            return bad("n_frames must be > 0");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        if self.n_textures == 0 || self.n_backgrounds == 0 {
            return bad("n_textures and n_backgrounds must be > 0");
        }
        if self.ego_size < 8 || self.view_size < 8 || self.chart_size < 4 {
            return bad("image sizes must be >= 8 and chart_size >= 4");
        }
        if !(self.mount.fov_deg > 0.0 && self.mount.fov_deg <= 180.0) {
            return bad("mount.fov_deg must lie in (0, 180]");
        }
        if !(self.mount.pitch_deg.abs() < 90.0) {
            return bad("mount.pitch_deg must lie in (-90, 90)");
        }
        if !(self.ring.distance > 0.0 && self.ring.fov_deg > 0.0 && self.ring.fov_deg < 180.0) {
            return bad("ring distance must be > 0 and fov in (0, 180)");
        }
        self.pose.validate().map_err(SynthError::Config)?;
        self.body.validate()?;
        Ok(())
    }

    /// Number of training frames; the rest are test frames.
    pub fn train_count(&self) -> usize {
        ((self.n_frames as f64 * self.split).round() as usize).min(self.n_frames)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `id` of a stream keyed by `seed`.
pub fn mix_seed(seed: u64, id: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ id)
}
