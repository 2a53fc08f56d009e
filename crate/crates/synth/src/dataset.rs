//! Reading a generated dataset back, and checking its ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use egorender_core::body::{BodyPose, JointTargets, PoseRecord, TargetsRecord};
use egorender_core::geometry::{Camera, CameraRecord, PinholeCamera};
use egorender_core::img::Image;
use egorender_core::raster::IuvImage;
use egorender_core::textures::AtlasLayout;
use serde::{Deserialize, Serialize};

use crate::generate::Scene;
use crate::{GenConfig, SynthError};

pub const FORMAT: &str = "egorender-synth";
pub const FORMAT_VERSION: u32 = 1;

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub config: GenConfig,
    pub atlas: AtlasLayout,
    pub texture_count: usize,
    pub joint_count: usize,
    /// External cameras; identical for every frame.
    pub view_cameras: Vec<CameraRecord>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contents of `frames/{id}/pose.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameInfo {
    pub frame_id: usize,
    pub split: String,
    pub texture_id: usize,
    pub background_id: usize,
    pub pose: PoseRecord,
    pub joints: TargetsRecord,
}

#[derive(Debug, Clone)]
pub struct EgoSample {
    pub image: Image<f32>,
    pub iuv: IuvImage<f32>,
    pub camera: Camera<f64>,
}

#[derive(Debug, Clone)]
pub struct ViewSample {
    pub image: Image<f32>,
    pub iuv: IuvImage<f32>,
    pub mask: Vec<bool>,
    pub camera: PinholeCamera<f64>,
}

/// One fully loaded frame.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub frame_id: usize,
    pub ego: EgoSample,
    pub pose: BodyPose<f64>,
    pub joints: JointTargets<f64>,
    pub views: Vec<ViewSample>,
    pub texture_id: usize,
    pub background_id: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
}

fn read(path: &Path) -> Result<Vec<u8>, SynthError> {
    fs::read(path).map_err(|e| SynthError::io(path, e))
}

fn format_err(path: &Path, e: impl ToString) -> SynthError {
    SynthError::Format { path: path.to_path_buf(), msg: e.to_string() }
}

fn load_image(path: &Path) -> Result<Image<f32>, SynthError> {
    Image::decode_png(&read(path)?).map_err(|e| format_err(path, e))
}

fn load_iuv(path: &Path) -> Result<IuvImage<f32>, SynthError> {
    IuvImage::decode_png(&read(path)?).map_err(|e| format_err(path, e))
}

fn load_camera(path: &Path) -> Result<Camera<f64>, SynthError> {
    let text = String::from_utf8(read(path)?).map_err(|e| format_err(path, e))?;
    Camera::from_json(&text).map_err(|e| format_err(path, e))
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, SynthError> {
        let path = root.join("meta.json");
        let meta: DatasetMeta = serde_json::from_slice(&read(&path)?).map_err(|e| format_err(&path, e))?;
        if meta.format != FORMAT || meta.version != FORMAT_VERSION {
            return Err(format_err(&path, format!("unsupported dataset format {} v{}", meta.format, meta.version)));
        }
        Ok(Self { root: root.to_path_buf(), meta })
    }

    pub fn len(&self) -> usize {
        self.meta.config.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view_count(&self) -> usize {
        self.meta.view_cameras.len()
    }

    pub fn frame_dir(&self, id: usize) -> PathBuf {
        self.root.join("frames").join(format!("{id:05}"))
    }

    pub fn load_info(&self, id: usize) -> Result<FrameInfo, SynthError> {
        let path = self.frame_dir(id).join("pose.json");
        serde_json::from_slice(&read(&path)?).map_err(|e| format_err(&path, e))
    }

    pub fn load_ego(&self, id: usize) -> Result<EgoSample, SynthError> {
        let dir = self.frame_dir(id);
        Ok(EgoSample {
            image: load_image(&dir.join("ego.png"))?,
            iuv: load_iuv(&dir.join("ego_iuv.png"))?,
            camera: load_camera(&dir.join("ego_camera.json"))?,
        })
    }

    pub fn load_view(&self, id: usize, k: usize) -> Result<ViewSample, SynthError> {
        let dir = self.frame_dir(id).join("views").join(k.to_string());
        let mask_path = dir.join("mask.png");
        let mask = load_image(&mask_path)?;
        let camera = match load_camera(&dir.join("camera.json"))? {
            Camera::Pinhole(c) => c,
            Camera::Fisheye(_) => return Err(format_err(&dir, "external view camera must be pinhole")),
        };
        Ok(ViewSample {
            image: load_image(&dir.join("img.png"))?,
            iuv: load_iuv(&dir.join("iuv.png"))?,
            mask: mask.data.iter().map(|&v| v > 0.5).collect(),
            camera,
        })
    }

    pub fn load_record(&self, id: usize) -> Result<SampleRecord, SynthError> {
        let info = self.load_info(id)?;
        let path = self.frame_dir(id).join("pose.json");
        Ok(SampleRecord {
            frame_id: id,
            ego: self.load_ego(id)?,
            pose: BodyPose::from_record(&info.pose),
            joints: JointTargets::from_record(&info.joints).map_err(|e| format_err(&path, e))?,
            views: (0..self.view_count()).map(|k| self.load_view(id, k)).collect::<Result<_, _>>()?,
            texture_id: info.texture_id,
            background_id: info.background_id,
        })
    }
}

/// Re-rasterizes the stored pose through every stored camera and compares
/// the encoded IUV bytes with the files on disk.
pub fn verify_frame(ds: &Dataset, id: usize) -> Result<(), SynthError> {
    let scene = Scene::new(&ds.meta.config)?;
    verify_with(&scene, ds, id)
}

fn verify_with(scene: &Scene, ds: &Dataset, id: usize) -> Result<(), SynthError> {
    let info = ds.load_info(id)?;
    let pose = BodyPose::from_record(&info.pose);
    pose.validate(scene.skel.len())?;
    let positions = scene.skin(&pose);
    let dir = ds.frame_dir(id);
    let mut pairs = vec![(dir.join("ego_camera.json"), dir.join("ego_iuv.png"))];
    for k in 0..ds.view_count() {
        let v = dir.join("views").join(k.to_string());
        pairs.push((v.join("camera.json"), v.join("iuv.png")));
    }
    for (cam_path, iuv_path) in pairs {
        let cam = load_camera(&cam_path)?;
        let iuv = scene.rasterize(&positions, &cam)?;
        let bytes = iuv.encode_png().map_err(|e| SynthError::Render(e.to_string()))?;
        if bytes != read(&iuv_path)? {
            return Err(SynthError::Mismatch { frame: id, msg: format!("{} differs from re-rasterization", iuv_path.display()) });
        }
        let mask_path = iuv_path.with_file_name("mask.png");
        if mask_path.exists() {
            let mask = load_image(&mask_path)?;
            if mask.data.iter().zip(&iuv.part).any(|(&m, &p)| (m > 0.5) != (p > 0)) {
                return Err(SynthError::Mismatch { frame: id, msg: format!("{} is not part > 0", mask_path.display()) });
            }
        }
    }
    Ok(())
}

/// Verifies every frame; returns the number checked.
pub fn verify_dataset(ds: &Dataset) -> Result<usize, SynthError> {
    let scene = Scene::new(&ds.meta.config)?;
    for id in 0..ds.len() {
        verify_with(&scene, ds, id)?;
    }
    Ok(ds.len())
}
