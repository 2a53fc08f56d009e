use std::fs;
use std::path::Path;

use egorender_core::body::{
    build_canonical_body, global_transforms, joint, skin_mesh, BodyMesh, BodyPose, JointTargets, PoseRecord, Skeleton,
};
use egorender_core::geometry::{Camera, FisheyeCamera, PinholeCamera, RigidTransform, Vec3};
use egorender_core::img::Image;
use egorender_core::posecon::{RingView, ViewIntrinsics};
use egorender_core::raster::{feature_render, rasterize, IuvImage, Surface};
use egorender_core::textures::{AtlasLayout, TextureStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{DatasetMeta, FrameInfo, FORMAT, FORMAT_VERSION};
use crate::motion::MotionSequence;
use crate::texture::{load_pngs, load_texture_dir, procedural_background, resize_nearest, sample_texture};
use crate::{mix_seed, GenConfig, MountConfig, RingConfig, SynthError};

const MOTION_DOMAIN: u64 = 0x3070_0003;
const FRAME_DOMAIN: u64 = 0xf4a3_0004;

/// Egocentric fisheye rigidly mounted on the head joint of `pose`.
pub fn ego_camera(
    skel: &Skeleton<f64>,
    pose: &BodyPose<f64>,
    mount: &MountConfig,
    size: u32,
) -> Result<FisheyeCamera<f64>, SynthError> {
    let (r, p) = global_transforms(skel, pose)[joint::HEAD];
    let eye = p + r * Vec3::new(0.0, mount.up, mount.forward);
    let pitch = mount.pitch_deg.to_radians();
    let dir = r * Vec3::new(0.0, -pitch.sin(), pitch.cos());
    let up = r * Vec3::new(0.0, 1.0, 0.0);
    let cam_pose = RigidTransform::look_at(eye, eye + dir, up);
    FisheyeCamera::fitted((size, size), cam_pose, mount.fov_deg.to_radians() / 2.0).map_err(|e| SynthError::Render(e.to_string()))
}

/// `n` pinhole cameras on a ring around the origin, fixed for the whole dataset.
pub fn ring_cameras(ring: &RingConfig, n: usize, size: u32) -> Result<Vec<PinholeCamera<f64>>, SynthError> {
    let intr = ViewIntrinsics { image_size: (size, size), fov_deg: ring.fov_deg };
    (0..n)
        .map(|k| {
            let view = RingView {
                azimuth_deg: ring.azimuth_offset_deg + 360.0 * k as f64 / n as f64,
                elevation_deg: ring.elevation_deg,
                distance: ring.distance,
            };
            view.camera(Vec3::zero(), &intr).map_err(|e| SynthError::Render(e.to_string()))
        })
        .collect()
}

/// Everything shared by all frames of one dataset.
pub(crate) struct Scene {
    pub cfg: GenConfig,
    pub skel: Skeleton<f64>,
    pub mesh: BodyMesh<f64>,
    pub views: Vec<PinholeCamera<f64>>,
    textures: Vec<TextureStack<f32>>,
    backgrounds: Option<Vec<Image<f32>>>,
    motion: Option<Vec<PoseRecord>>,
}

impl Scene {
    pub fn new(cfg: &GenConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let (skel, mesh) = build_canonical_body::<f64>(&cfg.body)?;
        let layout = AtlasLayout::new(mesh.part_count, cfg.chart_size);
        let textures = match &cfg.texture_dir {
            Some(dir) => load_texture_dir(dir, layout)?,
            None => (0..cfg.n_textures as u64).map(|i| sample_texture(cfg.seed, i, layout)).collect(),
        };
        let backgrounds = cfg.background_dir.as_deref().map(load_pngs).transpose()?;
        let motion = match &cfg.motion_file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| SynthError::io(path, e))?;
                let recs: Vec<PoseRecord> =
                    serde_json::from_str(&text).map_err(|e| SynthError::Format { path: path.clone(), msg: e.to_string() })?;
                if recs.is_empty() {
                    return Err(SynthError::Config("motion file holds no poses".into()));
                }
                for r in &recs {
                    BodyPose::<f64>::from_record(r).validate(skel.len())?;
                }
                Some(recs)
            }
            None => None,
        };
        let views = ring_cameras(&cfg.ring, cfg.n_external_views, cfg.view_size)?;
        Ok(Self { cfg: cfg.clone(), skel, mesh, views, textures, backgrounds, motion })
    }

    pub fn layout(&self) -> AtlasLayout {
        AtlasLayout::new(self.mesh.part_count, self.cfg.chart_size)
    }

    pub fn texture_count(&self) -> usize {
        self.textures.len()
    }

    fn background_count(&self) -> usize {
        self.backgrounds.as_ref().map_or(self.cfg.n_backgrounds, Vec::len)
    }

    pub fn pose(&self, id: usize) -> BodyPose<f64> {
        if let Some(m) = &self.motion {
            return BodyPose::from_record(&m[id % m.len()]);
        }
        let len = self.cfg.pose.sequence_length;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed ^ MOTION_DOMAIN, (id / len) as u64));
        MotionSequence::new(&self.cfg.pose, &mut rng).pose_at(id % len)
    }

    fn background(&self, id: usize, size: u32) -> Image<f32> {
        let s = size as usize;
        match &self.backgrounds {
            Some(b) => resize_nearest(&b[id], s, s),
            None => procedural_background(self.cfg.seed, id as u64, s, s),
        }
    }

    /// Posed mesh positions.
    pub fn skin(&self, pose: &BodyPose<f64>) -> Vec<Vec3<f64>> {
        skin_mesh(&self.skel, &self.mesh, pose)
    }

    pub fn rasterize(&self, positions: &[Vec3<f64>], cam: &Camera<f64>) -> Result<IuvImage<f64>, SynthError> {
        rasterize(&Surface::posed(&self.mesh, positions), cam).map_err(|e| SynthError::Render(e.to_string()))
    }

    /// All files of frame `id`, paths relative to the frame directory.
    pub fn frame_files(&self, id: usize) -> Result<Vec<(String, Vec<u8>)>, SynthError> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ FRAME_DOMAIN, id as u64));
        let texture_id = rng.gen_range(0..self.texture_count());
        let background_id = rng.gen_range(0..self.background_count());
        let tex = &self.textures[texture_id];
        let pose = self.pose(id);
        let positions = self.skin(&pose);
        let joints = JointTargets::from_skeleton_positions(&egorender_core::body::forward_kinematics(&self.skel, &pose));

        let mut files = Vec::new();
        let ego = Camera::Fisheye(ego_camera(&self.skel, &pose, &cfg.mount, cfg.ego_size)?);
        let (img, iuv_png) = self.render(&positions, &ego, tex, &self.background(background_id, cfg.ego_size))?;
        files.push(("ego.png".to_string(), encode(&img)?));
        files.push(("ego_iuv.png".to_string(), iuv_png));
        files.push(("ego_camera.json".to_string(), ego.to_json().into_bytes()));

        let bg = self.background(background_id, cfg.view_size);
        for (k, cam) in self.views.iter().enumerate() {
            let cam = Camera::Pinhole(cam.clone());
            let (img, iuv_png) = self.render(&positions, &cam, tex, &bg)?;
            let iuv = IuvImage::<f32>::decode_png(&iuv_png).map_err(|e| SynthError::Render(e.to_string()))?;
            files.push((format!("views/{k}/img.png"), encode(&img)?));
            files.push((format!("views/{k}/iuv.png"), iuv_png));
            files.push((format!("views/{k}/mask.png"), encode(&iuv.mask_image())?));
            files.push((format!("views/{k}/camera.json"), cam.to_json().into_bytes()));
        }

        let info = FrameInfo {
            frame_id: id,
            split: if id < cfg.train_count() { "train" } else { "test" }.to_string(),
            texture_id,
            background_id,
            pose: pose.to_record(),
            joints: joints.to_record(),
        };
        files.push(("pose.json".to_string(), serde_json::to_vec_pretty(&info).expect("frame info serializes")));
        Ok(files)
    }

    /// Unshaded texture render composited over `bg`; the image is computed
    /// from the quantized IUV that is stored, so the two agree exactly.
    fn render(
        &self,
        positions: &[Vec3<f64>],
        cam: &Camera<f64>,
        tex: &TextureStack<f32>,
        bg: &Image<f32>,
    ) -> Result<(Image<f32>, Vec<u8>), SynthError> {
        let iuv = self.rasterize(positions, cam)?;
        let png = iuv.encode_png().map_err(|e| SynthError::Render(e.to_string()))?;
        let q = IuvImage::<f32>::decode_png(&png).map_err(|e| SynthError::Render(e.to_string()))?;
        let fg = feature_render(tex, &q).map_err(|e| SynthError::Render(e.to_string()))?;
        let mut img = fg.select(&q.mask(), bg).map_err(|e| SynthError::Image(e.to_string()))?;
        if let Camera::Fisheye(c) = cam {
            // outside the image circle the sensor sees nothing
            let r2 = c.fov_radius() * c.fov_radius();
            let [cx, cy] = c.principal_point;
            for y in 0..img.height {
                for x in 0..img.width {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy > r2 {
                        img.pixel_mut(x, y).fill(0.0);
                    }
                }
            }
        }
        Ok((img, png))
    }

    pub fn meta(&self) -> DatasetMeta {
        let n_train = self.cfg.train_count();
        DatasetMeta {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            config: self.cfg.clone(),
            atlas: self.layout(),
            texture_count: self.texture_count(),
            joint_count: self.skel.len(),
            view_cameras: self.views.iter().map(|c| Camera::Pinhole(c.clone()).to_record()).collect(),
            train: (0..n_train).collect(),
            test: (n_train..self.cfg.n_frames).collect(),
        }
    }
}

fn encode(img: &Image<f32>) -> Result<Vec<u8>, SynthError> {
    img.encode_png().map_err(|e| SynthError::Image(e.to_string()))
}

fn write_frame(scene: &Scene, frames: &Path, id: usize) -> Result<(), SynthError> {
    let files = scene.frame_files(id)?;
    let tmp = frames.join(format!(".tmp-{id:05}"));
    let dst = frames.join(format!("{id:05}"));
    for stale in [&tmp, &dst] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| SynthError::io(stale, e))?;
        }
    }
    for (rel, bytes) in files {
        let path = tmp.join(rel);
        let parent = path.parent().expect("file inside frame dir");
        fs::create_dir_all(parent).map_err(|e| SynthError::io(parent, e))?;
        fs::write(&path, bytes).map_err(|e| SynthError::io(&path, e))?;
    }
    fs::rename(&tmp, &dst).map_err(|e| SynthError::io(&dst, e))
}

/// Writes the dataset under `out_dir` using `workers` threads (0: all
/// cores). Output bytes do not depend on `workers`. `meta.json` is written
/// last, so a directory without it is an interrupted run.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path, workers: usize) -> Result<DatasetMeta, SynthError> {
    let scene = Scene::new(cfg)?;
    let frames = out_dir.join("frames");
    let meta_path = out_dir.join("meta.json");
    if meta_path.exists() {
        fs::remove_file(&meta_path).map_err(|e| SynthError::io(&meta_path, e))?;
    }
    fs::create_dir_all(&frames).map_err(|e| SynthError::io(&frames, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SynthError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..cfg.n_frames).into_par_iter().try_for_each(|id| write_frame(&scene, &frames, id)))?;
    log::info!("wrote {} frames to {}", cfg.n_frames, out_dir.display());

    let meta = scene.meta();
    let tmp = out_dir.join(".meta.json.tmp");
    let text = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    fs::write(&tmp, text).map_err(|e| SynthError::io(&tmp, e))?;
    fs::rename(&tmp, &meta_path).map_err(|e| SynthError::io(&meta_path, e))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PoseSamplerConfig;

    fn rest_skel() -> Skeleton<f64> {
        build_canonical_body::<f64>(&Default::default()).unwrap().0
    }

    #[test]
    fn ego_camera_sits_in_front_of_the_head_looking_down() {
        let skel = rest_skel();
        let pose = BodyPose::rest(skel.len());
        let cam = ego_camera(&skel, &pose, &MountConfig::default(), 64).unwrap();
        let head = egorender_core::body::forward_kinematics(&skel, &pose)[joint::HEAD];
        let c = cam.pose.center();
        assert!((c - (head + Vec3::new(0.0, 0.03, 0.08))).norm() < 1e-12);
        // optical axis is the third row of the world-to-camera rotation
        let axis = cam.pose.rotation.row(2);
        let down = -(70f64.to_radians().sin());
        assert!((axis.y - down).abs() < 1e-12 && axis.z > 0.0);
    }

    #[test]
    fn ring_cameras_see_the_origin_at_the_image_centre() {
        let cams = ring_cameras(&RingConfig::default(), 4, 64).unwrap();
        for c in &cams {
            let (px, z) = c.project(c.pose.apply(Vec3::zero())).unwrap();
            assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 32.0).abs() < 1e-9);
            assert!((z - 2.6).abs() < 1e-9);
        }
        let d = (cams[0].pose.center() - cams[2].pose.center()).norm();
        assert!((d - 2.0 * 2.6 * 10f64.to_radians().cos()).abs() < 1e-9);
    }

    #[test]
    fn ego_view_sees_the_body_in_most_frames() {
        let cfg = GenConfig { ego_size: 64, n_frames: 1000, ..Default::default() };
        let scene = Scene::new(&cfg).unwrap();
        let mut ok = 0;
        for id in 0..cfg.n_frames {
            let pose = scene.pose(id);
            let cam = Camera::Fisheye(ego_camera(&scene.skel, &pose, &cfg.mount, cfg.ego_size).unwrap());
            let iuv = scene.rasterize(&scene.skin(&pose), &cam).unwrap();
            if iuv.foreground_count() as f64 > 0.01 * (64 * 64) as f64 {
                ok += 1;
            }
        }
        assert!(ok >= 950, "{ok} of 1000 frames show the body");
    }

    #[test]
    fn still_poses_repeat_and_motion_varies() {
        let cfg = GenConfig { pose: PoseSamplerConfig::still(), ..Default::default() };
        let scene = Scene::new(&cfg).unwrap();
        assert_eq!(scene.pose(0), scene.pose(123));
        let scene = Scene::new(&GenConfig::default()).unwrap();
        assert_ne!(scene.pose(0), scene.pose(1));
    }
}
