use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{
    forward_kinematics, initial_pose_from_targets, joint, skin_mesh, solve_ik, BodyError, BodyMesh, BodyPose, IkOptions,
    JointTargets, Skeleton,
};
use crate::geometry::{Camera, GeometryError, Mat3, PinholeCamera, RigidTransform, Vec3};
use crate::img::Image;
use crate::raster::{rasterize, IuvImage, RasterError, Surface};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum PoseConError {
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid view: {0}")]
    View(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    /// Body re-centred at the origin with the hip line along +x (facing +z).
    Local,
    /// Body placed by the IK root composed with `ViewSpec::root`.
    Global,
}

impl FromStr for CoordMode {
    type Err = PoseConError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            _ => Err(PoseConError::View(format!("unknown coordinate mode `{s}`"))),
        }
    }
}

/// Camera on a ring around the subject's root, looking at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingView {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
}

impl Default for RingView {
    fn default() -> Self {
        Self { azimuth_deg: 0.0, elevation_deg: 15.0, distance: 3.0 }
    }
}

impl FromStr for RingView {
    type Err = PoseConError;
    /// `az=<deg>,el=<deg>,dist=<m>`; omitted keys keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = Self::default();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, val) = item.split_once('=').ok_or_else(|| PoseConError::View(format!("expected key=value, got `{item}`")))?;
            let x: f64 = val.trim().parse().map_err(|_| PoseConError::View(format!("bad number in `{item}`")))?;
            match k.trim() {
                "az" => v.azimuth_deg = x,
                "el" => v.elevation_deg = x,
                "dist" => v.distance = x,
                other => return Err(PoseConError::View(format!("unknown view key `{other}`"))),
            }
        }
        if !(v.distance > 0.0 && v.distance.is_finite()) {
            return Err(PoseConError::View("dist must be > 0".into()));
        }
        Ok(v)
    }
}

/// Intrinsics used for ring cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewIntrinsics {
    pub image_size: (u32, u32),
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
}

impl Default for ViewIntrinsics {
    fn default() -> Self {
        Self { image_size: (128, 128), fov_deg: 45.0 }
    }
}

impl RingView {
    /// World-to-camera pinhole looking at `target` (world y up).
    pub fn camera<T: Real>(&self, target: Vec3<T>, intr: &ViewIntrinsics) -> Result<PinholeCamera<T>, PoseConError> {
        if !(self.distance > 0.0) {
            return Err(PoseConError::View("dist must be > 0".into()));
        }
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let dir = Vec3::<T>::from_f64([el.cos() * az.sin(), el.sin(), el.cos() * az.cos()]);
        let eye = target + dir * T::lit(self.distance);
        let pose = RigidTransform::look_at(eye, target, Vec3::new(T::zero(), T::one(), T::zero()));
        Ok(pinhole_from_fov(intr, pose)?)
    }
}

pub fn pinhole_from_fov<T: Real>(intr: &ViewIntrinsics, pose: RigidTransform<T>) -> Result<PinholeCamera<T>, GeometryError> {
    let (w, h) = intr.image_size;
    let f = (h as f64 / 2.0) / (intr.fov_deg.to_radians() / 2.0).tan();
    PinholeCamera::new([T::lit(f), T::lit(f)], [T::lit(w as f64 / 2.0), T::lit(h as f64 / 2.0)], intr.image_size, pose)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewCamera<T> {
    Pinhole(PinholeCamera<T>),
    Ring(RingView, ViewIntrinsics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec<T> {
    pub mode: CoordMode,
    pub camera: ViewCamera<T>,
    /// Extra world placement applied in global mode; ignored in local mode.
    pub root: RigidTransform<T>,
}

impl<T: Real> ViewSpec<T> {
    pub fn ring(mode: CoordMode, ring: RingView, intr: ViewIntrinsics) -> Self {
        Self { mode, camera: ViewCamera::Ring(ring, intr), root: RigidTransform::identity() }
    }

    pub fn pinhole(mode: CoordMode, cam: PinholeCamera<T>) -> Self {
        Self { mode, camera: ViewCamera::Pinhole(cam), root: RigidTransform::identity() }
    }
}

/// Source of the 15 observed joints for an egocentric image.
pub trait PoseEstimator {
    fn estimate(&self, ego: &Image<f32>) -> Result<JointTargets<f64>, BodyError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetPose<T> {
    pub iuv: IuvImage<T>,
    /// Pose in the frame that was rasterized (local frame, or world before `root`).
    pub pose: BodyPose<T>,
    /// Camera actually used, including the root placement.
    pub camera: PinholeCamera<T>,
    pub head_pixel: Option<[T; 2]>,
    pub ik_mean_residual: T,
}

/// Grid on which local-mode joints are snapped, so that a global shift of
/// the input joints cannot change the fitted pose.
const LOCAL_GRID: f64 = 1e-7;

/// Re-centres joints on the hip midpoint and turns the hip line onto +x.
pub fn localize_joints<T: Real>(joints: &JointTargets<T>) -> JointTargets<T> {
    let snap = |v: Vec3<T>| {
        let g = T::lit(LOCAL_GRID);
        Vec3::new((v.x / g).round() * g, (v.y / g).round() * g, (v.z / g).round() * g)
    };
    let (lh, rh) = (joints.get("l_hip").unwrap(), joints.get("r_hip").unwrap());
    let mid = (lh + rh) * T::half();
    let centred = joints.positions.map(|p| snap(p - mid));
    let hip = snap(lh - mid) - snap(rh - mid);
    let yaw = if hip.x == T::zero() && hip.z == T::zero() { T::zero() } else { hip.z.atan2(hip.x) };
    let r = Mat3::rot_y(yaw);
    JointTargets { positions: centred.map(|p| snap(r * p)), confidence: joints.confidence }
}

/// IK fit of the body to `joints`, then rasterization from the requested view.
pub fn construct_target_pose<T: Real>(
    joints: &JointTargets<T>,
    view: &ViewSpec<T>,
    skel: &Skeleton<T>,
    mesh: &BodyMesh<T>,
    ik: &IkOptions<T>,
) -> Result<TargetPose<T>, PoseConError> {
    joints.validate()?;
    let targets = match view.mode {
        CoordMode::Local => localize_joints(joints),
        CoordMode::Global => joints.clone(),
    };
    let init = initial_pose_from_targets(skel, &targets);
    let fit = solve_ik(skel, &targets, &init, ik)?;
    let root = match view.mode {
        CoordMode::Local => RigidTransform::identity(),
        CoordMode::Global => view.root.clone(),
    };
    let fk = forward_kinematics(skel, &fit.pose);
    let camera = match &view.camera {
        ViewCamera::Pinhole(c) => c.clone(),
        ViewCamera::Ring(ring, intr) => ring.camera(root.apply(fk[joint::PELVIS]), intr)?,
    };
    let camera = PinholeCamera { pose: camera.pose.compose(&root), ..camera };
    let verts = skin_mesh(skel, mesh, &fit.pose);
    let iuv = rasterize(&Surface::posed(mesh, &verts), &Camera::Pinhole(camera.clone()))?;
    let head_pixel = camera.project(camera.pose.apply(fk[joint::HEAD])).map(|(px, _)| px);
    Ok(TargetPose { iuv, pose: fit.pose, camera, head_pixel, ik_mean_residual: fit.mean_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{build_canonical_body, BodyConfig};

    fn body() -> (Skeleton<f64>, BodyMesh<f64>) {
        build_canonical_body(&BodyConfig::default()).unwrap()
    }

    fn standing(skel: &Skeleton<f64>, yaw: f64, at: Vec3<f64>) -> JointTargets<f64> {
        let mut pose = BodyPose::rest(skel.len());
        pose.root = RigidTransform::new(Mat3::rot_y(yaw), at);
        pose.rotations[joint::L_ELBOW] = Mat3::rot_z(0.4);
        pose.rotations[joint::R_KNEE] = Mat3::rot_x(0.5);
        JointTargets::from_skeleton_positions(&forward_kinematics(skel, &pose))
    }

    #[test]
    fn view_syntax() {
        let v: RingView = "az=30, el=10,dist=2.5".parse().unwrap();
        assert_eq!(v, RingView { azimuth_deg: 30.0, elevation_deg: 10.0, distance: 2.5 });
        assert!("az=1,dist=0".parse::<RingView>().is_err());
        assert!("zoom=2".parse::<RingView>().is_err());
        assert_eq!("global".parse::<CoordMode>().unwrap(), CoordMode::Global);
    }

    #[test]
    fn ring_camera_looks_at_target() {
        let target = Vec3::new(0.5, 1.0, -2.0);
        for az in [0.0, 90.0, 200.0] {
            let cam: PinholeCamera<f64> = RingView { azimuth_deg: az, elevation_deg: 20.0, distance: 3.0 }
                .camera(target, &ViewIntrinsics::default())
                .unwrap();
            let (px, depth) = cam.project(cam.pose.apply(target)).unwrap();
            assert!((px[0] - 64.0).abs() < 1e-9 && (px[1] - 64.0).abs() < 1e-9);
            assert!((depth - 3.0).abs() < 1e-9);
            // world up maps to image up
            let (up, _) = cam.project(cam.pose.apply(target + Vec3::new(0.0, 0.3, 0.0))).unwrap();
            assert!(up[1] < 64.0);
        }
    }

    #[test]
    fn local_mode_ignores_translation_bit_exactly() {
        let (skel, mesh) = body();
        let j = standing(&skel, 0.7, Vec3::new(0.2, 0.95, 0.1));
        let view = ViewSpec::ring(CoordMode::Local, RingView::default(), ViewIntrinsics::default());
        let a = construct_target_pose(&j, &view, &skel, &mesh, &IkOptions::default()).unwrap();
        let b = construct_target_pose(&j.translated(Vec3::new(3.25, -1.5, 7.125)), &view, &skel, &mesh, &IkOptions::default()).unwrap();
        assert!(a.iuv.foreground_count() > 500);
        assert_eq!(a.iuv, b.iuv);
        assert_eq!(a.head_pixel, b.head_pixel);
    }

    #[test]
    fn local_mode_faces_the_front_camera() {
        let (skel, mesh) = body();
        let j = standing(&skel, 2.0, Vec3::new(0.0, 0.95, 0.0));
        let loc = localize_joints(&j);
        let l = loc.get("l_hip").unwrap();
        assert!(l.x > 0.0 && l.z.abs() < 1e-6);
        let view = ViewSpec::ring(CoordMode::Local, RingView::default(), ViewIntrinsics::default());
        let t = construct_target_pose(&j, &view, &skel, &mesh, &IkOptions::default()).unwrap();
        assert!(t.ik_mean_residual < 1e-3);
        assert!(t.head_pixel.is_some());
    }

    #[test]
    fn global_root_equals_inverse_camera_motion() {
        let (skel, mesh) = body();
        let j = standing(&skel, 0.3, Vec3::new(0.0, 0.95, 0.0));
        // axis-aligned camera and exactly representable M keep both paths exact
        let cam_pose = RigidTransform::new(Mat3::from_rows(
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ), Vec3::new(0.0, 0.5, 4.0));
        let intr = ViewIntrinsics::default();
        let cam = pinhole_from_fov(&intr, cam_pose.clone()).unwrap();
        let m = RigidTransform::new(
            Mat3::from_rows(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)),
            Vec3::new(0.25, 0.0, -0.5),
        );
        let r1 = RigidTransform::new(Mat3::rot_y(std::f64::consts::PI), Vec3::new(0.5, 0.0, 0.25));
        let r1 = RigidTransform { rotation: Mat3::from_row_major(&r1.rotation.to_row_major().map(f64::round)), ..r1 };
        let mut moved = ViewSpec::pinhole(CoordMode::Global, cam.clone());
        moved.root = m.compose(&r1);
        let a = construct_target_pose(&j, &moved, &skel, &mesh, &IkOptions::default()).unwrap();
        let mut shifted = ViewSpec::pinhole(CoordMode::Global, PinholeCamera { pose: cam_pose.compose(&m), ..cam });
        shifted.root = r1;
        let b = construct_target_pose(&j, &shifted, &skel, &mesh, &IkOptions::default()).unwrap();
        assert!(a.iuv.foreground_count() > 100);
        assert_eq!(a.iuv, b.iuv);
    }

    #[test]
    fn camera_behind_subject_gives_empty_image() {
        let (skel, mesh) = body();
        let j = standing(&skel, 0.0, Vec3::new(0.0, 0.95, 0.0));
        // camera at z = 5 looking towards +z: the body is behind it
        let pose = RigidTransform::look_at(Vec3::new(0.0, 1.0, 5.0), Vec3::new(0.0, 1.0, 10.0), Vec3::new(0.0, 1.0, 0.0));
        let cam = pinhole_from_fov(&ViewIntrinsics::default(), pose).unwrap();
        let t = construct_target_pose(&j, &ViewSpec::pinhole(CoordMode::Global, cam), &skel, &mesh, &IkOptions::default()).unwrap();
        assert_eq!(t.iuv.foreground_count(), 0);
        assert!(t.head_pixel.is_none());
    }

    #[test]
    fn azimuth_sweep_never_empty() {
        let (skel, mesh) = body();
        let j = standing(&skel, 0.0, Vec3::new(0.0, 0.95, 0.0));
        let mut counts = Vec::new();
        for k in 0..36 {
            let ring = RingView { azimuth_deg: 10.0 * k as f64, ..RingView::default() };
            let view = ViewSpec::ring(CoordMode::Local, ring, ViewIntrinsics::default());
            counts.push(construct_target_pose(&j, &view, &skel, &mesh, &IkOptions::default()).unwrap().iuv.foreground_count());
        }
        let max = *counts.iter().max().unwrap() as f64;
        for k in 0..36 {
            assert!(counts[k] > 0);
            // neighbouring views differ by a small fraction of the silhouette
            let d = (counts[k] as f64 - counts[(k + 1) % 36] as f64).abs();
            assert!(d < 0.25 * max, "jump of {d} px between {k} and {}", k + 1);
        }
    }
}
