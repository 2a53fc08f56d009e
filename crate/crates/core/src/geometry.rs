//! Small fixed-size linear algebra, rigid transforms and the two camera models.
//!
//! Camera coordinates follow the usual vision convention: x right, y down,
//! z forward along the optical axis. Every camera stores its world-to-camera
//! transform, so `p_cam = R * p_world + t`.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("cannot project the zero vector")]
    ZeroVector,
    #[error("pixel ({x}, {y}) lies outside the fisheye field of view (radius {radius} > {limit})")]
    OutsideFov { x: f64, y: f64, radius: f64, limit: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy(), self.z.to_f64_lossy()]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(self.x.cast(), self.y.cast(), self.z.cast())
    }

    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self { m: [[r0.x, r0.y, r0.z], [r1.x, r1.y, r1.z], [r2.x, r2.y, r2.z]] }
    }

    pub fn from_row_major(v: &[T; 9]) -> Self {
        Self { m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]] }
    }

    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.m[i][0], self.m[i][1], self.m[i][2])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self { m: [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]] }
    }

    pub fn det(&self) -> T {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    /// Rotation by `angle` radians about `axis` (Rodrigues). A zero axis yields identity.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        match axis.normalized() {
            Some(k) => Self::rodrigues(k, angle.sin(), angle.cos()),
            None => Self::identity(),
        }
    }

    /// Exponential map of a rotation vector.
    pub fn exp(omega: Vec3<T>) -> Self {
        let theta = omega.norm();
        if theta == T::zero() {
            return Self::identity();
        }
        Self::rodrigues(omega * (T::one() / theta), theta.sin(), theta.cos())
    }

    fn rodrigues(k: Vec3<T>, s: T, c: T) -> Self {
        let v = T::one() - c;
        Self {
            m: [
                [c + k.x * k.x * v, k.x * k.y * v - k.z * s, k.x * k.z * v + k.y * s],
                [k.y * k.x * v + k.z * s, c + k.y * k.y * v, k.y * k.z * v - k.x * s],
                [k.z * k.x * v - k.y * s, k.z * k.y * v + k.x * s, c + k.z * k.z * v],
            ],
        }
    }

    pub fn rot_x(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, c, -s], [z, s, c]] }
    }

    pub fn rot_y(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[c, z, s], [z, o, z], [-s, z, c]] }
    }

    pub fn rot_z(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[c, -s, z], [s, c, z], [z, z, o]] }
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> T {
        let tr = self.m[0][0] + self.m[1][1] + self.m[2][2];
        let c = ((tr - T::one()) * T::half()).max(-T::one()).min(T::one());
        c.acos()
    }

    /// Largest absolute entry of `R^T R - I`.
    pub fn orthonormality_error(&self) -> T {
        let p = self.transpose() * *self;
        let mut e = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                e = e.max((p.m[i][j] - target).abs());
            }
        }
        e
    }

    /// Nearest rotation via Gram-Schmidt on the rows.
    pub fn orthonormalized(&self) -> Self {
        let r0 = self.row(0).normalized().unwrap_or(Vec3::new(T::one(), T::zero(), T::zero()));
        let r1 = (self.row(1) - r0 * r0.dot(self.row(1)))
            .normalized()
            .unwrap_or(Vec3::new(T::zero(), T::one(), T::zero()));
        let r2 = r0.cross(r1);
        Self::from_rows(r0, r1, r2)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        Mat3 { m: self.m.map(|r| r.map(|v| v.cast())) }
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Self { m }
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }
}

/// `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zero() }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Checks `R^T R = I` and `det R = +1` within `tol`.
    pub fn validate(&self, tol: T) -> Result<(), GeometryError> {
        let e = self.rotation.orthonormality_error();
        let d = (self.rotation.det() - T::one()).abs();
        if !(e <= tol && d <= tol) || !self.translation.is_finite() {
            return Err(GeometryError::NotOrthonormal(e.max(d).to_f64_lossy()));
        }
        Ok(())
    }

    /// World-to-camera transform of a camera at `eye` looking at `target`.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, world_up: Vec3<T>) -> Self {
        let fwd = (target - eye).normalized().unwrap_or(Vec3::new(T::zero(), T::zero(), T::one()));
        let right = fwd.cross(world_up).normalized().unwrap_or_else(|| {
            // looking straight along the up axis: pick any perpendicular
            let alt = if fwd.x.abs() < T::lit(0.9) {
                Vec3::new(T::one(), T::zero(), T::zero())
            } else {
                Vec3::new(T::zero(), T::zero(), T::one())
            };
            fwd.cross(alt).normalized().unwrap()
        });
        let down = fwd.cross(right);
        let rotation = Mat3::from_rows(right, down, fwd);
        Self { rotation, translation: -(rotation * eye) }
    }

    /// Position of the camera centre for a world-to-camera transform.
    pub fn center(&self) -> Vec3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        RigidTransform { rotation: self.rotation.cast(), translation: self.translation.cast() }
    }
}

/// Equidistant fisheye camera: image radius `r = focal * theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeCamera<T> {
    pub focal: T,
    pub principal_point: [T; 2],
    pub image_size: (u32, u32),
    pub pose: RigidTransform<T>,
    /// Half-angle of the field of view, in `(0, pi/2]`.
    pub fov_max: T,
}

impl<T: Real> FisheyeCamera<T> {
    pub fn new(
        focal: T,
        principal_point: [T; 2],
        image_size: (u32, u32),
        pose: RigidTransform<T>,
        fov_max: T,
    ) -> Result<Self, GeometryError> {
        let cam = Self { focal, principal_point, image_size, pose, fov_max };
        cam.validate()?;
        Ok(cam)
    }

    /// Centred camera whose full field of view just fits the shorter image side.
    pub fn fitted(image_size: (u32, u32), pose: RigidTransform<T>, fov_max: T) -> Result<Self, GeometryError> {
        let half = T::of_usize(image_size.0.min(image_size.1) as usize) * T::half();
        let pp = [
            T::of_usize(image_size.0 as usize) * T::half(),
            T::of_usize(image_size.1 as usize) * T::half(),
        ];
        Self::new(half / fov_max, pp, image_size, pose, fov_max)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal > T::zero() && self.focal.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!("fisheye focal must be > 0, got {}", self.focal)));
        }
        if !(self.fov_max > T::zero() && self.fov_max <= T::FRAC_PI_2()) {
            return Err(GeometryError::InvalidCamera(format!("fov_max must lie in (0, pi/2], got {}", self.fov_max)));
        }
        Ok(())
    }

    /// Projects a camera-space point. `Ok(None)` when it lies outside the field of view.
    pub fn project(&self, p: Vec3<T>) -> Result<Option<[T; 2]>, GeometryError> {
        match self.project_unbounded(p)? {
            Some((px, theta)) if theta <= self.fov_max => Ok(Some(px)),
            _ => Ok(None),
        }
    }

    /// Equidistant projection without the field-of-view test; also returns the
    /// off-axis angle. `None` only for the exact backward direction.
    pub fn project_unbounded(&self, p: Vec3<T>) -> Result<Option<([T; 2], T)>, GeometryError> {
        let rxy = (p.x * p.x + p.y * p.y).sqrt();
        if rxy == T::zero() {
            if p.z > T::zero() {
                return Ok(Some((self.principal_point, T::zero())));
            }
            if p.z == T::zero() {
                return Err(GeometryError::ZeroVector);
            }
            return Ok(None);
        }
        let theta = rxy.atan2(p.z);
        let s = self.focal * theta / rxy;
        Ok(Some(([self.principal_point[0] + s * p.x, self.principal_point[1] + s * p.y], theta)))
    }

    /// Unit viewing direction of a pixel.
    pub fn unproject(&self, px: [T; 2]) -> Result<Vec3<T>, GeometryError> {
        let dx = px[0] - self.principal_point[0];
        let dy = px[1] - self.principal_point[1];
        let r = (dx * dx + dy * dy).sqrt();
        let limit = self.focal * self.fov_max;
        // allow for rounding in pixels computed exactly on the boundary
        if r > limit * (T::one() + T::epsilon() * T::lit(8.0)) {
            return Err(GeometryError::OutsideFov {
                x: px[0].to_f64_lossy(),
                y: px[1].to_f64_lossy(),
                radius: r.to_f64_lossy(),
                limit: limit.to_f64_lossy(),
            });
        }
        if r == T::zero() {
            return Ok(Vec3::new(T::zero(), T::zero(), T::one()));
        }
        let theta = (r / self.focal).min(self.fov_max);
        let (s, c) = theta.sin_cos();
        Ok(Vec3::new(s * dx / r, s * dy / r, c))
    }

    /// Radius (pixels) of the field-of-view circle.
    pub fn fov_radius(&self) -> T {
        self.focal * self.fov_max
    }
}

/// Pinhole camera with separate focal lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera<T> {
    pub focal: [T; 2],
    pub principal_point: [T; 2],
    pub image_size: (u32, u32),
    pub pose: RigidTransform<T>,
}

impl<T: Real> PinholeCamera<T> {
    /// Points closer than this (metres) along the optical axis never project.
    pub fn min_depth() -> T {
        T::lit(1e-6)
    }

    pub fn new(
        focal: [T; 2],
        principal_point: [T; 2],
        image_size: (u32, u32),
        pose: RigidTransform<T>,
    ) -> Result<Self, GeometryError> {
        let cam = Self { focal, principal_point, image_size, pose };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal[0] > T::zero() && self.focal[1] > T::zero()) {
            return Err(GeometryError::InvalidCamera("pinhole focal lengths must be > 0".into()));
        }
        Ok(())
    }

    /// Returns `(pixel, depth)`; `None` when the point is not in front of the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<([T; 2], T)> {
        if !(p.z > Self::min_depth()) {
            return None;
        }
        let inv = T::one() / p.z;
        Some((
            [self.principal_point[0] + self.focal[0] * p.x * inv, self.principal_point[1] + self.focal[1] * p.y * inv],
            p.z,
        ))
    }
}

/// Either camera model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Camera<T> {
    Fisheye(FisheyeCamera<T>),
    Pinhole(PinholeCamera<T>),
}

impl<T: Real> Camera<T> {
    pub fn pose(&self) -> &RigidTransform<T> {
        match self {
            Camera::Fisheye(c) => &c.pose,
            Camera::Pinhole(c) => &c.pose,
        }
    }

    pub fn pose_mut(&mut self) -> &mut RigidTransform<T> {
        match self {
            Camera::Fisheye(c) => &mut c.pose,
            Camera::Pinhole(c) => &mut c.pose,
        }
    }

    pub fn image_size(&self) -> (u32, u32) {
        match self {
            Camera::Fisheye(c) => c.image_size,
            Camera::Pinhole(c) => c.image_size,
        }
    }

    pub fn to_record(&self) -> CameraRecord {
        let pose = self.pose();
        let rotation = pose.rotation.to_row_major().map(|v| v.to_f64_lossy());
        let translation = pose.translation.to_f64();
        match self {
            Camera::Fisheye(c) => CameraRecord {
                kind: CameraKind::Fisheye,
                focal: Focal::Scalar(c.focal.to_f64_lossy()),
                principal_point: c.principal_point.map(|v| v.to_f64_lossy()),
                image_size: [c.image_size.0, c.image_size.1],
                rotation,
                translation,
                fov_max: Some(c.fov_max.to_f64_lossy()),
            },
            Camera::Pinhole(c) => CameraRecord {
                kind: CameraKind::Pinhole,
                focal: Focal::Pair(c.focal.map(|v| v.to_f64_lossy())),
                principal_point: c.principal_point.map(|v| v.to_f64_lossy()),
                image_size: [c.image_size.0, c.image_size.1],
                rotation,
                translation,
                fov_max: None,
            },
        }
    }

    pub fn from_record(r: &CameraRecord) -> Result<Self, GeometryError> {
        let pose = RigidTransform::new(
            Mat3::from_row_major(&r.rotation.map(T::lit)),
            Vec3::from_f64(r.translation),
        );
        pose.validate(T::lit(1e-6))?;
        let pp = r.principal_point.map(T::lit);
        let size = (r.image_size[0], r.image_size[1]);
        match r.kind {
            CameraKind::Fisheye => {
                let focal = match r.focal {
                    Focal::Scalar(f) => f,
                    Focal::Pair([fx, fy]) if fx == fy => fx,
                    Focal::Pair(_) => {
                        return Err(GeometryError::InvalidCamera("fisheye focal must be a scalar".into()))
                    }
                };
                let fov = r.fov_max.unwrap_or(std::f64::consts::FRAC_PI_2);
                Ok(Camera::Fisheye(FisheyeCamera::new(T::lit(focal), pp, size, pose, T::lit(fov))?))
            }
            CameraKind::Pinhole => {
                let focal = match r.focal {
                    Focal::Scalar(f) => [f, f],
                    Focal::Pair(p) => p,
                };
                Ok(Camera::Pinhole(PinholeCamera::new(focal.map(T::lit), pp, size, pose)?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("camera record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GeometryError> {
        let rec: CameraRecord =
            serde_json::from_str(s).map_err(|e| GeometryError::InvalidCamera(e.to_string()))?;
        Self::from_record(&rec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Fisheye,
    Pinhole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Focal {
    Scalar(f64),
    Pair([f64; 2]),
}

/// On-disk camera description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    #[serde(rename = "type")]
    pub kind: CameraKind,
    pub focal: Focal,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_max: Option<f64>,
}

/// Rigid transform as stored in `--root` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TransformRecord {
    pub fn from_transform<T: Real>(t: &RigidTransform<T>) -> Self {
        Self { rotation: t.rotation.to_row_major().map(|v| v.to_f64_lossy()), translation: t.translation.to_f64() }
    }

    pub fn to_transform<T: Real>(&self) -> Result<RigidTransform<T>, GeometryError> {
        let t = RigidTransform::new(Mat3::from_row_major(&self.rotation.map(T::lit)), Vec3::from_f64(self.translation));
        t.validate(T::lit(1e-6))?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn fisheye() -> FisheyeCamera<f64> {
        FisheyeCamera::new(100.0, [160.0, 160.0], (320, 320), RigidTransform::identity(), FRAC_PI_2).unwrap()
    }

    fn pinhole() -> PinholeCamera<f64> {
        PinholeCamera::new([200.0, 200.0], [128.0, 128.0], (256, 256), RigidTransform::identity()).unwrap()
    }

    #[test]
    fn fisheye_on_axis_hits_principal_point() {
        let px = fisheye().project(Vec3::new(0.0, 0.0, 1.0)).unwrap().unwrap();
        assert_eq!(px, [160.0, 160.0]);
    }

    #[test]
    fn fisheye_horizon_lands_on_fov_circle() {
        let px = fisheye().project(Vec3::new(1.0, 0.0, 0.0)).unwrap().unwrap();
        assert!((px[0] - (160.0 + 100.0 * FRAC_PI_2)).abs() < 1e-9);
        assert!((px[0] - 317.079_632_679_489_7).abs() < 1e-9);
        assert_eq!(px[1], 160.0);
    }

    #[test]
    fn fisheye_rejects_backward_and_zero() {
        assert_eq!(fisheye().project(Vec3::new(0.0, 0.0, -1.0)).unwrap(), None);
        assert_eq!(fisheye().project(Vec3::zero()), Err(GeometryError::ZeroVector));
        // just past the half-angle
        let d = Vec3::new(1.0, 0.0, -1e-3);
        assert_eq!(fisheye().project(d).unwrap(), None);
    }

    #[test]
    fn fisheye_unproject_examples() {
        let cam = fisheye();
        assert_eq!(cam.unproject([160.0, 160.0]).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        let d = cam.unproject([160.0, 160.0 + 100.0 * FRAC_PI_2]).unwrap();
        assert!(d.z.abs() < 1e-15);
        assert!((d.y - 1.0).abs() < 1e-15);
        assert!(matches!(cam.unproject([400.0, 160.0]), Err(GeometryError::OutsideFov { .. })));
    }

    #[test]
    fn fisheye_round_trip_random_pixels() {
        let cam = fisheye();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r_max = cam.fov_radius();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let r = r_max * rng.gen::<f64>().sqrt();
            let phi = rng.gen::<f64>() * 2.0 * PI;
            let px = [160.0 + r * phi.cos(), 160.0 + r * phi.sin()];
            let back = cam.project(cam.unproject(px).unwrap()).unwrap().unwrap();
            worst = worst.max((back[0] - px[0]).hypot(back[1] - px[1]));
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    #[test]
    fn fisheye_radius_is_monotone_in_angle() {
        let cam = fisheye();
        let mut last = -1.0;
        for i in 0..=200 {
            let theta = FRAC_PI_2 * i as f64 / 200.0;
            let px = cam.project(Vec3::new(theta.sin(), 0.0, theta.cos())).unwrap().unwrap();
            let r = px[0] - 160.0;
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(FisheyeCamera::new(0.0, [0.0, 0.0], (8, 8), RigidTransform::identity(), 1.0).is_err());
        assert!(FisheyeCamera::new(1.0, [0.0, 0.0], (8, 8), RigidTransform::identity(), 2.0).is_err());
        assert!(PinholeCamera::new([1.0, -1.0], [0.0, 0.0], (8, 8), RigidTransform::identity()).is_err());
    }

    #[test]
    fn pinhole_examples() {
        let cam = pinhole();
        assert_eq!(cam.project(Vec3::new(0.0, 0.0, 2.0)), Some(([128.0, 128.0], 2.0)));
        assert_eq!(cam.project(Vec3::new(1.0, 0.0, 2.0)), Some(([228.0, 128.0], 2.0)));
        assert_eq!(cam.project(Vec3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(cam.project(Vec3::new(0.0, 0.0, 1e-7)), None);
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3<f64> {
        let axis = Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        Mat3::from_axis_angle(axis, rng.gen::<f64>() * PI)
    }

    #[test]
    fn rigid_inverse_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = RigidTransform::new(random_rotation(&mut rng), Vec3::new(1.0, -2.0, 0.5));
        let b = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.3, 0.1, -4.0));
        let c = RigidTransform::new(random_rotation(&mut rng), Vec3::new(-1.0, 2.0, 3.0));
        let ab_c = a.compose(&b).compose(&c);
        let a_bc = a.compose(&b.compose(&c));
        let id = a.compose(&a.inverse());
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let p = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            worst = worst.max((id.apply(p) - p).norm());
            worst = worst.max((ab_c.apply(p) - a_bc.apply(p)).norm());
        }
        assert!(worst < 1e-9, "{worst}");
        assert!(a.validate(1e-9).is_ok());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye: Vec3<f64> = Vec3::new(0.0, 1.0, 3.0);
        let t = RigidTransform::look_at(eye, Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let p = t.apply(Vec3::new(0.0, 1.0, 0.0));
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 3.0).abs() < 1e-12);
        // world +x (subject's left) appears on the image right when seen from the front
        assert!(t.apply(Vec3::new(0.5, 1.0, 0.0)).x > 0.0);
        // world up is image up (negative y)
        assert!(t.apply(Vec3::new(0.0, 1.5, 0.0)).y < 0.0);
        assert!((t.center() - eye).norm() < 1e-12);
        assert!(t.validate(1e-12).is_ok());
    }

    #[test]
    fn camera_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.1, 0.2, 0.3));
        let fish = Camera::Fisheye(FisheyeCamera::new(40.5, [64.0, 64.0], (128, 128), pose, 1.2).unwrap());
        let pin = Camera::Pinhole(PinholeCamera::new([90.0, 91.0], [32.0, 31.5], (64, 64), pose).unwrap());
        for cam in [fish, pin] {
            let back = Camera::<f64>::from_json(&cam.to_json()).unwrap();
            assert_eq!(back, cam);
        }
        let json = fisheye_json_with_unknown_key();
        assert!(Camera::<f64>::from_json(&json).is_err());
    }

    fn fisheye_json_with_unknown_key() -> String {
        r#"{"type":"fisheye","focal":1.0,"principal_point":[0,0],"image_size":[4,4],
            "rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,0],"bogus":1}"#
            .to_string()
    }

    #[test]
    fn f32_cameras_work_too() {
        let cam = FisheyeCamera::<f32>::new(100.0, [160.0, 160.0], (320, 320), RigidTransform::identity(), 1.5)
            .unwrap();
        let d = cam.unproject([200.0, 170.0]).unwrap();
        let px = cam.project(d).unwrap().unwrap();
        assert!((px[0] - 200.0).abs() < 1e-3 && (px[1] - 170.0).abs() < 1e-3);
    }
}
