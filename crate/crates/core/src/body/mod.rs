//! Procedural articulated body: skeleton, capsule mesh with per-part UV charts,
//! forward kinematics, linear blend skinning and inverse kinematics.
//!
//! World axes: y up, the body faces +z, its left side is +x.

mod ik;
mod io;
mod kinematics;
mod mesh;

pub use ik::{initial_pose_from_targets, solve_ik, IkOptions, IkResult};
pub use io::{load_body, save_body, BodyFileError};
pub use kinematics::{forward_kinematics, global_transforms, skin_mesh, skin_mesh_local};
pub use mesh::{build_canonical_body, BodyMesh, PartScheme, SkinWeights};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum BodyError {
    #[error("invalid body proportions: {0}")]
    Proportions(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("non-finite IK target `{0}`")]
    NonFiniteTarget(&'static str),
    #[error("mesh invariant violated: {0}")]
    Mesh(String),
}

/// Joint names in skeleton order. Parents always precede children.
pub const JOINT_NAMES: [&str; 18] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_toe",
    "r_hip",
    "r_knee",
    "r_ankle",
    "r_toe",
];

/// Parent of each joint in [`JOINT_NAMES`]; the pelvis is the single root.
pub const JOINT_PARENTS: [Option<usize>; 18] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(2),
    Some(4),
    Some(5),
    Some(2),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(12),
    Some(0),
    Some(14),
    Some(15),
    Some(16),
];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_SHOULDER: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const R_WRIST: usize = 9;
    pub const L_HIP: usize = 10;
    pub const L_KNEE: usize = 11;
    pub const L_ANKLE: usize = 12;
    pub const L_TOE: usize = 13;
    pub const R_HIP: usize = 14;
    pub const R_KNEE: usize = 15;
    pub const R_ANKLE: usize = 16;
    pub const R_TOE: usize = 17;
}

/// The 15 observable joints, in estimator output order.
pub const TARGET_NAMES: [&str; 15] = [
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "r_toe",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_toe",
];

/// Skeleton index of each entry of [`TARGET_NAMES`].
pub const TARGET_JOINTS: [usize; 15] = [
    joint::NECK,
    joint::R_SHOULDER,
    joint::R_ELBOW,
    joint::R_WRIST,
    joint::L_SHOULDER,
    joint::L_ELBOW,
    joint::L_WRIST,
    joint::R_HIP,
    joint::R_KNEE,
    joint::R_ANKLE,
    joint::R_TOE,
    joint::L_HIP,
    joint::L_KNEE,
    joint::L_ANKLE,
    joint::L_TOE,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T> {
    pub name: &'static str,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint (metres). Ignored for the root.
    pub offset: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    pub joints: Vec<Joint<T>>,
}

impl<T: Real> Skeleton<T> {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || self.joints.first().map(|j| j.parent.is_some()).unwrap_or(true) {
            return Err(BodyError::Proportions("skeleton needs exactly one root at index 0".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(BodyError::Proportions(format!("joint {} has parent {p} >= own index", j.name)));
                }
            }
        }
        Ok(())
    }

    /// Rest-pose joint positions with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vec3<T>> {
        forward_kinematics(self, &BodyPose::rest(self.len()))
    }

    /// Copy with every rest offset multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|j| Joint { name: j.name, parent: j.parent, offset: j.offset * s })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Skeleton<U> {
        Skeleton {
            joints: self
                .joints
                .iter()
                .map(|j| Joint { name: j.name, parent: j.parent, offset: j.offset.cast() })
                .collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
}

/// Root placement plus one local rotation per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPose<T> {
    pub root: RigidTransform<T>,
    pub rotations: Vec<Mat3<T>>,
}

impl<T: Real> BodyPose<T> {
    pub fn rest(joint_count: usize) -> Self {
        Self { root: RigidTransform::identity(), rotations: vec![Mat3::identity(); joint_count] }
    }

    pub fn validate(&self, joint_count: usize) -> Result<(), BodyError> {
        if self.rotations.len() != joint_count {
            return Err(BodyError::Pose(format!(
                "expected {joint_count} rotations, got {}",
                self.rotations.len()
            )));
        }
        let tol = T::lit(1e-6);
        self.root.validate(tol).map_err(|e| BodyError::Pose(format!("root: {e}")))?;
        for (i, r) in self.rotations.iter().enumerate() {
            if !r.is_finite() || r.orthonormality_error() > tol || (r.det() - T::one()).abs() > tol {
                return Err(BodyError::Pose(format!("rotation of joint {i} is not a rotation")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BodyPose<U> {
        BodyPose { root: self.root.cast(), rotations: self.rotations.iter().map(|r| r.cast()).collect() }
    }

    pub fn to_record(&self) -> PoseRecord {
        PoseRecord {
            root_rotation: self.root.rotation.to_row_major().map(|v| v.to_f64_lossy()),
            root_translation: self.root.translation.to_f64(),
            rotations: self.rotations.iter().map(|r| r.to_row_major().map(|v| v.to_f64_lossy())).collect(),
        }
    }

    pub fn from_record(r: &PoseRecord) -> Self {
        Self {
            root: RigidTransform::new(Mat3::from_row_major(&r.root_rotation.map(T::lit)), Vec3::from_f64(r.root_translation)),
            rotations: r.rotations.iter().map(|m| Mat3::from_row_major(&m.map(T::lit))).collect(),
        }
    }
}

/// Serializable pose (row-major rotations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub root_rotation: [f64; 9],
    pub root_translation: [f64; 3],
    pub rotations: Vec<[f64; 9]>,
}

/// The 15 observable joint positions with per-joint confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTargets<T> {
    pub positions: [Vec3<T>; 15],
    pub confidence: [T; 15],
}

impl<T: Real> JointTargets<T> {
    /// Targets read off a full joint set, all with confidence 1.
    pub fn from_skeleton_positions(joints: &[Vec3<T>]) -> Self {
        Self { positions: TARGET_JOINTS.map(|j| joints[j]), confidence: [T::one(); 15] }
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        for (i, p) in self.positions.iter().enumerate() {
            if !p.is_finite() || !self.confidence[i].is_finite() {
                return Err(BodyError::NonFiniteTarget(TARGET_NAMES[i]));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Vec3<T>> {
        TARGET_NAMES.iter().position(|n| *n == name).map(|i| self.positions[i])
    }

    pub fn translated(&self, d: Vec3<T>) -> Self {
        Self { positions: self.positions.map(|p| p + d), confidence: self.confidence }
    }

    pub fn to_record(&self) -> TargetsRecord {
        TargetsRecord {
            names: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
            positions: self.positions.iter().map(|p| p.to_f64()).collect(),
            confidence: self.confidence.iter().map(|c| c.to_f64_lossy()).collect(),
        }
    }

    pub fn from_record(r: &TargetsRecord) -> Result<Self, BodyError> {
        if r.names.len() != 15 || r.names.iter().zip(TARGET_NAMES).any(|(a, b)| a != b) {
            return Err(BodyError::Pose(format!("joint names must be exactly {TARGET_NAMES:?}")));
        }
        if r.positions.len() != 15 || r.confidence.len() != 15 {
            return Err(BodyError::Pose("expected 15 positions and confidences".into()));
        }
        let t = Self {
            positions: std::array::from_fn(|i| Vec3::from_f64(r.positions[i])),
            confidence: std::array::from_fn(|i| T::lit(r.confidence[i])),
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsRecord {
    pub names: Vec<String>,
    pub positions: Vec<[f64; 3]>,
    pub confidence: Vec<f64>,
}

/// Body proportions and mesh resolution. Lengths in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyConfig {
    pub scale: f64,
    pub torso_length: f64,
    pub spine_fraction: f64,
    pub neck_to_head: f64,
    pub head_radius: f64,
    pub shoulder_half_width: f64,
    pub shoulder_drop: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hand: f64,
    /// Downward tilt of the rest arms from horizontal, in degrees.
    pub arm_rest_angle_deg: f64,
    pub hip_half_width: f64,
    pub hip_drop: f64,
    pub thigh: f64,
    pub shin: f64,
    pub foot: f64,
    pub torso_radius: f64,
    pub torso_depth_ratio: f64,
    pub upper_arm_radius: f64,
    pub forearm_radius: f64,
    pub thigh_radius: f64,
    pub shin_radius: f64,
    /// Mesh density multiplier; vertex spacing scales as 1/density.
    pub mesh_density: f64,
    /// Upper bound on rest edge length.
    pub max_edge: f64,
    pub parts: PartScheme,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            torso_length: 0.52,
            spine_fraction: 0.48,
            neck_to_head: 0.14,
            head_radius: 0.095,
            shoulder_half_width: 0.18,
            shoulder_drop: 0.04,
            upper_arm: 0.28,
            forearm: 0.25,
            hand: 0.08,
            arm_rest_angle_deg: 60.0,
            hip_half_width: 0.09,
            hip_drop: 0.06,
            thigh: 0.42,
            shin: 0.42,
            foot: 0.14,
            torso_radius: 0.14,
            torso_depth_ratio: 0.7,
            upper_arm_radius: 0.05,
            forearm_radius: 0.04,
            thigh_radius: 0.075,
            shin_radius: 0.055,
            mesh_density: 1.0,
            max_edge: 0.05,
            parts: PartScheme::Parts10,
        }
    }
}

impl BodyConfig {
    pub fn validate(&self) -> Result<(), BodyError> {
        let positive = [
            ("scale", self.scale),
            ("torso_length", self.torso_length),
            ("neck_to_head", self.neck_to_head),
            ("head_radius", self.head_radius),
            ("shoulder_half_width", self.shoulder_half_width),
            ("upper_arm", self.upper_arm),
            ("forearm", self.forearm),
            ("hand", self.hand),
            ("hip_half_width", self.hip_half_width),
            ("thigh", self.thigh),
            ("shin", self.shin),
            ("foot", self.foot),
            ("torso_radius", self.torso_radius),
            ("torso_depth_ratio", self.torso_depth_ratio),
            ("upper_arm_radius", self.upper_arm_radius),
            ("forearm_radius", self.forearm_radius),
            ("thigh_radius", self.thigh_radius),
            ("shin_radius", self.shin_radius),
            ("mesh_density", self.mesh_density),
            ("max_edge", self.max_edge),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BodyError::Proportions(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.spine_fraction > 0.0 && self.spine_fraction < 1.0) {
            return Err(BodyError::Proportions("spine_fraction must lie in (0, 1)".into()));
        }
        if !(self.shoulder_drop >= 0.0 && self.hip_drop >= 0.0) {
            return Err(BodyError::Proportions("drops must be >= 0".into()));
        }
        Ok(())
    }

    /// Skeleton implied by the proportions.
    pub fn skeleton<T: Real>(&self) -> Result<Skeleton<T>, BodyError> {
        self.validate()?;
        let s = self.scale;
        let a = self.arm_rest_angle_deg.to_radians();
        let (ax, ay) = (a.cos(), -a.sin());
        let off = |j: usize| -> [f64; 3] {
            use joint::*;
            match j {
                PELVIS => [0.0, 0.0, 0.0],
                SPINE => [0.0, self.torso_length * self.spine_fraction, 0.0],
                NECK => [0.0, self.torso_length * (1.0 - self.spine_fraction), 0.0],
                HEAD => [0.0, self.neck_to_head, 0.0],
                L_SHOULDER => [self.shoulder_half_width, -self.shoulder_drop, 0.0],
                R_SHOULDER => [-self.shoulder_half_width, -self.shoulder_drop, 0.0],
                L_ELBOW => [ax * self.upper_arm, ay * self.upper_arm, 0.0],
                R_ELBOW => [-ax * self.upper_arm, ay * self.upper_arm, 0.0],
                L_WRIST => [ax * self.forearm, ay * self.forearm, 0.0],
                R_WRIST => [-ax * self.forearm, ay * self.forearm, 0.0],
                L_HIP => [self.hip_half_width, -self.hip_drop, 0.0],
                R_HIP => [-self.hip_half_width, -self.hip_drop, 0.0],
                L_KNEE | R_KNEE => [0.0, -self.thigh, 0.0],
                L_ANKLE | R_ANKLE => [0.0, -self.shin, 0.0],
                L_TOE | R_TOE => [0.0, -0.05, self.foot],
                _ => unreachable!(),
            }
        };
        let skel = Skeleton {
            joints: (0..JOINT_NAMES.len())
                .map(|j| {
                    let o = off(j);
                    Joint { name: JOINT_NAMES[j], parent: JOINT_PARENTS[j], offset: Vec3::from_f64([o[0] * s, o[1] * s, o[2] * s]) }
                })
                .collect(),
        };
        skel.validate()?;
        Ok(skel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_is_topological() {
        let skel: Skeleton<f64> = BodyConfig::default().skeleton().unwrap();
        assert_eq!(skel.len(), 18);
        assert!(skel.validate().is_ok());
        for (t, &j) in TARGET_NAMES.iter().zip(TARGET_JOINTS.iter()) {
            assert_eq!(*t, skel.joints[j].name);
        }
    }

    #[test]
    fn degenerate_proportions_rejected() {
        let cfg = BodyConfig { thigh: 0.0, ..Default::default() };
        assert!(matches!(cfg.skeleton::<f64>(), Err(BodyError::Proportions(_))));
        let cfg = BodyConfig { spine_fraction: 1.5, ..Default::default() };
        assert!(cfg.skeleton::<f64>().is_err());
    }

    #[test]
    fn targets_record_checks_names() {
        let skel: Skeleton<f64> = BodyConfig::default().skeleton().unwrap();
        let t = JointTargets::from_skeleton_positions(&skel.rest_positions());
        let mut rec = t.to_record();
        assert_eq!(JointTargets::<f64>::from_record(&rec).unwrap(), t);
        rec.names.swap(0, 1);
        assert!(JointTargets::<f64>::from_record(&rec).is_err());
    }
}
