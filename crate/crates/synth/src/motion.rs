//! Procedural motion: every rotational degree of freedom follows a sum of two
//! slow sinusoids mapped into its configured range. A sequence is fully
//! determined by its rng, so frames can be evaluated in any order.

use std::f64::consts::TAU;

use egorender_core::body::{joint, BodyPose};
use egorender_core::geometry::{Mat3, RigidTransform, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Angle ranges in degrees, `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSamplerConfig {
    /// Frames per motion sequence.
    pub sequence_length: usize,
    pub frame_rate: f64,
    /// Upper bound of the per-DoF oscillation frequencies, Hz.
    pub max_frequency: f64,
    pub root_yaw: [f64; 2],
    pub spine_flex: [f64; 2],
    pub spine_twist: [f64; 2],
    pub spine_side: [f64; 2],
    pub neck_flex: [f64; 2],
    pub neck_yaw: [f64; 2],
    pub shoulder_flex: [f64; 2],
    pub shoulder_abduct: [f64; 2],
    pub elbow_flex: [f64; 2],
    pub hip_flex: [f64; 2],
    pub hip_abduct: [f64; 2],
    pub knee_flex: [f64; 2],
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self {
            sequence_length: 40,
            frame_rate: 10.0,
            max_frequency: 0.6,
            root_yaw: [-180.0, 180.0],
            spine_flex: [-5.0, 25.0],
            spine_twist: [-20.0, 20.0],
            spine_side: [-10.0, 10.0],
            neck_flex: [-10.0, 30.0],
            neck_yaw: [-30.0, 30.0],
            shoulder_flex: [-30.0, 100.0],
            shoulder_abduct: [-15.0, 45.0],
            elbow_flex: [0.0, 120.0],
            hip_flex: [-20.0, 60.0],
            hip_abduct: [-5.0, 25.0],
            knee_flex: [0.0, 100.0],
        }
    }
}

impl PoseSamplerConfig {
    /// All ranges collapsed to zero: every frame is the rest pose.
    pub fn still() -> Self {
        let z = [0.0, 0.0];
        Self {
            root_yaw: z,
            spine_flex: z,
            spine_twist: z,
            spine_side: z,
            neck_flex: z,
            neck_yaw: z,
            shoulder_flex: z,
            shoulder_abduct: z,
            elbow_flex: z,
            hip_flex: z,
            hip_abduct: z,
            knee_flex: z,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sequence_length == 0 || !(self.frame_rate > 0.0) || !(self.max_frequency > 0.0) {
            return Err("sequence_length, frame_rate and max_frequency must be positive".into());
        }
        for (name, r) in self.ranges() {
            if !(r[0] <= r[1]) || !r.iter().all(|v| v.is_finite()) {
                return Err(format!("pose range {name} must satisfy min <= max"));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [(&'static str, [f64; 2]); 12] {
        [
            ("root_yaw", self.root_yaw),
            ("spine_flex", self.spine_flex),
            ("spine_twist", self.spine_twist),
            ("spine_side", self.spine_side),
            ("neck_flex", self.neck_flex),
            ("neck_yaw", self.neck_yaw),
            ("shoulder_flex", self.shoulder_flex),
            ("shoulder_abduct", self.shoulder_abduct),
            ("elbow_flex", self.elbow_flex),
            ("hip_flex", self.hip_flex),
            ("hip_abduct", self.hip_abduct),
            ("knee_flex", self.knee_flex),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Dof {
    range: [f64; 2],
    mix: f64,
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Dof {
    fn new<R: Rng>(range: [f64; 2], max_freq: f64, rng: &mut R) -> Self {
        let lo = 0.05f64.min(max_freq);
        Self {
            range,
            mix: rng.gen_range(0.3..0.7),
            freq: [rng.gen_range(lo..=max_freq), rng.gen_range(lo..=max_freq)],
            phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
        }
    }

    /// Degrees at time `t` seconds; always inside the range.
    fn at(&self, t: f64) -> f64 {
        let s = self.mix * (TAU * self.freq[0] * t + self.phase[0]).sin()
            + (1.0 - self.mix) * (TAU * self.freq[1] * t + self.phase[1]).sin();
        let k = (0.5 + 0.5 * s).clamp(0.0, 1.0);
        self.range[0] + (self.range[1] - self.range[0]) * k
    }
}

/// Left and right limbs get independent DoFs.
#[derive(Debug, Clone)]
pub struct MotionSequence {
    frame_rate: f64,
    root_yaw: Dof,
    spine: [Dof; 3],
    neck: [Dof; 2],
    shoulder: [[Dof; 2]; 2],
    elbow: [Dof; 2],
    hip: [[Dof; 2]; 2],
    knee: [Dof; 2],
}

impl MotionSequence {
    pub fn new<R: Rng>(cfg: &PoseSamplerConfig, rng: &mut R) -> Self {
        let f = cfg.max_frequency;
        // heading drifts slowly
        let root_yaw = Dof::new(cfg.root_yaw, 0.1 * f, rng);
        let mut d = |r: [f64; 2]| Dof::new(r, f, rng);
        let spine = [d(cfg.spine_flex), d(cfg.spine_twist), d(cfg.spine_side)];
        let neck = [d(cfg.neck_flex), d(cfg.neck_yaw)];
        let shoulder = [[d(cfg.shoulder_flex), d(cfg.shoulder_abduct)], [d(cfg.shoulder_flex), d(cfg.shoulder_abduct)]];
        let elbow = [d(cfg.elbow_flex), d(cfg.elbow_flex)];
        let hip = [[d(cfg.hip_flex), d(cfg.hip_abduct)], [d(cfg.hip_flex), d(cfg.hip_abduct)]];
        let knee = [d(cfg.knee_flex), d(cfg.knee_flex)];
        Self { frame_rate: cfg.frame_rate, root_yaw, spine, neck, shoulder, elbow, hip, knee }
    }

    pub fn pose_at(&self, frame: usize) -> BodyPose<f64> {
        let t = frame as f64 / self.frame_rate;
        let a = |d: &Dof| d.at(t).to_radians();
        let mut pose = BodyPose::rest(joint::R_TOE + 1);
        pose.root = RigidTransform::new(Mat3::rot_y(a(&self.root_yaw)), Vec3::zero());
        let r = &mut pose.rotations;
        r[joint::SPINE] = Mat3::rot_y(a(&self.spine[1])) * Mat3::rot_x(a(&self.spine[0])) * Mat3::rot_z(a(&self.spine[2]));
        r[joint::NECK] = Mat3::rot_y(a(&self.neck[1])) * Mat3::rot_x(a(&self.neck[0]));
        // side 0 is left (+x); mirrored abduction for the right side
        for (side, (sh, el, hip, knee)) in [
            (joint::L_SHOULDER, joint::L_ELBOW, joint::L_HIP, joint::L_KNEE),
            (joint::R_SHOULDER, joint::R_ELBOW, joint::R_HIP, joint::R_KNEE),
        ]
        .into_iter()
        .enumerate()
        {
            let m = if side == 0 { 1.0 } else { -1.0 };
            r[sh] = Mat3::rot_x(-a(&self.shoulder[side][0])) * Mat3::rot_z(m * a(&self.shoulder[side][1]));
            r[el] = Mat3::rot_x(-a(&self.elbow[side]));
            r[hip] = Mat3::rot_x(-a(&self.hip[side][0])) * Mat3::rot_z(m * a(&self.hip[side][1]));
            r[knee] = Mat3::rot_x(a(&self.knee[side]));
        }
        pose
    }
}

/// One pose from a freshly drawn sequence at a random frame.
pub fn sample_pose<R: Rng>(rng: &mut R, cfg: &PoseSamplerConfig) -> BodyPose<f64> {
    let seq = MotionSequence::new(cfg, rng);
    seq.pose_at(rng.gen_range(0..cfg.sequence_length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn still_config_gives_rest_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = MotionSequence::new(&PoseSamplerConfig::still(), &mut rng);
        let rest = BodyPose::rest(joint::R_TOE + 1);
        for f in [0, 7, 39] {
            assert_eq!(seq.pose_at(f), rest);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = PoseSamplerConfig::default();
        let a = MotionSequence::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let b = MotionSequence::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let c = MotionSequence::new(&cfg, &mut ChaCha8Rng::seed_from_u64(6));
        for f in 0..40 {
            assert_eq!(a.pose_at(f), b.pose_at(f));
        }
        assert_ne!(a.pose_at(3), c.pose_at(3));
    }

    #[test]
    fn elbow_flexion_stays_in_range() {
        let cfg = PoseSamplerConfig { elbow_flex: [15.0, 95.0], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_pose(&mut rng, &cfg);
            for j in [joint::L_ELBOW, joint::R_ELBOW] {
                let deg = p.rotations[j].angle().to_degrees();
                assert!((15.0 - 1e-9..=95.0 + 1e-9).contains(&deg), "{deg}");
            }
            assert!(p.validate(joint::R_TOE + 1).is_ok());
        }
    }

    #[test]
    fn motion_is_smooth_between_frames() {
        let seq = MotionSequence::new(&PoseSamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(2));
        for f in 0..39 {
            let (a, b) = (seq.pose_at(f), seq.pose_at(f + 1));
            for j in 0..a.rotations.len() {
                let step = (a.rotations[j].transpose() * b.rotations[j]).angle().to_degrees();
                assert!(step < 30.0, "joint {j} jumps {step} deg");
            }
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let cfg = PoseSamplerConfig { knee_flex: [10.0, 0.0], ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(PoseSamplerConfig::default().validate().is_ok());
    }
}
