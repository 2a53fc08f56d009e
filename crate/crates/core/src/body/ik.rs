use super::{forward_kinematics, global_transforms, joint, BodyError, BodyPose, JointTargets, Skeleton, TARGET_JOINTS};
use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions<T> {
    pub iterations: usize,
    /// Levenberg-style damping added to the normal equations.
    pub damping: T,
    /// Stop once the mean joint residual (metres) falls below this.
    pub tolerance: T,
}

impl<T: Real> Default for IkOptions<T> {
    fn default() -> Self {
        Self { iterations: 200, damping: T::lit(1e-2), tolerance: T::lit(1e-9) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult<T> {
    pub pose: BodyPose<T>,
    /// Mean Euclidean distance between solved and target joints.
    pub mean_residual: T,
    pub max_residual: T,
    pub iterations: usize,
}

/// Initial guess from the observed joints: pelvis at the hip midpoint, body
/// frame spanned by the hip line and the hip-to-neck direction, all joint
/// rotations identity (so the spine is interpolated along the rest chain).
pub fn initial_pose_from_targets<T: Real>(skel: &Skeleton<T>, targets: &JointTargets<T>) -> BodyPose<T> {
    let rest = skel.rest_positions();
    let get = |n: &str| targets.get(n).unwrap();
    let (lh, rh, neck) = (get("l_hip"), get("r_hip"), get("neck"));
    let mid = (lh + rh) * T::half();
    let rest_mid = (rest[joint::L_HIP] + rest[joint::R_HIP]) * T::half();
    let rest_x = (rest[joint::L_HIP] - rest[joint::R_HIP]).normalized();
    let rest_up = (rest[joint::NECK] - rest_mid).normalized();
    let x = (lh - rh).normalized();
    let up = (neck - mid).normalized();
    let rotation = match (x, up, rest_x, rest_up) {
        (Some(x), Some(up), Some(rx), Some(ru)) => {
            let frame = |x: Vec3<T>, up: Vec3<T>| -> Option<Mat3<T>> {
                let y = (up - x * x.dot(up)).normalized()?;
                let z = x.cross(y);
                Some(Mat3::from_rows(x, y, z).transpose())
            };
            match (frame(x, up), frame(rx, ru)) {
                (Some(world), Some(body)) => world * body.transpose(),
                _ => Mat3::identity(),
            }
        }
        _ => Mat3::identity(),
    };
    let translation = mid - rotation * rest_mid;
    BodyPose { root: RigidTransform::new(rotation, translation), rotations: vec![Mat3::identity(); skel.len()] }
}

fn residuals<T: Real>(skel: &Skeleton<T>, pose: &BodyPose<T>, targets: &JointTargets<T>) -> (T, T, T) {
    let fk = forward_kinematics(skel, pose);
    let (mut cost, mut mean, mut max) = (T::zero(), T::zero(), T::zero());
    for (k, &j) in TARGET_JOINTS.iter().enumerate() {
        let d = fk[j] - targets.positions[k];
        cost += targets.confidence[k] * d.norm_squared();
        mean += d.norm();
        max = max.max(d.norm());
    }
    (cost, mean / T::lit(15.0), max)
}

fn is_ancestor_or_self<T>(skel: &Skeleton<T>, anc: usize, mut j: usize) -> bool {
    loop {
        if j == anc {
            return true;
        }
        match skel.joints[j].parent {
            Some(p) => j = p,
            None => return false,
        }
    }
}

/// Damped least squares over the root (translation + rotation) and the local
/// rotation of every non-root joint, minimising confidence-weighted squared
/// joint-position error. Returns the best pose seen.
pub fn solve_ik<T: Real>(
    skel: &Skeleton<T>,
    targets: &JointTargets<T>,
    init: &BodyPose<T>,
    opts: &IkOptions<T>,
) -> Result<IkResult<T>, BodyError> {
    targets.validate()?;
    init.validate(skel.len())?;
    let nj = skel.len();
    let n = 6 + 3 * (nj - 1);
    let m = 3 * TARGET_JOINTS.len();

    let mut pose = init.clone();
    let (mut cost, mut mean, mut max) = residuals(skel, &pose, targets);
    let mut best = IkResult { pose: pose.clone(), mean_residual: mean, max_residual: max, iterations: 0 };
    let mut lambda = opts.damping;
    let lambda_min = opts.damping * T::lit(1e-6);
    let mut jac = vec![T::zero(); m * n];
    let mut res = vec![T::zero(); m];
    let mut a = vec![T::zero(); n * n];
    let mut g = vec![T::zero(); n];

    for it in 0..opts.iterations {
        if mean <= opts.tolerance {
            break;
        }
        let globals = global_transforms(skel, &pose);
        jac.iter_mut().for_each(|v| *v = T::zero());
        for (k, &tj) in TARGET_JOINTS.iter().enumerate() {
            let p = globals[tj].1;
            let d = p - targets.positions[k];
            for r in 0..3 {
                res[3 * k + r] = d[r];
            }
            // root translation
            for r in 0..3 {
                jac[(3 * k + r) * n + r] = T::one();
            }
            // rotations: world-frame angular increment about each ancestor joint
            for j in 0..nj {
                if !is_ancestor_or_self(skel, j, tj) {
                    continue;
                }
                let lever = p - globals[j].1;
                let col = 3 + 3 * j;
                // d/dw (w x lever) = -[lever]_x, one column per axis
                let cols = [
                    Vec3::new(T::zero(), -lever.z, lever.y),
                    Vec3::new(lever.z, T::zero(), -lever.x),
                    Vec3::new(-lever.y, lever.x, T::zero()),
                ];
                for (c, v) in cols.iter().enumerate() {
                    for r in 0..3 {
                        jac[(3 * k + r) * n + col + c] = v[r];
                    }
                }
            }
        }
        // normal equations J^T W J and J^T W r
        a.iter_mut().for_each(|v| *v = T::zero());
        g.iter_mut().for_each(|v| *v = T::zero());
        for row in 0..m {
            let w = targets.confidence[row / 3];
            if w == T::zero() {
                continue;
            }
            let jr = &jac[row * n..(row + 1) * n];
            for i in 0..n {
                if jr[i] == T::zero() {
                    continue;
                }
                let wi = w * jr[i];
                g[i] += wi * res[row];
                for j in i..n {
                    a[i * n + j] += wi * jr[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                a[i * n + j] = a[j * n + i];
            }
        }

        let mut accepted = false;
        for _ in 0..12 {
            let mut sys = a.clone();
            for i in 0..n {
                sys[i * n + i] += lambda;
            }
            let mut delta: Vec<T> = g.iter().map(|&v| -v).collect();
            if !cholesky_solve(&mut sys, &mut delta, n) {
                lambda *= T::lit(10.0);
                continue;
            }
            let cand = apply_update(skel, &pose, &delta);
            let (c2, mean2, max2) = residuals(skel, &cand, targets);
            if c2.is_finite() && c2 < cost {
                pose = cand;
                cost = c2;
                mean = mean2;
                max = max2;
                lambda = (lambda * T::lit(0.3)).max(lambda_min);
                accepted = true;
                break;
            }
            lambda *= T::lit(10.0);
        }
        if mean < best.mean_residual {
            best = IkResult { pose: pose.clone(), mean_residual: mean, max_residual: max, iterations: it + 1 };
        }
        if !accepted {
            break;
        }
    }
    Ok(best)
}

fn apply_update<T: Real>(skel: &Skeleton<T>, pose: &BodyPose<T>, delta: &[T]) -> BodyPose<T> {
    let globals = global_transforms(skel, pose);
    let mut out = pose.clone();
    out.root.translation += Vec3::new(delta[0], delta[1], delta[2]);
    for j in 0..skel.len() {
        let w = Vec3::new(delta[3 + 3 * j], delta[4 + 3 * j], delta[5 + 3 * j]);
        if w.norm_squared() == T::zero() {
            continue;
        }
        let e = Mat3::exp(w);
        match skel.joints[j].parent {
            None => {
                // rotate the whole body about the pelvis
                out.root.rotation = (e * pose.root.rotation).orthonormalized();
            }
            Some(p) => {
                let rp = globals[p].0;
                out.rotations[j] = (rp.transpose() * e * rp * pose.rotations[j]).orthonormalized();
            }
        }
    }
    out
}

/// Solves `A x = b` in place for symmetric positive definite `A` (row-major n x n).
fn cholesky_solve<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}
