use super::{BodyMesh, BodyPose, Skeleton};
use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::scalar::Real;

/// Global rotation and position of every joint.
pub fn global_transforms<T: Real>(skel: &Skeleton<T>, pose: &BodyPose<T>) -> Vec<(Mat3<T>, Vec3<T>)> {
    let mut out: Vec<(Mat3<T>, Vec3<T>)> = Vec::with_capacity(skel.len());
    for (i, j) in skel.joints.iter().enumerate() {
        let g = match j.parent {
            None => (pose.root.rotation * pose.rotations[i], pose.root.translation),
            Some(p) => {
                let (rp, pp) = out[p];
                (rp * pose.rotations[i], pp + rp * j.offset)
            }
        };
        out.push(g);
    }
    out
}

/// World-space joint positions. The root joint sits at `pose.root.translation`.
pub fn forward_kinematics<T: Real>(skel: &Skeleton<T>, pose: &BodyPose<T>) -> Vec<Vec3<T>> {
    global_transforms(skel, pose).into_iter().map(|(_, p)| p).collect()
}

/// Linear blend skinning of the rest mesh into world space.
///
/// Each vertex moves by the weighted sum of its joints' displacements, so the
/// rest pose reproduces the rest vertices bit for bit.
pub fn skin_mesh<T: Real>(skel: &Skeleton<T>, mesh: &BodyMesh<T>, pose: &BodyPose<T>) -> Vec<Vec3<T>> {
    let rest = skel.rest_positions();
    let globals = global_transforms(skel, pose);
    // G_j(v) = R_j v + (p_j - R_j p_j^rest)
    let g: Vec<RigidTransform<T>> = globals
        .iter()
        .zip(&rest)
        .map(|(&(r, p), &pr)| RigidTransform::new(r, p - r * pr))
        .collect();
    mesh.vertices
        .iter()
        .zip(&mesh.skin)
        .map(|(&v, w)| {
            let mut d = Vec3::zero();
            for (j, wj) in w.iter() {
                d += (g[j].apply(v) - v) * wj;
            }
            v + d
        })
        .collect()
}

/// Skinning with the root transform removed (body-local coordinates).
pub fn skin_mesh_local<T: Real>(skel: &Skeleton<T>, mesh: &BodyMesh<T>, pose: &BodyPose<T>) -> Vec<Vec3<T>> {
    let local = BodyPose { root: RigidTransform::identity(), rotations: pose.rotations.clone() };
    skin_mesh(skel, mesh, &local)
}
