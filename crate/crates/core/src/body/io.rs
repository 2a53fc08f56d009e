use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BodyMesh, Joint, Skeleton, SkinWeights, JOINT_NAMES};
use crate::container::{BlockData, Container, ContainerError};
use crate::geometry::Vec3;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum BodyFileError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("body file: {0}")]
    Format(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct BodyHeader {
    kind: String,
    joint_names: Vec<String>,
    joint_parents: Vec<i32>,
    vertex_count: usize,
    face_count: usize,
    part_count: u16,
    max_edge: f64,
}

const KIND: &str = "egorender-body";

/// Writes skeleton + mesh as one container (float32 geometry blocks).
pub fn save_body<T: Real>(path: &Path, skel: &Skeleton<T>, mesh: &BodyMesh<T>) -> Result<(), BodyFileError> {
    let header = BodyHeader {
        kind: KIND.into(),
        joint_names: skel.joints.iter().map(|j| j.name.to_string()).collect(),
        joint_parents: skel.joints.iter().map(|j| j.parent.map(|p| p as i32).unwrap_or(-1)).collect(),
        vertex_count: mesh.vertices.len(),
        face_count: mesh.faces.len(),
        part_count: mesh.part_count,
        max_edge: mesh.max_edge.to_f64_lossy(),
    };
    let mut c = Container::new(header);
    let f = |v: T| v.to_f32_lossy();
    c.push("joint_offsets", BlockData::F32(skel.joints.iter().flat_map(|j| [f(j.offset.x), f(j.offset.y), f(j.offset.z)]).collect()));
    c.push("vertices", BlockData::F32(mesh.vertices.iter().flat_map(|v| [f(v.x), f(v.y), f(v.z)]).collect()));
    c.push("faces", BlockData::U32(mesh.faces.iter().flatten().copied().collect()));
    c.push("skin_joints", BlockData::U16(mesh.skin.iter().flat_map(|w| w.joints).collect()));
    c.push("skin_weights", BlockData::F32(mesh.skin.iter().flat_map(|w| w.weights.map(f)).collect()));
    c.push("skin_count", BlockData::U8(mesh.skin.iter().map(|w| w.count).collect()));
    c.push("vertex_part", BlockData::U16(mesh.vertex_part.clone()));
    c.push("vertex_uv", BlockData::F32(mesh.vertex_uv.iter().flat_map(|uv| uv.map(f)).collect()));
    c.save(path)?;
    Ok(())
}

pub fn load_body<T: Real>(path: &Path) -> Result<(Skeleton<T>, BodyMesh<T>), BodyFileError> {
    let c = Container::<BodyHeader>::load(path)?;
    let h = &c.meta;
    if h.kind != KIND {
        return Err(BodyFileError::Format(format!("unexpected kind `{}`", h.kind)));
    }
    if h.joint_names.len() != JOINT_NAMES.len() || h.joint_names.iter().zip(JOINT_NAMES).any(|(a, b)| a != b) {
        return Err(BodyFileError::Format("joint name list does not match the fixed skeleton".into()));
    }
    let offs = c.f32("joint_offsets")?;
    let l = |v: f32| T::lit(v as f64);
    let skel = Skeleton {
        joints: (0..JOINT_NAMES.len())
            .map(|i| Joint {
                name: JOINT_NAMES[i],
                parent: (h.joint_parents[i] >= 0).then_some(h.joint_parents[i] as usize),
                offset: Vec3::new(l(offs[3 * i]), l(offs[3 * i + 1]), l(offs[3 * i + 2])),
            })
            .collect(),
    };
    let verts = c.f32("vertices")?;
    let faces = c.u32("faces")?;
    let sj = c.u16("skin_joints")?;
    let sw = c.f32("skin_weights")?;
    let sc = c.u8("skin_count")?;
    let uv = c.f32("vertex_uv")?;
    let n = h.vertex_count;
    if verts.len() != 3 * n || sj.len() != 4 * n || sw.len() != 4 * n || sc.len() != n || uv.len() != 2 * n {
        return Err(BodyFileError::Format("block sizes disagree with vertex count".into()));
    }
    let mesh = BodyMesh {
        vertices: verts.chunks_exact(3).map(|v| Vec3::new(l(v[0]), l(v[1]), l(v[2]))).collect(),
        faces: faces.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect(),
        skin: (0..n)
            .map(|i| SkinWeights {
                joints: [sj[4 * i], sj[4 * i + 1], sj[4 * i + 2], sj[4 * i + 3]],
                weights: [l(sw[4 * i]), l(sw[4 * i + 1]), l(sw[4 * i + 2]), l(sw[4 * i + 3])],
                count: sc[i],
            })
            .collect(),
        vertex_part: c.u16("vertex_part")?.to_vec(),
        vertex_uv: uv.chunks_exact(2).map(|p| [l(p[0]), l(p[1])]).collect(),
        part_count: h.part_count,
        max_edge: T::lit(h.max_edge),
    };
    Ok((skel, mesh))
}
