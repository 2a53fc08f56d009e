use serde::{Deserialize, Serialize};

use super::{joint, BodyConfig, BodyError, Skeleton};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Body-part segmentation used for the UV atlas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartScheme {
    /// Head, torso, upper/lower arms, upper/lower legs.
    #[default]
    Parts10,
    /// Front/back halves of the ten limbs plus hands and feet.
    Parts24,
}

impl PartScheme {
    pub fn part_count(self) -> usize {
        match self {
            PartScheme::Parts10 => 10,
            PartScheme::Parts24 => 24,
        }
    }
}

/// Up to four joint influences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkinWeights<T> {
    pub joints: [u16; 4],
    pub weights: [T; 4],
    pub count: u8,
}

impl<T: Real> SkinWeights<T> {
    pub fn single(j: usize) -> Self {
        Self { joints: [j as u16, 0, 0, 0], weights: [T::one(), T::zero(), T::zero(), T::zero()], count: 1 }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..self.count as usize).map(move |k| (self.joints[k] as usize, self.weights[k]))
    }

    fn from_pairs(pairs: &[(usize, T)]) -> Self {
        let mut w = Self { joints: [0; 4], weights: [T::zero(); 4], count: 0 };
        for &(j, v) in pairs {
            if v <= T::zero() {
                continue;
            }
            if let Some(k) = (0..w.count as usize).find(|&k| w.joints[k] as usize == j) {
                w.weights[k] += v;
            } else {
                let k = w.count as usize;
                w.joints[k] = j as u16;
                w.weights[k] = v;
                w.count += 1;
            }
        }
        w
    }
}

/// Rest-pose triangle mesh with skinning weights, part labels and chart UVs.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub skin: Vec<SkinWeights<T>>,
    /// Part index per vertex, in `1..=part_count`.
    pub vertex_part: Vec<u16>,
    /// Chart coordinates per vertex, in `[0, 1]^2`.
    pub vertex_uv: Vec<[T; 2]>,
    pub part_count: u16,
    /// Edge length bound the mesh was built for.
    pub max_edge: T,
}

impl<T: Real> BodyMesh<T> {
    pub fn empty(part_count: u16, max_edge: T) -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            skin: Vec::new(),
            vertex_part: Vec::new(),
            vertex_uv: Vec::new(),
            part_count,
            max_edge,
        }
    }

    pub fn longest_edge(&self, positions: &[Vec3<T>]) -> Option<(usize, u32, u32, T)> {
        let mut best: Option<(usize, u32, u32, T)> = None;
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let l = (positions[a as usize] - positions[b as usize]).norm();
                if best.map(|x| l > x.3).unwrap_or(true) {
                    best = Some((fi, a, b, l));
                }
            }
        }
        best
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let n = self.vertices.len();
        if self.skin.len() != n || self.vertex_part.len() != n || self.vertex_uv.len() != n {
            return Err(BodyError::Mesh("per-vertex arrays differ in length".into()));
        }
        let tol = T::lit(1e-9);
        for (i, w) in self.skin.iter().enumerate() {
            let mut sum = T::zero();
            for (_, v) in w.iter() {
                if v < T::zero() {
                    return Err(BodyError::Mesh(format!("vertex {i} has a negative weight")));
                }
                sum += v;
            }
            if (sum - T::one()).abs() > tol {
                return Err(BodyError::Mesh(format!("vertex {i} weights sum to {sum}")));
            }
        }
        for (i, (&p, uv)) in self.vertex_part.iter().zip(&self.vertex_uv).enumerate() {
            if p == 0 || p > self.part_count {
                return Err(BodyError::Mesh(format!("vertex {i} has part {p}")));
            }
            if !(uv[0] >= T::zero() && uv[0] <= T::one() && uv[1] >= T::zero() && uv[1] <= T::one()) {
                return Err(BodyError::Mesh(format!("vertex {i} uv outside [0,1]^2")));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(BodyError::Mesh(format!("face {fi} indexes past the vertex array")));
            }
            let p = self.vertex_part[f[0] as usize];
            if f.iter().any(|&v| self.vertex_part[v as usize] != p) {
                return Err(BodyError::Mesh(format!("face {fi} spans several parts")));
            }
        }
        if let Some((fi, a, b, l)) = self.longest_edge(&self.vertices) {
            if l > self.max_edge {
                return Err(BodyError::Mesh(format!(
                    "edge ({a}, {b}) of face {fi} has rest length {l} > bound {}",
                    self.max_edge
                )));
            }
        }
        Ok(())
    }

    pub fn part_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.part_count as usize + 1];
        for &p in &self.vertex_part {
            h[p as usize] += 1;
        }
        h
    }

    pub fn cast<U: Real>(&self) -> BodyMesh<U> {
        BodyMesh {
            vertices: self.vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            skin: self
                .skin
                .iter()
                .map(|w| SkinWeights { joints: w.joints, weights: w.weights.map(|x| x.cast()), count: w.count })
                .collect(),
            vertex_part: self.vertex_part.clone(),
            vertex_uv: self.vertex_uv.iter().map(|uv| uv.map(|x| x.cast())).collect(),
            part_count: self.part_count,
            max_edge: self.max_edge.cast(),
        }
    }
}

/// One capsule-shaped body segment.
struct Capsule {
    start: [f64; 3],
    end: [f64; 3],
    /// Cross-section radii along the two frame axes.
    radii: [f64; 2],
    /// Skin weight anchors: (joint, axial position from `start`), sorted by position.
    anchors: Vec<(usize, f64)>,
    /// One part for the whole capsule, or two for the front/back halves.
    parts: Vec<u16>,
}

fn v3(a: [f64; 3]) -> Vec3<f64> {
    Vec3::new(a[0], a[1], a[2])
}

/// Builds the skeleton and the capsule mesh for `config`.
pub fn build_canonical_body<T: Real>(config: &BodyConfig) -> Result<(Skeleton<T>, BodyMesh<T>), BodyError> {
    let skel64: Skeleton<f64> = config.skeleton()?;
    let rest = skel64.rest_positions();
    let capsules = layout_capsules(config, &rest);
    // Quads are split along a diagonal, so spacing is chosen to keep diagonals
    // within 95% of the bound at density 1.
    let spacing = config.max_edge * config.scale.min(1.0) * 0.95 / std::f64::consts::SQRT_2 / config.mesh_density;
    let part_count = config.parts.part_count() as u16;
    let mut mesh = BodyMesh::<f64>::empty(part_count, config.max_edge);
    for cap in &capsules {
        emit_capsule(&mut mesh, cap, spacing);
    }
    mesh.validate()?;
    Ok((skel64.cast(), mesh.cast()))
}

fn layout_capsules(cfg: &BodyConfig, rest: &[Vec3<f64>]) -> Vec<Capsule> {
    use joint::*;
    let s = cfg.scale;
    let p = |j: usize| rest[j].to_f64();
    let along = |a: usize, b: usize, extra: f64| -> [f64; 3] {
        let d = (rest[b] - rest[a]).normalized().unwrap();
        (rest[b] + d * extra).to_f64()
    };
    let split = cfg.parts == PartScheme::Parts24;
    let parts = |single: u16, front: u16, back: u16| if split { vec![front, back] } else { vec![single] };
    let blend = |len: f64| (0.06 * s).min(0.25 * len);
    // prev joint -> bone joint over [0, len], then bone -> next joint at the far end
    let limb = |prev: usize, bone: usize, next: Option<usize>, len: f64| {
        let h = blend(len);
        let mut a = vec![(prev, -h), (bone, h)];
        if let Some(n) = next {
            a.push((bone, len - h));
            a.push((n, len + h));
        }
        a
    };
    let dist = |a: usize, b: usize| (rest[b] - rest[a]).norm();
    let mut caps = Vec::new();

    let torso_len = dist(PELVIS, NECK);
    caps.push(Capsule {
        start: p(PELVIS),
        end: p(NECK),
        radii: [cfg.torso_radius * s, cfg.torso_radius * cfg.torso_depth_ratio * s],
        anchors: vec![(PELVIS, 0.0), (SPINE, dist(PELVIS, SPINE)), (NECK, torso_len)],
        parts: parts(2, 1, 2),
    });
    let hc = rest[HEAD];
    let hr = cfg.head_radius * s;
    caps.push(Capsule {
        start: (hc - Vec3::new(0.0, 0.25 * hr, 0.0)).to_f64(),
        end: (hc + Vec3::new(0.0, 0.25 * hr, 0.0)).to_f64(),
        radii: [0.85 * hr, hr],
        anchors: vec![(HEAD, 0.0)],
        parts: parts(1, 19, 20),
    });
    for (left, sh, el, wr) in [(true, L_SHOULDER, L_ELBOW, L_WRIST), (false, R_SHOULDER, R_ELBOW, R_WRIST)] {
        let side = if left { 0 } else { 1 };
        let l = dist(sh, el);
        caps.push(Capsule {
            start: p(sh),
            end: p(el),
            radii: [cfg.upper_arm_radius * s; 2],
            anchors: limb(NECK, sh, Some(el), l),
            parts: parts(3 + side, 11 + 2 * side, 12 + 2 * side),
        });
        let l = dist(el, wr);
        if split {
            caps.push(Capsule {
                start: p(el),
                end: p(wr),
                radii: [cfg.forearm_radius * s; 2],
                anchors: limb(sh, el, None, l),
                parts: vec![15 + 2 * side, 16 + 2 * side],
            });
            caps.push(Capsule {
                start: p(wr),
                end: along(el, wr, cfg.hand * s),
                radii: [cfg.forearm_radius * 0.8 * s; 2],
                anchors: vec![(wr, 0.0)],
                parts: vec![21 + side],
            });
        } else {
            // the hand is folded into the forearm and rigid with it
            caps.push(Capsule {
                start: p(el),
                end: along(el, wr, cfg.hand * s),
                radii: [cfg.forearm_radius * s; 2],
                anchors: limb(sh, el, None, l),
                parts: vec![5 + side],
            });
        }
    }
    for (left, hip, knee, ankle, toe) in
        [(true, L_HIP, L_KNEE, L_ANKLE, L_TOE), (false, R_HIP, R_KNEE, R_ANKLE, R_TOE)]
    {
        let side = if left { 0 } else { 1 };
        let l = dist(hip, knee);
        caps.push(Capsule {
            start: p(hip),
            end: p(knee),
            radii: [cfg.thigh_radius * s; 2],
            anchors: limb(PELVIS, hip, Some(knee), l),
            parts: parts(7 + side, 3 + 2 * side, 4 + 2 * side),
        });
        let l = dist(knee, ankle);
        caps.push(Capsule {
            start: p(knee),
            end: p(ankle),
            radii: [cfg.shin_radius * s; 2],
            anchors: limb(hip, knee, Some(ankle), l),
            parts: parts(9 + side, 7 + 2 * side, 8 + 2 * side),
        });
        if split {
            caps.push(Capsule {
                start: p(ankle),
                end: p(toe),
                radii: [cfg.shin_radius * 0.8 * s; 2],
                anchors: vec![(ankle, 0.0)],
                parts: vec![23 + side],
            });
        }
    }
    caps
}

/// Piecewise-linear interpolation of joint influence along the capsule axis.
fn anchor_weights(anchors: &[(usize, f64)], s: f64) -> Vec<(usize, f64)> {
    let first = anchors[0];
    let last = anchors[anchors.len() - 1];
    if s <= first.1 {
        return vec![(first.0, 1.0)];
    }
    if s >= last.1 {
        return vec![(last.0, 1.0)];
    }
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        if s <= b.1 {
            let t = if b.1 > a.1 { (s - a.1) / (b.1 - a.1) } else { 1.0 };
            return vec![(a.0, 1.0 - t), (b.0, t)];
        }
    }
    vec![(last.0, 1.0)]
}

fn emit_capsule(mesh: &mut BodyMesh<f64>, cap: &Capsule, spacing: f64) {
    let a = v3(cap.start);
    let b = v3(cap.end);
    let len = (b - a).norm();
    let axis = (b - a).normalized().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
    let fwd = Vec3::new(0.0, 0.0, 1.0);
    let refv = if axis.dot(fwd).abs() > 0.9 { Vec3::new(0.0, 1.0, 0.0) } else { fwd };
    let e_b = (refv - axis * axis.dot(refv)).normalized().unwrap();
    let e_a = axis.cross(e_b);
    let [ra, rb] = cap.radii;
    let rcap = 0.5 * (ra + rb);
    let rmax = ra.max(rb);

    // profile: bottom hemisphere, cylinder, top hemisphere; parameterized by arc length
    let cap_arc = std::f64::consts::FRAC_PI_2 * rmax;
    let total = 2.0 * cap_arc + len;
    let n_rings = ((total / spacing).ceil() as usize).max(4);
    let ring_at = |t: f64| -> (f64, f64) {
        // returns (axial offset from `a`, radial scale)
        let arc = t * total;
        if arc < cap_arc {
            let phi = arc / cap_arc * std::f64::consts::FRAC_PI_2;
            (-rcap * phi.cos(), phi.sin())
        } else if arc <= cap_arc + len {
            (arc - cap_arc, 1.0)
        } else {
            let phi = (total - arc) / cap_arc * std::f64::consts::FRAC_PI_2;
            (len + rcap * phi.cos(), phi.sin())
        }
    };
    // uniform angular steps: the longest chord sits on the larger radius
    let halves = cap.parts.len();
    let mut n_around = ((2.0 * std::f64::consts::PI * rmax / spacing).ceil() as usize).max(6);
    n_around += n_around % halves;
    let per_half = n_around / halves;

    for (h, &part) in cap.parts.iter().enumerate() {
        let base = mesh.vertices.len() as u32;
        let cols = per_half + 1;
        for r in 0..=n_rings {
            let t = r as f64 / n_rings as f64;
            let (ax, rad) = ring_at(t);
            let weights = anchor_weights(&cap.anchors, ax);
            for c in 0..cols {
                let k = h * per_half + c;
                let alpha = 2.0 * std::f64::consts::PI * k as f64 / n_around as f64;
                let p = a + axis * ax + e_a * (ra * rad * alpha.cos()) + e_b * (rb * rad * alpha.sin());
                mesh.vertices.push(p);
                mesh.skin.push(SkinWeights::from_pairs(&weights));
                mesh.vertex_part.push(part);
                mesh.vertex_uv.push([c as f64 / per_half as f64, t]);
            }
        }
        for r in 0..n_rings {
            for c in 0..per_half {
                let i00 = base + (r * cols + c) as u32;
                let i01 = i00 + 1;
                let i10 = i00 + cols as u32;
                let i11 = i10 + 1;
                for tri in [[i00, i01, i11], [i00, i11, i10]] {
                    push_outward(mesh, tri, a, axis, len);
                }
            }
        }
    }
}

fn push_outward(mesh: &mut BodyMesh<f64>, tri: [u32; 3], a: Vec3<f64>, axis: Vec3<f64>, len: f64) {
    let p = tri.map(|i| mesh.vertices[i as usize]);
    let n = (p[1] - p[0]).cross(p[2] - p[0]);
    if n.norm() < 1e-14 {
        // degenerate triangle at a pole
        return;
    }
    let centroid = (p[0] + p[1] + p[2]) * (1.0 / 3.0);
    let s = (centroid - a).dot(axis).clamp(0.0, len);
    let out = centroid - (a + axis * s);
    if n.dot(out) >= 0.0 {
        mesh.faces.push(tri);
    } else {
        mesh.faces.push([tri[0], tri[2], tri[1]]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_body_satisfies_invariants() {
        let (_, mesh) = build_canonical_body::<f64>(&BodyConfig::default()).unwrap();
        let v = mesh.vertices.len();
        assert!((1000..=3000).contains(&v), "vertex count {v}");
        mesh.validate().unwrap();
        let hist = mesh.part_histogram();
        assert_eq!(hist[0], 0);
        assert!(hist[1..].iter().all(|&c| c > 0), "{hist:?}");
        assert!(mesh.skin.iter().all(|w| w.count as usize <= 4));
    }

    #[test]
    fn twenty_four_parts_cover_every_chart() {
        let cfg = BodyConfig { parts: PartScheme::Parts24, ..Default::default() };
        let (_, mesh) = build_canonical_body::<f64>(&cfg).unwrap();
        mesh.validate().unwrap();
        assert_eq!(mesh.part_count, 24);
        assert!(mesh.part_histogram()[1..].iter().all(|&c| c > 0));
    }

    #[test]
    fn doubling_density_refines_mesh() {
        let coarse = build_canonical_body::<f64>(&BodyConfig::default()).unwrap().1;
        let fine = build_canonical_body::<f64>(&BodyConfig { mesh_density: 2.0, ..Default::default() }).unwrap().1;
        assert!(fine.vertices.len() >= 2 * coarse.vertices.len());
        let ec = coarse.longest_edge(&coarse.vertices).unwrap().3;
        let ef = fine.longest_edge(&fine.vertices).unwrap().3;
        let ratio = ef / (ec / 2.0);
        assert!((0.8..=1.2).contains(&ratio), "edge ratio {ratio}");
    }

    #[test]
    fn uvs_span_each_chart() {
        let (_, mesh) = build_canonical_body::<f64>(&BodyConfig::default()).unwrap();
        for part in 1..=mesh.part_count {
            let uvs: Vec<_> = (0..mesh.vertices.len())
                .filter(|&i| mesh.vertex_part[i] == part)
                .map(|i| mesh.vertex_uv[i])
                .collect();
            let min_u = uvs.iter().map(|x| x[0]).fold(1.0, f64::min);
            let max_u = uvs.iter().map(|x| x[0]).fold(0.0, f64::max);
            let min_v = uvs.iter().map(|x| x[1]).fold(1.0, f64::min);
            let max_v = uvs.iter().map(|x| x[1]).fold(0.0, f64::max);
            assert_eq!((min_u, max_u, min_v, max_v), (0.0, 1.0, 0.0, 1.0));
        }
    }

    #[test]
    fn faces_point_outward() {
        let (_, mesh) = build_canonical_body::<f64>(&BodyConfig::default()).unwrap();
        // the torso front faces +z: faces on the front half must have +z normals
        let torso_front = mesh
            .faces
            .iter()
            .filter(|f| mesh.vertex_part[f[0] as usize] == 2)
            .filter(|f| f.iter().all(|&i| mesh.vertices[i as usize].z > 0.05))
            .filter(|f| f.iter().all(|&i| mesh.vertices[i as usize].y.abs() < 0.2))
            .count();
        assert!(torso_front > 10);
        for f in &mesh.faces {
            let p = f.map(|i| mesh.vertices[i as usize]);
            if mesh.vertex_part[f[0] as usize] == 2 && p.iter().all(|v| v.z > 0.05 && v.y.abs() < 0.2) {
                let n = (p[1] - p[0]).cross(p[2] - p[0]);
                assert!(n.z > 0.0);
            }
        }
    }
}
