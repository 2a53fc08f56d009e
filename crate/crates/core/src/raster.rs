use std::io::Cursor;

use thiserror::Error;

use crate::body::BodyMesh;
use crate::geometry::{Camera, Vec3};
use crate::img::{Image, ImageError};
use crate::scalar::Real;
use crate::textures::{bilinear_taps, TextureStack};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("edge {a}-{b} of face {face} is {length:.4} m long, above the fisheye bound {bound:.4} m")]
    EdgeTooLong { face: usize, a: u32, b: u32, length: f64, bound: f64 },
    #[error("non-finite vertex {0}")]
    NonFinite(usize),
    #[error("part index {part} exceeds texture chart count {charts}")]
    PartCount { part: u16, charts: u16 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Skinning may stretch rest edges; posed fisheye edges may exceed the rest
/// bound by this factor before rasterization is refused.
pub const FISHEYE_EDGE_SLACK: f64 = 1.5;

/// Dense correspondence image: part index, chart coordinates and depth per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IuvImage<T> {
    pub width: usize,
    pub height: usize,
    /// 0 is background.
    pub part: Vec<u16>,
    pub uv: Vec<[T; 2]>,
    /// Metres; `+inf` at background.
    pub depth: Vec<T>,
}

impl<T: Real> IuvImage<T> {
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, part: vec![0; n], uv: vec![[T::zero(); 2]; n], depth: vec![T::infinity(); n] }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.part.iter().map(|&p| p > 0).collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.part.iter().filter(|&&p| p > 0).count()
    }

    pub fn max_part(&self) -> u16 {
        self.part.iter().copied().max().unwrap_or(0)
    }

    /// Checks `part == 0 <=> depth == inf` and finite uv on the foreground.
    pub fn is_consistent(&self) -> bool {
        (0..self.part.len()).all(|i| {
            let fg = self.part[i] > 0;
            fg == self.depth[i].is_finite() && (!fg || (self.uv[i][0].is_finite() && self.uv[i][1].is_finite()))
        })
    }

    /// Foreground intersection over union.
    pub fn mask_iou(&self, o: &Self) -> f64 {
        let (mut inter, mut uni) = (0usize, 0usize);
        for (a, b) in self.part.iter().zip(&o.part) {
            let (a, b) = (*a > 0, *b > 0);
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Mask as a one-channel 0/1 image.
    pub fn mask_image(&self) -> Image<T> {
        Image { width: self.width, height: self.height, channels: 1, data: self.part.iter().map(|&p| if p > 0 { T::one() } else { T::zero() }).collect() }
    }

    /// 16-bit RGB samples: part, round(u * 65535), round(v * 65535).
    pub fn to_u16(&self) -> Vec<u16> {
        let q = |v: T| (v.to_f64_lossy().clamp(0.0, 1.0) * 65535.0).round() as u16;
        let mut out = Vec::with_capacity(3 * self.part.len());
        for i in 0..self.part.len() {
            if self.part[i] == 0 {
                out.extend_from_slice(&[0, 0, 0]);
            } else {
                out.extend_from_slice(&[self.part[i], q(self.uv[i][0]), q(self.uv[i][1])]);
            }
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(self.width as u32, self.height as u32, self.to_u16())
            .ok_or_else(|| RasterError::Shape("iuv buffer size".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png).map_err(ImageError::from)?;
        Ok(out.into_inner())
    }

    /// Decodes the 16-bit format. Depth is not stored: foreground pixels get
    /// depth 1 so the image stays well formed.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(ImageError::from)?;
        let rgb = img.to_rgb16();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut out = Self::background(w, h);
        for (i, px) in rgb.pixels().enumerate() {
            if px[0] > 0 {
                out.part[i] = px[0];
                out.uv[i] = [T::lit(px[1] as f64 / 65535.0), T::lit(px[2] as f64 / 65535.0)];
                out.depth[i] = T::one();
            }
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> IuvImage<U> {
        IuvImage {
            width: self.width,
            height: self.height,
            part: self.part.clone(),
            uv: self.uv.iter().map(|uv| [uv[0].cast(), uv[1].cast()]).collect(),
            depth: self.depth.iter().map(|&d| d.cast()).collect(),
        }
    }
}

/// Posed triangle soup with per-vertex part labels and chart coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Surface<'a, T> {
    pub positions: &'a [Vec3<T>],
    pub faces: &'a [[u32; 3]],
    pub vertex_part: &'a [u16],
    pub vertex_uv: &'a [[T; 2]],
    /// Rest edge bound; enforced (with slack) for fisheye cameras.
    pub max_edge: T,
}

impl<'a, T: Real> Surface<'a, T> {
    pub fn posed(mesh: &'a BodyMesh<T>, positions: &'a [Vec3<T>]) -> Self {
        Self { positions, faces: &mesh.faces, vertex_part: &mesh.vertex_part, vertex_uv: &mesh.vertex_uv, max_edge: mesh.max_edge }
    }
}

struct Projected<T> {
    px: [T; 2],
    /// Optical-axis depth (pinhole) or range (fisheye).
    depth: T,
    visible: bool,
}

/// Z-buffered rasterization into an IUV image of the camera's size.
///
/// Triangles are back-face culled in 3D. Pinhole triangles with any vertex
/// behind the near plane are dropped, interpolation is perspective-correct.
/// Fisheye triangles are drawn between projected vertices with screen-linear
/// interpolation and dropped only when no vertex lies inside the field of
/// view; pixels outside the field-of-view circle stay background. Equal
/// depths keep the lower face index.
pub fn rasterize<T: Real>(surface: &Surface<'_, T>, camera: &Camera<T>) -> Result<IuvImage<T>, RasterError> {
    let (w, h) = camera.image_size();
    let (w, h) = (w as usize, h as usize);
    let mut out = IuvImage::background(w, h);
    let pose = camera.pose();
    let cam_pts: Vec<Vec3<T>> = surface.positions.iter().map(|&p| pose.apply(p)).collect();
    if let Some(i) = cam_pts.iter().position(|p| !p.is_finite()) {
        return Err(RasterError::NonFinite(i));
    }
    if let Camera::Fisheye(_) = camera {
        let bound = surface.max_edge * T::lit(FISHEYE_EDGE_SLACK);
        for (fi, f) in surface.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let l = (cam_pts[a as usize] - cam_pts[b as usize]).norm();
                if l > bound {
                    return Err(RasterError::EdgeTooLong { face: fi, a, b, length: l.to_f64_lossy(), bound: bound.to_f64_lossy() });
                }
            }
        }
    }
    let proj: Vec<Projected<T>> = cam_pts
        .iter()
        .map(|&p| match camera {
            Camera::Pinhole(c) => match c.project(p) {
                Some((px, z)) => Projected { px, depth: z, visible: true },
                None => Projected { px: [T::zero(); 2], depth: T::zero(), visible: false },
            },
            Camera::Fisheye(c) => match c.project_unbounded(p) {
                Ok(Some((px, theta))) => Projected { px, depth: p.norm(), visible: theta <= c.fov_max },
                _ => Projected { px: [T::zero(); 2], depth: T::zero(), visible: false },
            },
        })
        .collect();
    let fisheye = match camera {
        Camera::Fisheye(c) => Some((c.principal_point, c.fov_radius())),
        Camera::Pinhole(_) => None,
    };

    for f in surface.faces {
        let idx = [f[0] as usize, f[1] as usize, f[2] as usize];
        let [a, b, c] = idx.map(|i| &proj[i]);
        match fisheye {
            None if !(a.visible && b.visible && c.visible) => continue,
            Some(_) if !(a.visible || b.visible || c.visible) => continue,
            Some(_) if [a, b, c].iter().any(|p| p.depth == T::zero()) => continue,
            _ => {}
        }
        let [pa, pb, pc] = idx.map(|i| cam_pts[i]);
        let n = (pb - pa).cross(pc - pa);
        if n.dot(pa) >= T::zero() {
            continue;
        }
        let area = edge(a.px, b.px, c.px);
        if area == T::zero() || !area.is_finite() {
            continue;
        }
        let xs = [a.px[0], b.px[0], c.px[0]];
        let ys = [a.px[1], b.px[1], c.px[1]];
        let lo = |v: [T; 3]| v[0].min(v[1]).min(v[2]);
        let hi = |v: [T; 3]| v[0].max(v[1]).max(v[2]);
        let x0 = (lo(xs) - T::half()).ceil().max(T::zero()).to_f64_lossy() as usize;
        let y0 = (lo(ys) - T::half()).ceil().max(T::zero()).to_f64_lossy() as usize;
        let x1 = (hi(xs) - T::half()).floor().to_f64_lossy();
        let y1 = (hi(ys) - T::half()).floor().to_f64_lossy();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = (x1 as usize).min(w.saturating_sub(1));
        let y1 = (y1 as usize).min(h.saturating_sub(1));
        let part = surface.vertex_part[idx[0]];
        let uvs = idx.map(|i| surface.vertex_uv[i]);
        let inv_area = T::one() / area;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [T::of_usize(x) + T::half(), T::of_usize(y) + T::half()];
                let l0 = edge(b.px, c.px, p) * inv_area;
                let l1 = edge(c.px, a.px, p) * inv_area;
                let l2 = edge(a.px, b.px, p) * inv_area;
                if l0 < T::zero() || l1 < T::zero() || l2 < T::zero() {
                    continue;
                }
                if let Some((pp, r)) = fisheye {
                    let (dx, dy) = (p[0] - pp[0], p[1] - pp[1]);
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                }
                let (depth, wts) = match fisheye {
                    None => {
                        let q = [l0 / a.depth, l1 / b.depth, l2 / c.depth];
                        let z = T::one() / (q[0] + q[1] + q[2]);
                        (z, [q[0] * z, q[1] * z, q[2] * z])
                    }
                    Some(_) => (l0 * a.depth + l1 * b.depth + l2 * c.depth, [l0, l1, l2]),
                };
                let k = y * w + x;
                if depth < out.depth[k] {
                    out.depth[k] = depth;
                    out.part[k] = part;
                    let clamp = |v: T| v.max(T::zero()).min(T::one());
                    out.uv[k] = [
                        clamp(wts[0] * uvs[0][0] + wts[1] * uvs[1][0] + wts[2] * uvs[2][0]),
                        clamp(wts[0] * uvs[0][1] + wts[1] * uvs[1][1] + wts[2] * uvs[2][1]),
                    ];
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn edge<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Per-pixel feature vectors (H x W x C).
pub type FeatureImage<T> = Image<T>;

fn check_parts<T: Real>(tex: &TextureStack<T>, iuv: &IuvImage<T>) -> Result<(), RasterError> {
    let part = iuv.max_part();
    if part > tex.layout.part_count {
        return Err(RasterError::PartCount { part, charts: tex.layout.part_count });
    }
    Ok(())
}

/// Bilinear sampling of each foreground pixel's chart at its (u, v); zero at background.
pub fn feature_render<T: Real>(tex: &TextureStack<T>, iuv: &IuvImage<T>) -> Result<FeatureImage<T>, RasterError> {
    check_parts(tex, iuv)?;
    let c = tex.channels;
    let mut out = Image::zeros(iuv.width, iuv.height, c);
    for (i, &p) in iuv.part.iter().enumerate() {
        if p > 0 {
            let [u, v] = iuv.uv[i];
            tex.sample_into(p, u, v, &mut out.data[i * c..(i + 1) * c]);
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`feature_render`] with respect to the texel values.
pub fn feature_render_grad<T: Real>(
    tex: &TextureStack<T>,
    iuv: &IuvImage<T>,
    upstream: &FeatureImage<T>,
) -> Result<TextureStack<T>, RasterError> {
    check_parts(tex, iuv)?;
    let c = tex.channels;
    if upstream.width != iuv.width || upstream.height != iuv.height || upstream.channels != c {
        return Err(RasterError::Shape(format!(
            "upstream {}x{}x{} vs iuv {}x{} with {c} channels",
            upstream.width, upstream.height, upstream.channels, iuv.width, iuv.height
        )));
    }
    let mut grad = TextureStack::zeros(tex.layout, c);
    for (i, &p) in iuv.part.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let [u, v] = iuv.uv[i];
        let g = &upstream.data[i * c..(i + 1) * c];
        for (x, y, w) in bilinear_taps(tex.layout.chart_size, u, v) {
            for (t, &gv) in grad.texel_mut(p, x, y).iter_mut().zip(g) {
                *t += w * gv;
            }
        }
    }
    Ok(grad)
}
