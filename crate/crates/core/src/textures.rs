use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{BlockData, Container, ContainerError};
use crate::img::Image;
use crate::raster::IuvImage;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("no training records")]
    Empty,
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("texture file: {0}")]
    Format(String),
}

pub const ATLAS_COLUMNS: usize = 6;

/// P square charts of S x S texels, arranged in a grid of fixed width for previews.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtlasLayout {
    pub part_count: u16,
    pub chart_size: usize,
    pub columns: usize,
}

impl AtlasLayout {
    pub fn new(part_count: u16, chart_size: usize) -> Self {
        Self { part_count, chart_size, columns: ATLAS_COLUMNS }
    }

    pub fn rows(&self) -> usize {
        (self.part_count as usize).div_ceil(self.columns)
    }

    pub fn texels_per_chart(&self) -> usize {
        self.chart_size * self.chart_size
    }

    pub fn texel_count(&self) -> usize {
        self.part_count as usize * self.texels_per_chart()
    }

    /// Flat texel index of `(x, y)` in the chart of `part` (1-based).
    #[inline]
    pub fn texel(&self, part: u16, x: usize, y: usize) -> usize {
        (part as usize - 1) * self.texels_per_chart() + y * self.chart_size + x
    }
}

/// Four bilinear taps `(x, y, weight)` for chart coordinates `(u, v)`.
///
/// Texel `i` has its centre at `(i + 0.5) / S`; coordinates are clamped to
/// the span of texel centres so samples never read a neighbouring chart.
#[inline]
pub fn bilinear_taps<T: Real>(size: usize, u: T, v: T) -> [(usize, usize, T); 4] {
    let s = T::of_usize(size);
    let hi = T::of_usize(size - 1);
    let fx = (u * s - T::half()).max(T::zero()).min(hi);
    let fy = (v * s - T::half()).max(T::zero()).min(hi);
    let x0 = fx.floor().to_f64_lossy() as usize;
    let y0 = fy.floor().to_f64_lossy() as usize;
    let x0 = x0.min(size.saturating_sub(2));
    let y0 = y0.min(size.saturating_sub(2));
    let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
    let tx = fx - T::of_usize(x0);
    let ty = fy - T::of_usize(y0);
    let (ux, uy) = (T::one() - tx, T::one() - ty);
    [(x0, y0, ux * uy), (x1, y0, tx * uy), (x0, y1, ux * ty), (x1, y1, tx * ty)]
}

/// Per-part texture charts with `channels` values per texel.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureStack<T> {
    pub layout: AtlasLayout,
    pub channels: usize,
    /// Chart-major, then row, column, channel.
    pub data: Vec<T>,
    /// Present for explicit (extracted) stacks.
    pub visibility: Option<Vec<bool>>,
}

impl<T: Real> TextureStack<T> {
    pub fn filled(layout: AtlasLayout, channels: usize, v: T) -> Self {
        Self { layout, channels, data: vec![v; layout.texel_count() * channels], visibility: None }
    }

    pub fn zeros(layout: AtlasLayout, channels: usize) -> Self {
        Self::filled(layout, channels, T::zero())
    }

    #[inline]
    pub fn texel(&self, part: u16, x: usize, y: usize) -> &[T] {
        let i = self.layout.texel(part, x, y) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, part: u16, x: usize, y: usize) -> &mut [T] {
        let i = self.layout.texel(part, x, y) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample of the chart of `part` at `(u, v)`, accumulated into `out`.
    #[inline]
    pub fn sample_into(&self, part: u16, u: T, v: T, out: &mut [T]) {
        for (x, y, w) in bilinear_taps(self.layout.chart_size, u, v) {
            for (o, &t) in out.iter_mut().zip(self.texel(part, x, y)) {
                *o += w * t;
            }
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.as_ref().map(|v| v.iter().filter(|&&b| b).count()).unwrap_or(self.layout.texel_count())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> TextureStack<U> {
        TextureStack {
            layout: self.layout,
            channels: self.channels,
            data: self.data.iter().map(|&v| v.cast()).collect(),
            visibility: self.visibility.clone(),
        }
    }

    /// Order-sensitive 64-bit FNV-1a digest of the texel values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_f64_lossy().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Atlas preview: charts tiled on the layout grid, 3 channels starting at `first_channel`.
    pub fn preview(&self, first_channel: usize) -> Image<T> {
        let s = self.layout.chart_size;
        let tiles: Vec<Image<T>> = (1..=self.layout.part_count)
            .map(|p| {
                let mut img = Image::zeros(s, s, 3);
                for y in 0..s {
                    for x in 0..s {
                        let t = self.texel(p, x, y);
                        let px = img.pixel_mut(x, y);
                        for c in 0..3 {
                            px[c] = t.get(first_channel + c).or_else(|| t.get(first_channel)).copied().unwrap_or(T::zero());
                        }
                    }
                }
                img
            })
            .collect();
        Image::grid(&tiles, self.layout.columns).expect("tiles share a shape")
    }

    pub fn save(&self, path: &Path) -> Result<(), TextureError> {
        let header = TextureHeader {
            kind: KIND.into(),
            part_count: self.layout.part_count,
            chart_size: self.layout.chart_size,
            columns: self.layout.columns,
            channels: self.channels,
            has_visibility: self.visibility.is_some(),
        };
        let mut c = Container::new(header);
        c.push("texels", BlockData::F32(self.data.iter().map(|v| v.to_f32_lossy()).collect()));
        if let Some(vis) = &self.visibility {
            c.push("visibility", BlockData::U8(pack_bits(vis)));
        }
        c.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextureError> {
        let c = Container::<TextureHeader>::load(path)?;
        let h = &c.meta;
        if h.kind != KIND {
            return Err(TextureError::Format(format!("unexpected kind `{}`", h.kind)));
        }
        let layout = AtlasLayout { part_count: h.part_count, chart_size: h.chart_size, columns: h.columns };
        let texels = c.f32("texels")?;
        if texels.len() != layout.texel_count() * h.channels {
            return Err(TextureError::Format("texel block size disagrees with header".into()));
        }
        let visibility = if h.has_visibility {
            Some(unpack_bits(c.u8("visibility")?, layout.texel_count()))
        } else {
            None
        };
        Ok(Self { layout, channels: h.channels, data: texels.iter().map(|&v| T::lit(v as f64)).collect(), visibility })
    }
}

const KIND: &str = "egorender-texture";

#[derive(Debug, Serialize, Deserialize)]
struct TextureHeader {
    kind: String,
    part_count: u16,
    chart_size: usize,
    columns: usize,
    channels: usize,
    has_visibility: bool,
}

fn pack_bits(v: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; v.len().div_ceil(8)];
    for (i, &b) in v.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes.get(i / 8).map(|b| b >> (i % 8) & 1 == 1).unwrap_or(false)).collect()
}

/// Depths closer than this are treated as the same surface when two pixels
/// land on one texel.
const DEPTH_TIE: f64 = 1e-6;

/// Splats each foreground pixel onto the nearest interior texel of its chart.
/// Collisions keep the nearest surface, then the pixel closest to the texel
/// centre, then the earliest pixel. Border texels are then filled by copying
/// their nearest interior texel (values and visibility).
pub fn extract_partial_texture<T: Real>(
    image: &Image<T>,
    iuv: &IuvImage<T>,
    layout: AtlasLayout,
) -> Result<TextureStack<T>, TextureError> {
    if image.width != iuv.width || image.height != iuv.height || image.channels != 3 {
        return Err(TextureError::Dimensions(format!(
            "image {}x{}x{} vs iuv {}x{}",
            image.width, image.height, image.channels, iuv.width, iuv.height
        )));
    }
    if iuv.max_part() > layout.part_count {
        return Err(TextureError::Layout(format!("iuv part {} beyond {} charts", iuv.max_part(), layout.part_count)));
    }
    let s = layout.chart_size;
    if s < 3 {
        return Err(TextureError::Layout("chart size must be >= 3".into()));
    }
    let sf = T::of_usize(s);
    let hi = (s - 2) as f64;
    // (depth, squared distance to texel centre, pixel index)
    let mut best: Vec<Option<(T, T, usize)>> = vec![None; layout.texel_count()];
    let tie = T::lit(DEPTH_TIE);
    for i in 0..iuv.part.len() {
        let p = iuv.part[i];
        if p == 0 {
            continue;
        }
        let [u, v] = iuv.uv[i];
        let (fu, fv) = (u * sf, v * sf);
        let tx = fu.floor().to_f64_lossy().clamp(1.0, hi) as usize;
        let ty = fv.floor().to_f64_lossy().clamp(1.0, hi) as usize;
        let du = fu - T::of_usize(tx) - T::half();
        let dv = fv - T::of_usize(ty) - T::half();
        let cand = (iuv.depth[i], du * du + dv * dv, i);
        let k = layout.texel(p, tx, ty);
        let wins = match best[k] {
            None => true,
            Some((d, r, _)) => cand.0 < d - tie || ((cand.0 - d).abs() <= tie && cand.1 < r),
        };
        if wins {
            best[k] = Some(cand);
        }
    }
    let mut out = TextureStack::zeros(layout, 3);
    let mut vis = vec![false; layout.texel_count()];
    for (k, b) in best.iter().enumerate() {
        if let Some((_, _, i)) = b {
            out.data[3 * k..3 * k + 3].copy_from_slice(&image.data[3 * i..3 * i + 3]);
            vis[k] = true;
        }
    }
    out.visibility = Some(vis);
    fill_gutter(&mut out);
    Ok(out)
}

fn fill_gutter<T: Real>(t: &mut TextureStack<T>) {
    let s = t.layout.chart_size;
    let c = t.channels;
    for p in 1..=t.layout.part_count {
        for y in 0..s {
            for x in 0..s {
                if x > 0 && x < s - 1 && y > 0 && y < s - 1 {
                    continue;
                }
                let src = t.layout.texel(p, x.clamp(1, s - 2), y.clamp(1, s - 2));
                let dst = t.layout.texel(p, x, y);
                t.data.copy_within(src * c..src * c + c, dst * c);
                if let Some(v) = t.visibility.as_mut() {
                    v[dst] = v[src];
                }
            }
        }
    }
}

/// Mean extracted texture over the records, accumulated in `f64`. Texels
/// never visible are set to 0.5.
pub fn init_implicit_stack<T: Real>(
    records: &[(Image<T>, IuvImage<T>)],
    layout: AtlasLayout,
) -> Result<TextureStack<T>, TextureError> {
    if records.is_empty() {
        return Err(TextureError::Empty);
    }
    let n = layout.texel_count();
    let mut sum = vec![0.0f64; 3 * n];
    let mut count = vec![0u32; n];
    for (img, iuv) in records {
        let te = extract_partial_texture(img, iuv, layout)?;
        let vis = te.visibility.as_ref().expect("extraction sets visibility");
        for k in 0..n {
            if vis[k] {
                count[k] += 1;
                for c in 0..3 {
                    sum[3 * k + c] += te.data[3 * k + c].to_f64_lossy();
                }
            }
        }
    }
    let mut out = TextureStack::filled(layout, 3, T::half());
    for k in 0..n {
        if count[k] > 0 {
            for c in 0..3 {
                out.data[3 * k + c] = T::lit(sum[3 * k + c] / count[k] as f64);
            }
        }
    }
    Ok(out)
}

/// Channel concatenation `[a, b]`; the result carries no visibility mask.
pub fn concat_channels<T: Real>(a: &TextureStack<T>, b: &TextureStack<T>) -> Result<TextureStack<T>, TextureError> {
    if a.layout != b.layout {
        return Err(TextureError::Layout(format!("{:?} vs {:?}", a.layout, b.layout)));
    }
    let c = a.channels + b.channels;
    let mut data = Vec::with_capacity(a.layout.texel_count() * c);
    for (x, y) in a.data.chunks_exact(a.channels).zip(b.data.chunks_exact(b.channels)) {
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    Ok(TextureStack { layout: a.layout, channels: c, data, visibility: None })
}

/// Global stack `[T_e, T_m]` (3 + 3 channels).
pub fn compose_global<T: Real>(t_e: &TextureStack<T>, t_m: &TextureStack<T>) -> Result<TextureStack<T>, TextureError> {
    if t_e.channels != 3 || t_m.channels != 3 {
        return Err(TextureError::Layout(format!("expected 3 + 3 channels, got {} + {}", t_e.channels, t_m.channels)));
    }
    concat_channels(t_e, t_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> AtlasLayout {
        AtlasLayout::new(10, 16)
    }

    fn single_pixel(part: u16, uv: [f64; 2], color: [f64; 3]) -> (Image<f64>, IuvImage<f64>) {
        let mut iuv = IuvImage::background(3, 3);
        iuv.part[4] = part;
        iuv.uv[4] = uv;
        iuv.depth[4] = 1.0;
        let mut img = Image::zeros(3, 3, 3);
        img.pixel_mut(1, 1).copy_from_slice(&color);
        (img, iuv)
    }

    #[test]
    fn layout_grid() {
        assert_eq!(AtlasLayout::new(10, 64).rows(), 2);
        assert_eq!(AtlasLayout::new(24, 64).rows(), 4);
        assert_eq!(AtlasLayout::new(6, 64).rows(), 1);
    }

    #[test]
    fn background_extracts_to_zero() {
        let iuv = IuvImage::<f64>::background(5, 4);
        let t = extract_partial_texture(&Image::filled(5, 4, 3, 0.7), &iuv, layout()).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
        assert_eq!(t.visible_count(), 0);
    }

    #[test]
    fn single_splat_lands_on_centre_texel() {
        let (img, iuv) = single_pixel(2, [0.5, 0.5], [0.1, 0.2, 0.3]);
        let t = extract_partial_texture(&img, &iuv, layout()).unwrap();
        assert_eq!(t.texel(2, 8, 8), &[0.1, 0.2, 0.3]);
        assert_eq!(t.visible_count(), 1);
        let vis = t.visibility.as_ref().unwrap();
        for (k, &v) in vis.iter().enumerate() {
            if !v {
                assert!(t.data[3 * k..3 * k + 3].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn corner_splat_is_replicated_into_gutter() {
        let (img, iuv) = single_pixel(1, [0.0, 0.0], [0.5, 0.5, 0.5]);
        let t = extract_partial_texture(&img, &iuv, layout()).unwrap();
        // interior texel (1,1) plus its three gutter copies
        assert_eq!(t.visible_count(), 4);
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            assert_eq!(t.texel(1, x, y), &[0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn nearer_pixel_wins_collision() {
        let mut iuv = IuvImage::<f64>::background(2, 1);
        let mut img = Image::zeros(2, 1, 3);
        for i in 0..2 {
            iuv.part[i] = 1;
            iuv.uv[i] = [0.5, 0.5];
        }
        iuv.depth[0] = 2.0;
        iuv.depth[1] = 1.0;
        img.pixel_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0]);
        img.pixel_mut(1, 0).copy_from_slice(&[0.0, 1.0, 0.0]);
        let t = extract_partial_texture(&img, &iuv, layout()).unwrap();
        assert_eq!(t.texel(1, 8, 8), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn extraction_is_idempotent() {
        let (img, iuv) = single_pixel(3, [0.3, 0.7], [0.9, 0.1, 0.4]);
        let a = extract_partial_texture(&img, &iuv, layout()).unwrap();
        let b = extract_partial_texture(&img, &iuv, layout()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let iuv = IuvImage::<f64>::background(3, 3);
        assert!(matches!(
            extract_partial_texture(&Image::zeros(4, 3, 3), &iuv, layout()),
            Err(TextureError::Dimensions(_))
        ));
    }

    #[test]
    fn implicit_init_one_record_matches_extraction() {
        let rec = single_pixel(2, [0.5, 0.5], [0.1, 0.2, 0.3]);
        let te = extract_partial_texture(&rec.0, &rec.1, layout()).unwrap();
        let tm = init_implicit_stack(&[rec], layout()).unwrap();
        let vis = te.visibility.as_ref().unwrap();
        for k in 0..layout().texel_count() {
            if vis[k] {
                assert_eq!(te.data[3 * k..3 * k + 3], tm.data[3 * k..3 * k + 3]);
            } else {
                assert!(tm.data[3 * k..3 * k + 3].iter().all(|&v| v == 0.5));
            }
        }
        assert!(tm.visibility.is_none());
    }

    #[test]
    fn implicit_init_averages_records() {
        let a = single_pixel(2, [0.5, 0.5], [0.2, 0.2, 0.2]);
        let b = single_pixel(2, [0.5, 0.5], [0.4, 0.4, 0.4]);
        let tm = init_implicit_stack(&[a.clone(), b.clone()], layout()).unwrap();
        assert!((tm.texel(2, 8, 8)[0] - 0.3).abs() < 1e-15);
        assert_eq!(tm.texel(5, 3, 3), &[0.5, 0.5, 0.5]);
        let tm2 = init_implicit_stack(&[b, a], layout()).unwrap();
        assert_eq!(tm, tm2);
        assert!(matches!(init_implicit_stack::<f64>(&[], layout()), Err(TextureError::Empty)));
    }

    #[test]
    fn global_stack_concatenates_in_order() {
        let te = TextureStack::<f64>::zeros(layout(), 3);
        let mut tm = TextureStack::zeros(layout(), 3);
        for (i, v) in tm.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let tg = compose_global(&te, &tm).unwrap();
        assert_eq!(tg.channels, 6);
        for k in 0..layout().texel_count() {
            assert_eq!(&tg.data[6 * k..6 * k + 3], &[0.0; 3]);
            assert_eq!(tg.data[6 * k + 3], tm.data[3 * k]);
        }
        let other = TextureStack::<f64>::zeros(AtlasLayout::new(24, 16), 3);
        assert!(compose_global(&te, &other).is_err());
    }

    #[test]
    fn file_round_trip_keeps_visibility() {
        let (img, iuv) = single_pixel(4, [0.25, 0.5], [0.5, 0.25, 1.0]);
        let t = extract_partial_texture::<f64>(&img, &iuv, layout()).unwrap().cast::<f32>();
        let dir = std::env::temp_dir().join(format!("egorender-tex-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        t.save(&path).unwrap();
        assert_eq!(TextureStack::<f32>::load(&path).unwrap(), t);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn preview_has_grid_shape() {
        let t = TextureStack::<f32>::filled(AtlasLayout::new(10, 8), 6, 0.5);
        let p = t.preview(3);
        assert_eq!((p.width, p.height, p.channels), (48, 16, 3));
    }
}
