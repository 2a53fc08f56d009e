//! Procedural body textures and backgrounds.

use std::f32::consts::TAU;
use std::path::Path;

use egorender_core::img::Image;
use egorender_core::textures::{AtlasLayout, TextureStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{mix_seed, SynthError};

const TEXTURE_DOMAIN: u64 = 0x7e57_0001;
const BACKGROUND_DOMAIN: u64 = 0xb6_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Garment {
    Skin,
    Top,
    Bottom,
}

/// Garment worn on each part. Parts10 is exact; other schemes cycle.
fn garment(part: u16, part_count: u16, bare_forearms: bool) -> Garment {
    if part_count != 10 {
        return [Garment::Top, Garment::Bottom, Garment::Skin][part as usize % 3];
    }
    match part {
        1 => Garment::Skin,
        2..=4 => Garment::Top,
        5 | 6 if bare_forearms => Garment::Skin,
        5 | 6 => Garment::Top,
        _ => Garment::Bottom,
    }
}

#[derive(Debug, Clone, Copy)]
struct Cloth {
    base: [f32; 3],
    stripe: [f32; 3],
    /// Cycles across the chart; 0 means plain.
    freq: f32,
    angle: f32,
    duty: f32,
}

impl Cloth {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut color = || [rng.gen_range(0.05..0.95f32), rng.gen_range(0.05..0.95f32), rng.gen_range(0.05..0.95f32)];
        let (base, stripe) = (color(), color());
        let freq = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(1..7) as f32 };
        Self { base, stripe, freq, angle: rng.gen_range(0.0..TAU), duty: rng.gen_range(0.2..0.6) }
    }

    fn at(&self, u: f32, v: f32) -> [f32; 3] {
        let s = u * self.angle.cos() + v * self.angle.sin();
        if self.freq > 0.0 && (s * self.freq).rem_euclid(1.0) < self.duty {
            self.stripe
        } else {
            self.base
        }
    }
}

fn skin_tone(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let t = rng.gen_range(0.0..1.0f32);
    let dark = [0.30, 0.18, 0.12];
    let light = [0.96, 0.80, 0.70];
    std::array::from_fn(|c| dark[c] + (light[c] - dark[c]) * t)
}

/// RGB texture for `texture_id`: per-garment base colours with stripes, a
/// hair cap on the head chart and light texel noise. Values lie in `[0, 1]`.
pub fn sample_texture(seed: u64, texture_id: u64, layout: AtlasLayout) -> TextureStack<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ TEXTURE_DOMAIN, texture_id));
    let skin = skin_tone(&mut rng);
    let hair = [rng.gen_range(0.02..0.6f32), rng.gen_range(0.02..0.45f32), rng.gen_range(0.02..0.3f32)];
    let hair_line = rng.gen_range(0.55..0.8f32);
    let top = Cloth::sample(&mut rng);
    let bottom = Cloth::sample(&mut rng);
    let bare_forearms = rng.gen_bool(0.5);
    let noise = rng.gen_range(0.01..0.06f32);

    let s = layout.chart_size;
    let mut tex = TextureStack::zeros(layout, 3);
    for part in 1..=layout.part_count {
        let g = garment(part, layout.part_count, bare_forearms);
        for y in 0..s {
            for x in 0..s {
                let (u, v) = ((x as f32 + 0.5) / s as f32, (y as f32 + 0.5) / s as f32);
                let c = match g {
                    Garment::Skin if part == 1 && layout.part_count == 10 && v > hair_line => hair,
                    Garment::Skin => skin,
                    Garment::Top => top.at(u, v),
                    Garment::Bottom => bottom.at(u, v),
                };
                let n = rng.gen_range(-noise..noise);
                for (o, &c) in tex.texel_mut(part, x, y).iter_mut().zip(&c) {
                    *o = (c + n).clamp(0.0, 1.0);
                }
            }
        }
    }
    tex
}

/// Splits an atlas image laid out like [`TextureStack::preview`] into charts.
pub fn texture_from_atlas_image(img: &Image<f32>, layout: AtlasLayout) -> Result<TextureStack<f32>, SynthError> {
    let s = layout.chart_size;
    let (w, h) = (layout.columns * s, layout.rows() * s);
    if img.width != w || img.height != h || img.channels < 3 {
        return Err(SynthError::Config(format!(
            "atlas image is {}x{}x{}, expected {w}x{h}x3",
            img.width, img.height, img.channels
        )));
    }
    let mut tex = TextureStack::zeros(layout, 3);
    for part in 1..=layout.part_count {
        let k = part as usize - 1;
        let (ox, oy) = ((k % layout.columns) * s, (k / layout.columns) * s);
        for y in 0..s {
            for x in 0..s {
                let px = img.pixel(ox + x, oy + y);
                tex.texel_mut(part, x, y).copy_from_slice(&px[..3]);
            }
        }
    }
    Ok(tex)
}

/// Loads `*.png` atlas images from `dir` in name order.
pub fn load_texture_dir(dir: &Path, layout: AtlasLayout) -> Result<Vec<TextureStack<f32>>, SynthError> {
    load_pngs(dir)?.iter().map(|img| texture_from_atlas_image(img, layout)).collect()
}

/// Procedural backdrop: a vertical two-colour gradient, a few soft blobs and noise.
pub fn procedural_background(seed: u64, background_id: u64, width: usize, height: usize) -> Image<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ BACKGROUND_DOMAIN, background_id));
    let top: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let bottom: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let blobs: Vec<([f32; 2], f32, [f32; 3])> = (0..rng.gen_range(2..6))
        .map(|_| {
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let r = rng.gen_range(0.08..0.35);
            (c, r, std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
        })
        .collect();
    let noise = rng.gen_range(0.0..0.05f32);
    let mut img = Image::zeros(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = ((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
            let mut c: [f32; 3] = std::array::from_fn(|k| top[k] + (bottom[k] - top[k]) * fy);
            for &(centre, r, col) in &blobs {
                let d2 = (fx - centre[0]).powi(2) + (fy - centre[1]).powi(2);
                let a = (-d2 / (r * r)).exp() * 0.8;
                for k in 0..3 {
                    c[k] += (col[k] - c[k]) * a;
                }
            }
            let n = rng.gen_range(-noise..=noise);
            for (o, v) in img.pixel_mut(x, y).iter_mut().zip(c) {
                *o = (v + n).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Nearest-neighbour resample to `width x height`.
pub fn resize_nearest(img: &Image<f32>, width: usize, height: usize) -> Image<f32> {
    let mut out = Image::zeros(width, height, img.channels);
    for y in 0..height {
        let sy = (y * img.height / height).min(img.height - 1);
        for x in 0..width {
            let sx = (x * img.width / width).min(img.width - 1);
            out.pixel_mut(x, y).copy_from_slice(img.pixel(sx, sy));
        }
    }
    out
}

pub(crate) fn load_pngs(dir: &Path) -> Result<Vec<Image<f32>>, SynthError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SynthError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SynthError::Config(format!("no png images in {}", dir.display())));
    }
    paths.iter().map(|p| Image::<f32>::load_png(p).map_err(|e| SynthError::Image(format!("{}: {e}", p.display())))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> AtlasLayout {
        AtlasLayout::new(10, 16)
    }

    #[test]
    fn same_id_is_bit_identical_and_ids_differ() {
        let a = sample_texture(3, 0, layout());
        assert_eq!(a, sample_texture(3, 0, layout()));
        let b = sample_texture(3, 1, layout());
        let l1: f32 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 > 0.0);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn per_part_means_span_a_wide_range() {
        let l = layout();
        let n = l.texels_per_chart();
        let means: Vec<Vec<[f32; 3]>> = (0..100)
            .map(|id| {
                let t = sample_texture(11, id, l);
                (1..=l.part_count)
                    .map(|p| {
                        let mut m = [0.0f32; 3];
                        for i in 0..n {
                            for c in 0..3 {
                                m[c] += t.texel(p, i % l.chart_size, i / l.chart_size)[c] / n as f32;
                            }
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        for p in 0..l.part_count as usize {
            for c in 0..3 {
                let vals = means.iter().map(|m| m[p][c]);
                let lo = vals.clone().fold(f32::INFINITY, f32::min);
                let hi = vals.fold(f32::NEG_INFINITY, f32::max);
                assert!(hi - lo >= 0.3, "part {} channel {c}: {lo}..{hi}", p + 1);
            }
        }
    }

    #[test]
    fn atlas_image_round_trip() {
        let t = sample_texture(0, 4, layout());
        let back = texture_from_atlas_image(&t.preview(0), layout()).unwrap();
        assert_eq!(back.data, t.data);
        assert!(texture_from_atlas_image(&Image::zeros(5, 5, 3), layout()).is_err());
    }

    #[test]
    fn backgrounds_are_deterministic_and_bounded() {
        let a = procedural_background(1, 2, 24, 16);
        assert_eq!(a, procedural_background(1, 2, 24, 16));
        assert_ne!(a, procedural_background(1, 3, 24, 16));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn nearest_resize_keeps_corners() {
        let img = procedural_background(0, 0, 8, 8);
        let r = resize_nearest(&img, 16, 4);
        assert_eq!(r.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(r.pixel(15, 3), img.pixel(7, 6));
    }
}
