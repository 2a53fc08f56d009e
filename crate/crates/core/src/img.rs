use std::path::Path;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense H x W x C image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, ImageError> {
        if data.len() != width * height * channels {
            return Err(ImageError::Shape(format!("{} values for {width}x{height}x{channels}", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, o: &Self) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn check_same_shape(&self, o: &Self) -> Result<(), ImageError> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(ImageError::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )))
        }
    }

    /// Copies of channels `start..start + count`.
    pub fn channel_range(&self, start: usize, count: usize) -> Self {
        let mut out = Self::zeros(self.width, self.height, count);
        for (dst, src) in out.data.chunks_exact_mut(count).zip(self.data.chunks_exact(self.channels)) {
            dst.copy_from_slice(&src[start..start + count]);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|&v| v.cast()).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `mask ? self : other`, per pixel.
    pub fn select(&self, mask: &[bool], other: &Self) -> Result<Self, ImageError> {
        self.check_same_shape(other)?;
        if mask.len() != self.pixel_count() {
            return Err(ImageError::Shape("mask size".into()));
        }
        let c = self.channels;
        let mut out = other.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.data[i * c..(i + 1) * c].copy_from_slice(&self.data[i * c..(i + 1) * c]);
            }
        }
        Ok(out)
    }

    /// 8-bit quantisation of values in [0, 1] (clamped). 1 or 3 channels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v.to_f64_lossy())).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::from_vec(width, height, channels, bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect())
    }

    /// PNG bytes (8-bit gray or RGB).
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(ImageError::Shape(format!("cannot encode {c} channels as png"))),
        };
        encode_png_raw(&self.to_u8(), self.width as u32, self.height as u32, color)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color().channel_count() {
            1 | 2 => Self::from_u8(w, h, 1, img.to_luma8().as_raw()),
            _ => Self::from_u8(w, h, 3, img.to_rgb8().as_raw()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        Self::decode_png(&std::fs::read(path)?)
    }

    /// Nearest-neighbour tiling of images into a grid (used for previews).
    pub fn grid(tiles: &[Self], columns: usize) -> Result<Self, ImageError> {
        let first = tiles.first().ok_or_else(|| ImageError::Shape("empty grid".into()))?;
        for t in tiles {
            first.check_same_shape(t)?;
        }
        let rows = tiles.len().div_ceil(columns);
        let (w, h, c) = (first.width, first.height, first.channels);
        let mut out = Self::zeros(w * columns, h * rows, c);
        for (k, t) in tiles.iter().enumerate() {
            let (ox, oy) = ((k % columns) * w, (k / columns) * h);
            for y in 0..h {
                for x in 0..w {
                    out.pixel_mut(ox + x, oy + y).copy_from_slice(t.pixel(x, y));
                }
            }
        }
        Ok(out)
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn encode_png_raw(raw: &[u8], w: u32, h: u32, color: image::ExtendedColorType) -> Result<Vec<u8>, ImageError> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf).write_image(raw, w, h, color)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let data: Vec<f32> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        let img = Image::from_vec(4, 3, 3, data).unwrap();
        let back = Image::<f32>::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn grid_places_tiles() {
        let a = Image::<f32>::filled(2, 2, 1, 0.25);
        let b = Image::<f32>::filled(2, 2, 1, 0.75);
        let g = Image::grid(&[a, b.clone(), b], 2).unwrap();
        assert_eq!((g.width, g.height), (4, 4));
        assert_eq!(g.pixel(3, 0)[0], 0.75);
        assert_eq!(g.pixel(0, 3)[0], 0.75);
        assert_eq!(g.pixel(3, 3)[0], 0.0);
    }

    #[test]
    fn select_uses_mask() {
        let a = Image::<f64>::filled(2, 1, 1, 1.0);
        let b = Image::<f64>::filled(2, 1, 1, 0.0);
        assert_eq!(a.select(&[true, false], &b).unwrap().data, vec![1.0, 0.0]);
    }
}
