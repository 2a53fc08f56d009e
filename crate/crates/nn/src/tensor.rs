use egorender_core::img::Image;

use crate::NnError;

/// Batch of feature maps, NCHW, `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, v: f32) -> Self {
        Self { n, c, h, w, data: vec![v; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self, NnError> {
        if data.len() != n * c * h * w {
            return Err(NnError::Shape(format!("{} values for {n}x{c}x{h}x{w}", data.len())));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        self.shape() == o.shape()
    }

    pub fn check_shape(&self, shape: [usize; 4], what: &str) -> Result<(), NnError> {
        if self.shape() != shape {
            return Err(NnError::Shape(format!("{what}: expected {shape:?}, got {:?}", self.shape())));
        }
        Ok(())
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert!(self.same_shape(o));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    /// Stack single samples along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, NnError> {
        let first = items.first().ok_or_else(|| NnError::Shape("empty batch".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        let mut n = 0;
        for t in items {
            if [t.c, t.h, t.w] != [first.c, first.h, first.w] {
                return Err(NnError::Shape(format!("cannot stack {:?} with {:?}", t.shape(), first.shape())));
            }
            data.extend_from_slice(&t.data);
            n += t.n;
        }
        Ok(Tensor { n, c: first.c, h: first.h, w: first.w, data })
    }

    pub fn slice_batch(&self, i: usize) -> Tensor {
        Tensor { n: 1, c: self.c, h: self.h, w: self.w, data: self.sample(i).to_vec() }
    }

    /// HWC image to a 1xCxHxW tensor.
    pub fn from_image(img: &Image<f32>) -> Tensor {
        let (w, h, c) = (img.width, img.height, img.channels);
        let mut t = Tensor::zeros(1, c, h, w);
        for (p, px) in img.data.chunks_exact(c).enumerate() {
            for (k, &v) in px.iter().enumerate() {
                t.data[k * h * w + p] = v;
            }
        }
        t
    }

    pub fn to_image(&self, i: usize) -> Image<f32> {
        let (w, h, c) = (self.w, self.h, self.c);
        let s = self.sample(i);
        let mut data = vec![0.0; w * h * c];
        for k in 0..c {
            for p in 0..w * h {
                data[p * c + k] = s[k * h * w + p];
            }
        }
        Image { width: w, height: h, channels: c, data }
    }
}
