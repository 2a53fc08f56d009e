//! Feature-space image distances used as the perceptual loss and as the
//! LPIPS stand-in, plus the face-embedding hook.

use egorender_core::img::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, Conv2d};
use crate::tensor::Tensor;
use crate::NnError;

/// Layer-wise feature extractor `p^j` with a vector-Jacobian product.
pub trait FeatureExtractor {
    fn name(&self) -> &str;

    /// Activations of every compared layer.
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError>;

    /// Gradient w.r.t. `x` given gradients w.r.t. each layer's activations.
    fn features_vjp(&self, x: &Tensor, grads: &[Tensor]) -> Result<Tensor, NnError>;
}

/// `sum_j mean |p^j(a) - p^j(b)|` and its gradient w.r.t. `a`.
pub fn perceptual_loss_grad(ex: &dyn FeatureExtractor, a: &Tensor, b: &Tensor) -> Result<(f64, Tensor), NnError> {
    if !a.same_shape(b) {
        return Err(NnError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let fa = ex.features(a)?;
    let fb = ex.features(b)?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(fa.len());
    for (x, y) in fa.iter().zip(&fb) {
        let n = x.data.len() as f64;
        let mut g = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut s = 0.0;
        for ((gv, &xv), &yv) in g.data.iter_mut().zip(&x.data).zip(&y.data) {
            let d = xv - yv;
            s += d.abs() as f64;
            *gv = if d > 0.0 {
                (1.0 / n) as f32
            } else if d < 0.0 {
                (-1.0 / n) as f32
            } else {
                0.0
            };
        }
        total += s / n;
        grads.push(g);
    }
    Ok((total, ex.features_vjp(a, &grads)?))
}

pub fn perceptual_loss(ex: &dyn FeatureExtractor, a: &Tensor, b: &Tensor) -> Result<f64, NnError> {
    if !a.same_shape(b) {
        return Err(NnError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let fa = ex.features(a)?;
    let fb = ex.features(b)?;
    Ok(fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| {
            x.data.iter().zip(&y.data).map(|(&p, &q)| (p - q).abs() as f64).sum::<f64>() / x.data.len() as f64
        })
        .sum())
}

/// Fixed random ReLU conv pyramid. Deterministic in its seed.
#[derive(Debug, Clone)]
pub struct RandomPyramid {
    pub layers: Vec<Conv2d>,
}

pub const PYRAMID_SEED: u64 = 0x5eed_0f_f3a7;

impl RandomPyramid {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = [(3, 16, 1), (16, 32, 2), (32, 32, 2), (32, 64, 2), (64, 64, 2)];
        Self { layers: spec.iter().map(|&(i, o, s)| Conv2d::new(i, o, 3, s, false, &mut rng)).collect() }
    }
}

impl Default for RandomPyramid {
    fn default() -> Self {
        Self::new(PYRAMID_SEED)
    }
}

impl FeatureExtractor for RandomPyramid {
    fn name(&self) -> &str {
        "random-pyramid"
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut out: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mut h = l.forward(out.last().unwrap_or(x))?;
            ops::relu(&mut h);
            out.push(h);
        }
        Ok(out)
    }

    fn features_vjp(&self, x: &Tensor, grads: &[Tensor]) -> Result<Tensor, NnError> {
        let feats = self.features(x)?;
        let mut g: Option<Tensor> = None;
        for j in (0..self.layers.len()).rev() {
            let mut d = grads[j].clone();
            if let Some(up) = g.take() {
                d.add_assign(&up);
            }
            ops::relu_backward(&feats[j], &mut d);
            let input = if j == 0 { x } else { &feats[j - 1] };
            g = Some(self.layers[j].input_grad(input, &d));
        }
        Ok(g.expect("at least one layer"))
    }
}

/// Single identity layer: the distance reduces to mean absolute difference.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        Ok(vec![x.clone()])
    }

    fn features_vjp(&self, _x: &Tensor, grads: &[Tensor]) -> Result<Tensor, NnError> {
        Ok(grads[0].clone())
    }
}

/// Embedding network for face crops.
pub trait FaceEmbedder {
    fn embed(&self, crop: &Image<f32>) -> Vec<f32>;

    /// Gradient w.r.t. the crop pixels given the embedding gradient.
    fn embed_vjp(&self, crop: &Image<f32>, grad: &[f32]) -> Image<f32>;
}

/// Raw pixels as the embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEmbedder;

impl FaceEmbedder for IdentityEmbedder {
    fn embed(&self, crop: &Image<f32>) -> Vec<f32> {
        crop.data.clone()
    }

    fn embed_vjp(&self, crop: &Image<f32>, grad: &[f32]) -> Image<f32> {
        Image { width: crop.width, height: crop.height, channels: crop.channels, data: grad.to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], (0..n).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identical_images_are_at_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random([1, 3, 32, 32], &mut rng);
        assert_eq!(perceptual_loss(&RandomPyramid::default(), &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random([1, 3, 32, 32], &mut rng);
        let b = random([1, 3, 32, 32], &mut rng);
        let p = RandomPyramid::default();
        assert_eq!(perceptual_loss(&p, &a, &b).unwrap(), perceptual_loss(&p, &b, &a).unwrap());
        assert!(perceptual_loss(&p, &a, &b).unwrap() > 0.0);
    }

    #[test]
    fn identity_extractor_is_mean_absolute_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random([2, 3, 4, 4], &mut rng);
        let b = random([2, 3, 4, 4], &mut rng);
        let l1 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data.len() as f64;
        let (v, _) = perceptual_loss_grad(&IdentityExtractor, &a, &b).unwrap();
        assert!((v - l1).abs() < 1e-12);
    }

    #[test]
    fn pyramid_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random([1, 3, 16, 16], &mut rng);
        let b = random([1, 3, 16, 16], &mut rng);
        let p = RandomPyramid::default();
        let (_, g) = perceptual_loss_grad(&p, &a, &b).unwrap();
        let h = 1e-3;
        let mut agree = 0;
        let probes = [0usize, 50, 200, 333, 500, 700];
        for &i in &probes {
            let (mut x, mut y) = (a.clone(), a.clone());
            x.data[i] += h;
            y.data[i] -= h;
            let fd = (perceptual_loss(&p, &x, &b).unwrap() - perceptual_loss(&p, &y, &b).unwrap()) / (2.0 * h as f64);
            if (fd - g.data[i] as f64).abs() < 0.05 * fd.abs().max(1e-3) {
                agree += 1;
            }
        }
        // |.| and ReLU kinks may sit inside the probe interval.
        assert!(agree >= probes.len() - 1, "{agree}");
    }

    #[test]
    fn pyramid_is_seed_deterministic() {
        let a = RandomPyramid::new(9);
        let b = RandomPyramid::new(9);
        assert_eq!(a.layers[4].weight.value, b.layers[4].weight.value);
    }
}
