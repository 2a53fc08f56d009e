use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Trainable array with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    /// He-normal initialisation for a layer with `fan_in` inputs.
    pub fn he_normal<R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        Self::new((0..n).map(|_| dist.sample(rng) as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Number of completed steps; bias corrections use `t` after `begin_step`.
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0 }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies one update from the accumulated gradient and clears it.
    pub fn update(&self, p: &mut Param) {
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - (self.beta1 as f64).powi(t);
        let c2 = 1.0 - (self.beta2 as f64).powi(t);
        let step = (self.lr as f64 * c2.sqrt() / c1) as f32;
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (1.0 - b1) * g;
            p.v[i] = b2 * p.v[i] + (1.0 - b2) * g * g;
            p.value[i] -= step * p.m[i] / (p.v[i].sqrt() + self.eps);
            p.grad[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Param::new(vec![1.0, -1.0]);
        p.grad = vec![3.0, -0.5];
        let mut opt = Adam::new(0.1, 0.5, 0.999);
        opt.begin_step();
        opt.update(&mut p);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 0.9).abs() < 1e-6);
        assert_eq!(p.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut p = Param::new(vec![5.0]);
        let mut opt = Adam::new(0.05, 0.5, 0.999);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 2.0);
            opt.begin_step();
            opt.update(&mut p);
        }
        assert!((p.value[0] - 2.0).abs() < 1e-2);
    }
}
