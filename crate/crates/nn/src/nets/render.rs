use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{visit_child, Module, UNet, UNetTape};
use crate::ops::{self, Conv2d};
use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderNetConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl RenderNetConfig {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        Self { in_channels, widths: vec![64, 96, 128, 128], seed }
    }
}

/// Feature image to RGB generator; output in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RenderNet {
    pub config: RenderNetConfig,
    pub body: UNet,
    pub out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct RenderTape {
    body: UNetTape,
    feat: Tensor,
    /// tanh output
    t: Tensor,
}

impl RenderNet {
    pub fn new(config: RenderNetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let top = *config.widths.last().expect("non-empty widths");
        let body = UNet::new(config.in_channels, &config.widths, &[top], &mut rng);
        let out = Conv2d::new(config.widths[0], 3, 3, 1, true, &mut rng);
        Self { config, body, out }
    }

    fn check(&self, x: &Tensor) -> Result<(), NnError> {
        if x.c != self.config.in_channels {
            return Err(NnError::Shape(format!(
                "RenderNet takes {} feature channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        Ok(())
    }

    fn finish(t: &Tensor) -> Tensor {
        let mut y = t.clone();
        y.data.iter_mut().for_each(|v| *v = 0.5 * (*v + 1.0));
        y
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check(x)?;
        let mut t = self.out.forward(&self.body.forward(x)?)?;
        ops::tanh(&mut t);
        Ok(Self::finish(&t))
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, RenderTape), NnError> {
        self.check(x)?;
        let (feat, body) = self.body.forward_train(x)?;
        let mut t = self.out.forward(&feat)?;
        ops::tanh(&mut t);
        let y = Self::finish(&t);
        Ok((y, RenderTape { body, feat, t }))
    }

    /// Accumulates parameter gradients; returns the feature-image gradient
    /// when `input` is set.
    pub fn backward(&mut self, tape: &RenderTape, dy: &Tensor, input: bool) -> Option<Tensor> {
        let mut dt = dy.clone();
        dt.scale(0.5);
        ops::tanh_backward(&tape.t, &mut dt);
        let df = self.out.backward(&tape.feat, &dt, true, true).expect("input grad");
        self.body.backward(&tape.body, df, input)
    }
}

impl Module for RenderNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child("body", &mut self.body, f);
        visit_child("out", &mut self.out, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(c: usize) -> RenderNet {
        RenderNet::new(RenderNetConfig { in_channels: c, widths: vec![4, 6], seed: 3 })
    }

    #[test]
    fn output_is_rgb_in_unit_range_and_deterministic() {
        let net = tiny(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(2, 6, 4, 4, (0..192).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 3, 4, 4]);
        assert!(y.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y, net.forward(&x).unwrap());
        assert!(net.forward(&Tensor::zeros(1, 5, 4, 4)).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut net = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(1, 2, 4, 4, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let dy = Tensor::from_vec(1, 3, 4, 4, (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (_, tape) = net.forward_train(&x).unwrap();
        let dx = net.backward(&tape, &dy, true).unwrap();
        let f = |x: &Tensor| -> f64 {
            net.forward(x).unwrap().data.iter().zip(&dy.data).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let h = 1e-2;
        for i in [0usize, 5, 17, 31] {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 2e-2 * fd.abs().max(0.1), "{i}: {fd} vs {}", dx.data[i]);
        }
    }
}
