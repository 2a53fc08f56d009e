use egorender_core::textures::TextureStack;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{visit_child, Module, UNet, UNetTape};
use crate::ops::Conv2d;
use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

pub const FEATURE_CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNetConfig {
    pub widths: Vec<usize>,
    pub mid: Vec<usize>,
    pub out_channels: usize,
    pub seed: u64,
}

impl FeatureNetConfig {
    pub fn new(seed: u64) -> Self {
        Self { widths: vec![16, 32, 64], mid: vec![128, 64], out_channels: FEATURE_CHANNELS, seed }
    }
}

/// Per-frame texture-space encoder: partial RGB texture in, feature stack out.
/// Each chart is one batch item.
#[derive(Debug, Clone)]
pub struct FrameFeatureNet {
    pub config: FeatureNetConfig,
    pub body: UNet,
    pub out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct FeatureTape {
    body: UNetTape,
    feat: Tensor,
}

impl FrameFeatureNet {
    pub fn new(config: FeatureNetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let body = UNet::new(3, &config.widths, &config.mid, &mut rng);
        let out = Conv2d::new(config.widths[0], config.out_channels, 1, 1, true, &mut rng);
        Self { config, body, out }
    }

    pub fn forward(&self, te: &TextureStack<f32>) -> Result<TextureStack<f32>, NnError> {
        let x = texture_to_tensor(te)?;
        let y = self.out.forward(&self.body.forward(&x)?)?;
        tensor_to_texture(&y, te)
    }

    pub fn forward_train(&self, te: &TextureStack<f32>) -> Result<(TextureStack<f32>, FeatureTape), NnError> {
        let x = texture_to_tensor(te)?;
        let (feat, body) = self.body.forward_train(&x)?;
        let y = self.out.forward(&feat)?;
        Ok((tensor_to_texture(&y, te)?, FeatureTape { body, feat }))
    }

    /// Accumulates parameter gradients from the gradient of the output stack.
    pub fn backward(&mut self, tape: &FeatureTape, grad: &TextureStack<f32>) -> Result<(), NnError> {
        let dy = texture_to_tensor(grad)?;
        let df = self.out.backward(&tape.feat, &dy, true, true).expect("input grad");
        self.body.backward(&tape.body, df, false);
        Ok(())
    }
}

impl Module for FrameFeatureNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child("body", &mut self.body, f);
        visit_child("out", &mut self.out, f);
    }
}

/// Charts as a `P x C x S x S` batch.
pub fn texture_to_tensor(t: &TextureStack<f32>) -> Result<Tensor, NnError> {
    let (p, c, s) = (t.layout.part_count as usize, t.channels, t.layout.chart_size);
    let mut out = Tensor::zeros(p, c, s, s);
    let per = s * s;
    for (i, texel) in t.data.chunks_exact(c).enumerate() {
        let (chart, pix) = (i / per, i % per);
        for (k, &v) in texel.iter().enumerate() {
            out.data[(chart * c + k) * per + pix] = v;
        }
    }
    Ok(out)
}

/// Inverse of [`texture_to_tensor`] using the atlas layout of `like`.
pub fn tensor_to_texture(x: &Tensor, like: &TextureStack<f32>) -> Result<TextureStack<f32>, NnError> {
    let l = like.layout;
    if x.n != l.part_count as usize || x.h != l.chart_size || x.w != l.chart_size {
        return Err(NnError::Shape(format!("tensor {:?} does not match the atlas", x.shape())));
    }
    let (c, per) = (x.c, x.h * x.w);
    let mut out = TextureStack::zeros(l, c);
    for chart in 0..x.n {
        for k in 0..c {
            for pix in 0..per {
                out.data[(chart * per + pix) * c + k] = x.data[(chart * c + k) * per + pix];
            }
        }
    }
    Ok(out)
}
