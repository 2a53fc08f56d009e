use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{visit_child, BlockTape, ConvBlock, Module};
use crate::ops::{self, Conv2d};
use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    /// Feature channels plus 3 image channels.
    pub in_channels: usize,
    pub scales: usize,
    pub seed: u64,
}

impl DiscConfig {
    pub fn new(feature_channels: usize, seed: u64) -> Self {
        Self { in_channels: feature_channels + 3, scales: 3, seed }
    }
}

/// Patch discriminator: three stride-2 blocks and a 1-channel logit conv.
#[derive(Debug, Clone)]
pub struct PatchDisc {
    pub blocks: Vec<ConvBlock>,
    pub head: Conv2d,
}

struct PatchTape {
    blocks: Vec<BlockTape>,
    last: Tensor,
}

impl PatchDisc {
    fn new(in_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = vec![
            ConvBlock::plain(in_c, 32, 2, rng),
            ConvBlock::new(32, 64, 2, rng),
            ConvBlock::new(64, 128, 2, rng),
        ];
        Self { blocks, head: Conv2d::new(128, 1, 3, 1, true, rng) }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        self.head.forward(&h)
    }

    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, PatchTape), NnError> {
        let mut h = x.clone();
        let mut tapes = Vec::new();
        for b in &self.blocks {
            let (o, t) = b.forward_train(&h)?;
            tapes.push(t);
            h = o;
        }
        Ok((self.head.forward(&h)?, PatchTape { blocks: tapes, last: h }))
    }

    fn backward(&mut self, tape: &PatchTape, dy: &Tensor, weights: bool) -> Tensor {
        let mut g = self.head.backward(&tape.last, dy, weights, true).expect("input grad");
        for i in (0..self.blocks.len()).rev() {
            g = self.blocks[i].backward(&tape.blocks[i], g, weights, true).expect("input grad");
        }
        g
    }
}

impl Module for PatchDisc {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_child(&format!("b{i}"), b, f);
        }
        visit_child("head", &mut self.head, f);
    }
}

/// Conditional discriminator over `concat(feature, image)` at scales
/// 1, 1/2, 1/4.
#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator {
    pub config: DiscConfig,
    pub scales: Vec<PatchDisc>,
}

pub struct DiscTape {
    /// Pre-pooling size at each scale.
    sizes: Vec<(usize, usize)>,
    patches: Vec<PatchTape>,
    feature_channels: usize,
}

impl MultiScaleDiscriminator {
    pub fn new(config: DiscConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scales = (0..config.scales).map(|_| PatchDisc::new(config.in_channels, &mut rng)).collect();
        Self { config, scales }
    }

    fn input(&self, feat: &Tensor, image: &Tensor) -> Result<Tensor, NnError> {
        if image.c != 3 || feat.c + 3 != self.config.in_channels {
            return Err(NnError::Shape(format!(
                "discriminator takes {} feature channels plus RGB, got {} + {}",
                self.config.in_channels - 3,
                feat.c,
                image.c
            )));
        }
        ops::concat(feat, image)
    }

    pub fn forward(&self, feat: &Tensor, image: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut x = self.input(feat, image)?;
        let mut out = Vec::new();
        for (k, d) in self.scales.iter().enumerate() {
            if k > 0 {
                x = ops::avg_pool2(&x);
            }
            out.push(d.forward(&x)?);
        }
        Ok(out)
    }

    pub fn forward_train(&self, feat: &Tensor, image: &Tensor) -> Result<(Vec<Tensor>, DiscTape), NnError> {
        let mut x = self.input(feat, image)?;
        let mut out = Vec::new();
        let mut tape = DiscTape { sizes: Vec::new(), patches: Vec::new(), feature_channels: feat.c };
        for (k, d) in self.scales.iter().enumerate() {
            tape.sizes.push((x.h, x.w));
            if k > 0 {
                x = ops::avg_pool2(&x);
            }
            let (o, t) = d.forward_train(&x)?;
            out.push(o);
            tape.patches.push(t);
        }
        Ok((out, tape))
    }

    /// Gradients w.r.t. the feature and image inputs; weight gradients are
    /// accumulated only when `weights` is set.
    pub fn backward(&mut self, tape: &DiscTape, dys: &[Tensor], weights: bool) -> (Tensor, Tensor) {
        let mut carry: Option<Tensor> = None;
        for k in (0..self.scales.len()).rev() {
            let mut g = self.scales[k].backward(&tape.patches[k], &dys[k], weights);
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            carry = Some(if k > 0 {
                let (h, w) = tape.sizes[k];
                ops::avg_pool2_backward(&g, h, w)
            } else {
                g
            });
        }
        ops::split(&carry.expect("at least one scale"), tape.feature_channels)
    }
}

impl Module for MultiScaleDiscriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, d) in self.scales.iter_mut().enumerate() {
            visit_child(&format!("scale{i}"), d, f);
        }
    }
}
