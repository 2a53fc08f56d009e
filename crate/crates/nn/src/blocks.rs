use rand::Rng;

use crate::ops::{self, Conv2d};
use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

/// Anything owning named parameters.
pub trait Module {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }
}

impl Module for Conv2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, p) in self.params_mut() {
            f(name, p);
        }
    }
}

pub(crate) fn visit_child(prefix: &str, m: &mut dyn Module, f: &mut dyn FnMut(&str, &mut Param)) {
    m.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

/// 3x3 conv, optional instance norm, leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: bool,
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    x: Tensor,
    /// Activation input (normalised when `norm`).
    y: Tensor,
    inv_std: Vec<f32>,
}

impl ConvBlock {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        Self { conv: Conv2d::new(in_c, out_c, 3, stride, false, rng), norm: true }
    }

    /// Conv with bias and no normalisation.
    pub fn plain<R: Rng>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        Self { conv: Conv2d::new(in_c, out_c, 3, stride, true, rng), norm: false }
    }

    fn pre(&self, x: &Tensor) -> Result<(Tensor, Vec<f32>), NnError> {
        let mut y = self.conv.forward(x)?;
        let inv = if self.norm { ops::instance_norm(&mut y) } else { Vec::new() };
        Ok((y, inv))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (mut y, _) = self.pre(x)?;
        ops::leaky_relu(&mut y);
        Ok(y)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BlockTape), NnError> {
        let (y, inv_std) = self.pre(x)?;
        let mut z = y.clone();
        ops::leaky_relu(&mut z);
        Ok((z, BlockTape { x: x.clone(), y, inv_std }))
    }

    pub fn backward(&mut self, tape: &BlockTape, mut dz: Tensor, weights: bool, input: bool) -> Option<Tensor> {
        ops::leaky_relu_backward(&tape.y, &mut dz);
        if self.norm {
            ops::instance_norm_backward(&tape.y, &tape.inv_std, &mut dz);
        }
        self.conv.backward(&tape.x, &dz, weights, input)
    }
}

impl Module for ConvBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child("conv", &mut self.conv, f);
    }
}

/// Encoder-decoder with skip connections. Level 0 runs at full resolution,
/// each further level halves it; decoders concatenate the upsampled coarser
/// features with the encoder output of their level.
#[derive(Debug, Clone)]
pub struct UNet {
    pub widths: Vec<usize>,
    pub enc: Vec<ConvBlock>,
    pub mid: Vec<ConvBlock>,
    /// `dec[i]` produces level `i`; there is none for the coarsest level.
    pub dec: Vec<ConvBlock>,
}

#[derive(Debug, Clone)]
pub struct UNetTape {
    enc: Vec<BlockTape>,
    mid: Vec<BlockTape>,
    dec: Vec<BlockTape>,
}

impl UNet {
    pub fn new<R: Rng>(in_c: usize, widths: &[usize], mid: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "a UNet needs at least two levels");
        let mut enc = Vec::new();
        let mut c = in_c;
        for (i, &w) in widths.iter().enumerate() {
            enc.push(ConvBlock::new(c, w, if i == 0 { 1 } else { 2 }, rng));
            c = w;
        }
        let mut mids = Vec::new();
        for &w in mid {
            mids.push(ConvBlock::new(c, w, 1, rng));
            c = w;
        }
        let mut dec: Vec<ConvBlock> = Vec::new();
        for i in (0..widths.len() - 1).rev() {
            dec.push(ConvBlock::new(c + widths[i], widths[i], 1, rng));
            c = widths[i];
        }
        dec.reverse();
        Self { widths: widths.to_vec(), enc, mid: mids, dec }
    }

    pub fn in_channels(&self) -> usize {
        self.enc[0].conv.in_c
    }

    pub fn out_channels(&self) -> usize {
        self.widths[0]
    }

    fn check(&self, x: &Tensor) -> Result<(), NnError> {
        let q = 1 << (self.widths.len() - 1);
        if x.h % q != 0 || x.w % q != 0 {
            return Err(NnError::Shape(format!("spatial size {}x{} not divisible by {q}", x.w, x.h)));
        }
        if x.c != self.in_channels() {
            return Err(NnError::Shape(format!("expected {} input channels, got {}", self.in_channels(), x.c)));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check(x)?;
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for b in &self.enc {
            h = b.forward(&h)?;
            skips.push(h.clone());
        }
        for b in &self.mid {
            h = b.forward(&h)?;
        }
        for i in (0..self.dec.len()).rev() {
            h = self.dec[i].forward(&ops::concat(&ops::upsample2(&h), &skips[i])?)?;
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, UNetTape), NnError> {
        self.check(x)?;
        let mut tape = UNetTape { enc: Vec::new(), mid: Vec::new(), dec: Vec::new() };
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for b in &self.enc {
            let (o, t) = b.forward_train(&h)?;
            tape.enc.push(t);
            skips.push(o.clone());
            h = o;
        }
        for b in &self.mid {
            let (o, t) = b.forward_train(&h)?;
            tape.mid.push(t);
            h = o;
        }
        let mut dec_tapes = Vec::new();
        for i in (0..self.dec.len()).rev() {
            let (o, t) = self.dec[i].forward_train(&ops::concat(&ops::upsample2(&h), &skips[i])?)?;
            dec_tapes.push(t);
            h = o;
        }
        dec_tapes.reverse();
        tape.dec = dec_tapes;
        Ok((h, tape))
    }

    /// Backpropagates `dy` (gradient of the level-0 output).
    pub fn backward(&mut self, tape: &UNetTape, dy: Tensor, input: bool) -> Option<Tensor> {
        let levels = self.enc.len();
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; levels];
        let mut g = dy;
        for i in 0..self.dec.len() {
            let d = self.dec[i].backward(&tape.dec[i], g, true, true).expect("input grad requested");
            let coarse_c = d.c - self.widths[i];
            let (d_up, d_skip) = ops::split(&d, coarse_c);
            skip_grads[i] = Some(d_skip);
            g = ops::upsample2_backward(&d_up);
        }
        for i in (0..self.mid.len()).rev() {
            g = self.mid[i].backward(&tape.mid[i], g, true, true).expect("input grad requested");
        }
        for i in (0..levels).rev() {
            if let Some(s) = &skip_grads[i] {
                g.add_assign(s);
            }
            let want = i > 0 || input;
            match self.enc[i].backward(&tape.enc[i], g, true, want) {
                Some(d) => g = d,
                None => return None,
            }
        }
        Some(g)
    }
}

impl Module for UNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            visit_child(&format!("enc{i}"), b, f);
        }
        for (i, b) in self.mid.iter_mut().enumerate() {
            visit_child(&format!("mid{i}"), b, f);
        }
        for (i, b) in self.dec.iter_mut().enumerate() {
            visit_child(&format!("dec{i}"), b, f);
        }
    }
}
