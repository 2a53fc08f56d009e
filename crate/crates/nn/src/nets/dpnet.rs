use egorender_core::img::Image;
use egorender_core::raster::IuvImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{visit_child, Module, UNet, UNetTape};
use crate::ops::{self, Conv2d};
use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

/// Depth written into predicted foreground pixels; never used for z-tests.
pub const PREDICTED_DEPTH: f32 = 1.0;

/// Smooth-L1 transition point for the UV term.
pub const UV_BETA: f32 = 0.5;
pub const UV_WEIGHT: f32 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoDpConfig {
    pub parts: usize,
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl EgoDpConfig {
    pub fn new(parts: usize, image_size: usize, seed: u64) -> Self {
        Self { parts, image_size, widths: vec![32, 48, 64, 96], seed }
    }
}

/// Dense part/UV predictor for fisheye frames.
#[derive(Debug, Clone)]
pub struct EgoDPNet {
    pub config: EgoDpConfig,
    pub body: UNet,
    pub logits: Conv2d,
    pub uv: Conv2d,
}

/// Raw head outputs: `logits` has `P + 1` channels, `uv` has `2P` channels
/// in `[0, 1]` ordered `(u_1, v_1, u_2, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpOutput {
    pub logits: Tensor,
    pub uv: Tensor,
}

#[derive(Debug, Clone)]
pub struct DpTape {
    body: UNetTape,
    feat: Tensor,
    uv: Tensor,
}

impl EgoDPNet {
    pub fn new(config: EgoDpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let top = *config.widths.last().expect("non-empty widths");
        let body = UNet::new(3, &config.widths, &[top], &mut rng);
        let w0 = config.widths[0];
        let logits = Conv2d::new(w0, config.parts + 1, 1, 1, true, &mut rng);
        let uv = Conv2d::new(w0, 2 * config.parts, 1, 1, true, &mut rng);
        Self { config, body, logits, uv }
    }

    fn check(&self, x: &Tensor) -> Result<(), NnError> {
        let s = self.config.image_size;
        if x.h != s || x.w != s {
            return Err(NnError::Shape(format!("Ego-DPNet runs at {s}x{s}, got {}x{}", x.w, x.h)));
        }
        Ok(())
    }

    fn heads(&self, feat: &Tensor) -> Result<DpOutput, NnError> {
        let logits = self.logits.forward(feat)?;
        let mut uv = self.uv.forward(feat)?;
        ops::sigmoid(&mut uv);
        Ok(DpOutput { logits, uv })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DpOutput, NnError> {
        self.check(x)?;
        self.heads(&self.body.forward(x)?)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(DpOutput, DpTape), NnError> {
        self.check(x)?;
        let (feat, body) = self.body.forward_train(x)?;
        let out = self.heads(&feat)?;
        let uv = out.uv.clone();
        Ok((out, DpTape { body, feat, uv }))
    }

    pub fn backward(&mut self, tape: &DpTape, dlogits: &Tensor, duv: &Tensor) {
        let mut duv = duv.clone();
        ops::sigmoid_backward(&tape.uv, &mut duv);
        let mut df = self.logits.backward(&tape.feat, dlogits, true, true).expect("input grad");
        df.add_assign(&self.uv.backward(&tape.feat, &duv, true, true).expect("input grad"));
        self.body.backward(&tape.body, df, false);
    }
}

impl Module for EgoDPNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child("body", &mut self.body, f);
        visit_child("logits", &mut self.logits, f);
        visit_child("uv", &mut self.uv, f);
    }
}

/// Decodes head outputs of sample `i` into an IUV image: argmax part, UV of
/// that part's channel pair.
pub fn decode_iuv(out: &DpOutput, i: usize) -> IuvImage<f32> {
    let (w, h) = (out.logits.w, out.logits.h);
    let hw = w * h;
    let classes = out.logits.c;
    let lg = out.logits.sample(i);
    let uv = out.uv.sample(i);
    let mut iuv = IuvImage::background(w, h);
    for p in 0..hw {
        let mut best = 0;
        for k in 1..classes {
            if lg[k * hw + p] > lg[best * hw + p] {
                best = k;
            }
        }
        if best > 0 {
            iuv.part[p] = best as u16;
            iuv.uv[p] = [uv[2 * (best - 1) * hw + p], uv[(2 * best - 1) * hw + p]];
            iuv.depth[p] = PREDICTED_DEPTH;
        }
    }
    iuv
}

pub fn egodp_predict(net: &EgoDPNet, image: &Image<f32>) -> Result<IuvImage<f32>, NnError> {
    if image.channels != 3 {
        return Err(NnError::Shape(format!("expected an RGB image, got {} channels", image.channels)));
    }
    let out = net.forward(&Tensor::from_image(image))?;
    Ok(decode_iuv(&out, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpLoss {
    pub total: f64,
    pub ce: f64,
    /// Mean smooth-L1 per foreground coordinate, before weighting.
    pub uv: f64,
}

/// `d/dx` of smooth-L1 with transition `beta`, and its value.
fn smooth_l1(x: f32, beta: f32) -> (f32, f32) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Cross-entropy over all pixels plus `UV_WEIGHT` times smooth-L1 on the GT
/// part's UV pair over GT foreground. Returns gradients w.r.t. the logits and
/// the (post-sigmoid) UV head.
pub fn egodp_loss(out: &DpOutput, gt: &[IuvImage<f32>]) -> Result<(DpLoss, Tensor, Tensor), NnError> {
    let (n, classes, h, w) = (out.logits.n, out.logits.c, out.logits.h, out.logits.w);
    if gt.len() != n || gt.iter().any(|g| g.width != w || g.height != h) {
        return Err(NnError::Shape("ground truth does not match the prediction batch".into()));
    }
    if out.uv.shape() != [n, 2 * (classes - 1), h, w] {
        return Err(NnError::Shape("uv head shape".into()));
    }
    if let Some(p) = gt.iter().map(|g| g.max_part()).max().filter(|&p| p as usize >= classes) {
        return Err(NnError::Shape(format!("ground-truth part {p} beyond {} classes", classes - 1)));
    }
    let hw = h * w;
    let pixels = (n * hw) as f64;
    let fg: usize = gt.iter().map(|g| g.foreground_count()).sum();
    let mut dl = Tensor::zeros(n, classes, h, w);
    let mut du = Tensor::zeros(n, out.uv.c, h, w);
    let (mut ce, mut uv_sum) = (0.0f64, 0.0f64);
    let uv_scale = if fg > 0 { UV_WEIGHT / (2 * fg) as f32 } else { 0.0 };
    let mut probs = vec![0.0f32; classes];
    for (i, g) in gt.iter().enumerate() {
        let lg = out.logits.sample(i);
        let uv = out.uv.sample(i);
        let dls = dl.sample_mut(i);
        for p in 0..hw {
            let max = (0..classes).map(|k| lg[k * hw + p]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for k in 0..classes {
                probs[k] = (lg[k * hw + p] - max).exp();
                z += probs[k];
            }
            let t = g.part[p] as usize;
            ce += (z.ln() - (lg[t * hw + p] - max)) as f64;
            for k in 0..classes {
                dls[k * hw + p] = (probs[k] / z - if k == t { 1.0 } else { 0.0 }) / pixels as f32;
            }
            if t > 0 {
                let dus = du.sample_mut(i);
                for (j, target) in g.uv[p].iter().enumerate() {
                    let ch = (2 * (t - 1) + j) * hw + p;
                    let (v, d) = smooth_l1(uv[ch] - target, UV_BETA);
                    uv_sum += v as f64;
                    dus[ch] = d * uv_scale;
                }
            }
        }
    }
    let ce = ce / pixels;
    let uv = if fg > 0 { uv_sum / (2 * fg) as f64 } else { 0.0 };
    Ok((DpLoss { total: ce + UV_WEIGHT as f64 * uv, ce, uv }, dl, du))
}

/// Foreground part accuracy and mean absolute UV error (on pixels whose
/// predicted part is correct) against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DpScore {
    pub foreground: usize,
    pub part_correct: usize,
    pub uv_abs_sum: f64,
}

impl DpScore {
    pub fn add(&mut self, pred: &IuvImage<f32>, gt: &IuvImage<f32>) {
        for p in 0..gt.part.len() {
            if gt.part[p] == 0 {
                continue;
            }
            self.foreground += 1;
            if pred.part[p] == gt.part[p] {
                self.part_correct += 1;
                self.uv_abs_sum +=
                    ((pred.uv[p][0] - gt.uv[p][0]).abs() + (pred.uv[p][1] - gt.uv[p][1]).abs()) as f64 / 2.0;
            }
        }
    }

    pub fn part_accuracy(&self) -> f64 {
        self.part_correct as f64 / self.foreground.max(1) as f64
    }

    pub fn uv_error(&self) -> f64 {
        self.uv_abs_sum / self.part_correct.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny() -> EgoDPNet {
        EgoDPNet::new(EgoDpConfig { parts: 3, image_size: 8, widths: vec![4, 6], seed: 1 })
    }

    fn one_hot(gt: &IuvImage<f32>, parts: usize) -> DpOutput {
        let (w, h) = (gt.width, gt.height);
        let mut logits = Tensor::filled(1, parts + 1, h, w, -40.0);
        let mut uv = Tensor::filled(1, 2 * parts, h, w, 0.5);
        for p in 0..w * h {
            let t = gt.part[p] as usize;
            logits.data[t * w * h + p] = 40.0;
            if t > 0 {
                uv.data[2 * (t - 1) * w * h + p] = gt.uv[p][0];
                uv.data[(2 * t - 1) * w * h + p] = gt.uv[p][1];
            }
        }
        DpOutput { logits, uv }
    }

    fn random_gt(rng: &mut ChaCha8Rng, w: usize, h: usize, parts: u16) -> IuvImage<f32> {
        let mut g = IuvImage::background(w, h);
        for p in 0..w * h {
            let k = rng.gen_range(0..=parts);
            if k > 0 {
                g.part[p] = k;
                g.uv[p] = [rng.gen(), rng.gen()];
                g.depth[p] = 1.0;
            }
        }
        g
    }

    #[test]
    fn untrained_prediction_is_structurally_valid_and_deterministic() {
        let net = tiny();
        let img = Image::filled(8, 8, 3, 0.3);
        let a = egodp_predict(&net, &img).unwrap();
        assert!(a.part.iter().all(|&p| p <= 3));
        assert!(a.uv.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.is_consistent());
        assert_eq!(a, egodp_predict(&net, &img).unwrap());
        assert!(egodp_predict(&net, &Image::filled(16, 16, 3, 0.3)).is_err());
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_gt(&mut rng, 6, 5, 3);
        let (loss, _, _) = egodp_loss(&one_hot(&gt, 3), &[gt.clone()]).unwrap();
        assert!(loss.total < 1e-6, "{loss:?}");
    }

    #[test]
    fn batch_permutation_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = tiny();
        let gts: Vec<_> = (0..3).map(|_| random_gt(&mut rng, 8, 8, 3)).collect();
        let xs: Vec<_> =
            (0..3).map(|_| Tensor::from_vec(1, 3, 8, 8, (0..192).map(|_| rng.gen()).collect()).unwrap()).collect();
        let out = net.forward(&Tensor::stack(&xs).unwrap()).unwrap();
        let perm = [2, 0, 1];
        let xp: Vec<_> = perm.iter().map(|&i| xs[i].clone()).collect();
        let gp: Vec<_> = perm.iter().map(|&i| gts[i].clone()).collect();
        let outp = net.forward(&Tensor::stack(&xp).unwrap()).unwrap();
        let a = egodp_loss(&out, &gts).unwrap().0.total;
        let b = egodp_loss(&outp, &gp).unwrap().0.total;
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn frozen_uv_head_gives_the_uniform_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_gt(&mut rng, 128, 128, 3);
        let mut out = one_hot(&gt, 3);
        out.uv.data.iter_mut().for_each(|v| *v = 0.5);
        let (loss, _, _) = egodp_loss(&out, &[gt]).unwrap();
        assert!((loss.uv - 1.0 / 12.0).abs() < 2e-3, "{}", loss.uv);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_gt(&mut rng, 3, 2, 2);
        let logits = Tensor::from_vec(1, 3, 2, 3, (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let uv = Tensor::from_vec(1, 4, 2, 3, (0..24).map(|_| rng.gen()).collect()).unwrap();
        let out = DpOutput { logits, uv };
        let (_, dl, du) = egodp_loss(&out, &[gt.clone()]).unwrap();
        let h = 1e-3f32;
        for (which, grad) in [(0, &dl), (1, &du)] {
            for i in 0..grad.data.len() {
                let bump = |s: f32| {
                    let mut o = out.clone();
                    let t = if which == 0 { &mut o.logits } else { &mut o.uv };
                    t.data[i] += s;
                    egodp_loss(&o, &[gt.clone()]).unwrap().0.total
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h as f64);
                assert!((fd - grad.data[i] as f64).abs() < 2e-3, "{which}/{i}: {fd} vs {}", grad.data[i]);
            }
        }
    }

    #[test]
    fn training_reduces_the_loss_on_a_fixed_batch() {
        use crate::param::Adam;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = tiny();
        let gt = random_gt(&mut rng, 8, 8, 3);
        let mut img = Image::zeros(8, 8, 3);
        for p in 0..64 {
            img.data[p * 3 + gt.part[p] as usize % 3] = 1.0;
        }
        let x = Tensor::from_image(&img);
        let mut opt = Adam::new(1e-2, 0.5, 0.999);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let (out, tape) = net.forward_train(&x).unwrap();
            let (loss, dl, du) = egodp_loss(&out, &[gt.clone()]).unwrap();
            first.get_or_insert(loss.total);
            last = loss.total;
            net.backward(&tape, &dl, &du);
            opt.begin_step();
            net.visit_params(&mut |_, p| opt.update(p));
        }
        assert!(last < 0.5 * first.unwrap(), "{first:?} -> {last}");
    }

    #[test]
    fn score_counts_parts_and_uv() {
        let mut gt = IuvImage::<f32>::background(2, 1);
        gt.part = vec![1, 2];
        gt.uv = vec![[0.5, 0.5], [0.2, 0.2]];
        let mut pred = gt.clone();
        pred.part[1] = 1;
        pred.uv[0] = [0.6, 0.4];
        let mut s = DpScore::default();
        s.add(&pred, &gt);
        assert_eq!(s.part_accuracy(), 0.5);
        assert!((s.uv_error() - 0.1).abs() < 1e-6);
    }
}
