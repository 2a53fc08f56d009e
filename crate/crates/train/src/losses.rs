use egorender_core::img::Image;
use egorender_nn::nets::MultiScaleDiscriminator;
use egorender_nn::perceptual::FaceEmbedder;
use egorender_nn::Tensor;

use crate::config::TrainConfig;
use crate::TrainError;

pub use egorender_nn::perceptual::{perceptual_loss, perceptual_loss_grad};

/// `mean (x - target)^2` over every logit map, averaged over scales, and
/// its gradient.
fn ls_term(maps: &[Tensor], target: f32) -> (f64, Vec<Tensor>) {
    let k = maps.len() as f64;
    let mut total = 0.0;
    let grads = maps
        .iter()
        .map(|m| {
            let n = m.data.len() as f64;
            let mut g = Tensor::zeros(m.n, m.c, m.h, m.w);
            let mut s = 0.0;
            for (gv, &x) in g.data.iter_mut().zip(&m.data) {
                let d = x - target;
                s += (d * d) as f64;
                *gv = (2.0 * d as f64 / (n * k)) as f32;
            }
            total += s / n / k;
            g
        })
        .collect();
    (total, grads)
}

/// Least-squares discriminator objective `0.5 (E(D(real) - 1)^2 + E D(fake)^2)`.
pub fn lsgan_d_loss(real: &[Tensor], fake: &[Tensor]) -> (f64, Vec<Tensor>, Vec<Tensor>) {
    let (lr, mut gr) = ls_term(real, 1.0);
    let (lf, mut gf) = ls_term(fake, 0.0);
    gr.iter_mut().chain(gf.iter_mut()).for_each(|g| g.scale(0.5));
    (0.5 * (lr + lf), gr, gf)
}

/// Generator objective `E (D(fake) - 1)^2`.
pub fn lsgan_g_loss(fake: &[Tensor]) -> (f64, Vec<Tensor>) {
    ls_term(fake, 1.0)
}

/// `(L_D, L_adv)` for one batch, with `D` conditioned on `feat`.
pub fn adversarial_step_losses(
    d: &MultiScaleDiscriminator,
    feat: &Tensor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, f64), TrainError> {
    let r = d.forward(feat, real)?;
    let f = d.forward(feat, fake)?;
    Ok((lsgan_d_loss(&r, &f).0, lsgan_g_loss(&f).0))
}

/// Pixel square `[x0, x1) x [y0, y1)` of half-side `radius` around `centre`,
/// clipped to the image. `None` when empty.
pub fn face_crop_rect(centre: [f64; 2], radius: f64, width: usize, height: usize) -> Option<[usize; 4]> {
    let clip = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
    let (x0, x1) = (clip(centre[0] - radius, width), clip(centre[0] + radius, width));
    let (y0, y1) = (clip(centre[1] - radius, height), clip(centre[1] + radius, height));
    (x1 > x0 && y1 > y0 && centre.iter().all(|v| v.is_finite())).then_some([x0, y0, x1, y1])
}

fn crop(img: &Image<f32>, r: [usize; 4]) -> Image<f32> {
    let [x0, y0, x1, y1] = r;
    let mut out = Image::zeros(x1 - x0, y1 - y0, img.channels);
    for y in y0..y1 {
        for x in x0..x1 {
            out.pixel_mut(x - x0, y - y0).copy_from_slice(img.pixel(x, y));
        }
    }
    out
}

/// Mean absolute difference between face embeddings of the crops around
/// the head pixel, and its gradient w.r.t. `gen`. Zero when disabled, the
/// head is not visible or the crop is empty.
pub fn face_identity_loss(
    embedder: Option<&dyn FaceEmbedder>,
    gen: &Image<f32>,
    gt: &Image<f32>,
    head: Option<[f64; 2]>,
    radius: f64,
) -> (f64, Option<Image<f32>>) {
    let (Some(emb), Some(head)) = (embedder, head) else {
        return (0.0, None);
    };
    let Some(rect) = face_crop_rect(head, radius, gen.width, gen.height) else {
        log::warn!("face crop around {head:?} is empty; face loss skipped");
        return (0.0, None);
    };
    let (cg, ct) = (crop(gen, rect), crop(gt, rect));
    let (eg, et) = (emb.embed(&cg), emb.embed(&ct));
    let n = eg.len().max(1) as f64;
    let loss = eg.iter().zip(&et).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n;
    let de: Vec<f32> = eg
        .iter()
        .zip(&et)
        .map(|(a, b)| match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => (1.0 / n) as f32,
            Some(std::cmp::Ordering::Less) => (-1.0 / n) as f32,
            _ => 0.0,
        })
        .collect();
    let dcrop = emb.embed_vjp(&cg, &de);
    let mut grad = Image::zeros(gen.width, gen.height, gen.channels);
    let [x0, y0, x1, y1] = rect;
    for y in y0..y1 {
        for x in x0..x1 {
            grad.pixel_mut(x, y).copy_from_slice(dcrop.pixel(x - x0, y - y0));
        }
    }
    (loss, Some(grad))
}

/// Logged generator loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub perceptual: f64,
    pub face: f64,
    pub adv: f64,
}

/// `lambda_p L_p + lambda_face L_face + lambda_gan L_adv`.
pub fn total_generator_loss(cfg: &TrainConfig, parts: &LossParts) -> f64 {
    cfg.lambda_p * parts.perceptual + cfg.lambda_face * parts.face + cfg.lambda_gan * parts.adv
}

#[cfg(test)]
mod tests {
    use super::*;
    use egorender_nn::nets::DiscConfig;
    use egorender_nn::perceptual::IdentityEmbedder;

    fn maps(v: f32) -> Vec<Tensor> {
        vec![Tensor::filled(2, 1, 8, 8, v), Tensor::filled(2, 1, 4, 4, v), Tensor::filled(2, 1, 2, 2, v)]
    }

    #[test]
    fn lsgan_closed_forms() {
        let (ld, _, _) = lsgan_d_loss(&maps(0.0), &maps(0.0));
        let (ladv, _) = lsgan_g_loss(&maps(0.0));
        assert_eq!((ld, ladv), (0.5, 1.0));
        assert_eq!(lsgan_d_loss(&maps(1.0), &maps(0.0)).0, 0.0);
    }

    #[test]
    fn lsgan_gradient_matches_finite_differences() {
        let mut f = maps(0.3);
        f[1].data[3] = -0.7;
        let (_, g) = lsgan_g_loss(&f);
        let h = 1e-3f32;
        let mut p = f.clone();
        p[1].data[3] += h;
        let mut m = f.clone();
        m[1].data[3] -= h;
        let fd = (lsgan_g_loss(&p).0 - lsgan_g_loss(&m).0) / (2.0 * h as f64);
        assert!((fd - g[1].data[3] as f64).abs() < 1e-4, "{fd} vs {}", g[1].data[3]);
    }

    #[test]
    fn zeroed_discriminator_gives_closed_form_losses() {
        let mut d = MultiScaleDiscriminator::new(DiscConfig::new(6, 0));
        // zero logit layer of every scale: all logits are 0
        use egorender_nn::Module;
        d.visit_params(&mut |name, p| {
            if name.contains("head") {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let feat = Tensor::filled(1, 6, 32, 32, 0.2);
        let img = Tensor::filled(1, 3, 32, 32, 0.7);
        let (ld, ladv) = adversarial_step_losses(&d, &feat, &img, &img).unwrap();
        assert_eq!((ld, ladv), (0.5, 1.0));
    }

    #[test]
    fn face_loss_reduces_to_crop_l1_with_identity_embedder() {
        let mut a = Image::<f32>::zeros(16, 16, 3);
        let b = Image::<f32>::filled(16, 16, 3, 0.5);
        a.pixel_mut(8, 8).copy_from_slice(&[0.5, 0.5, 0.5]);
        let (l, g) = face_identity_loss(Some(&IdentityEmbedder), &a, &b, Some([8.0, 8.0]), 2.0);
        // 4x4 crop, one pixel equal
        assert!((l - 0.5 * 15.0 / 16.0).abs() < 1e-12);
        let g = g.unwrap();
        assert_eq!(g.pixel(0, 0), &[0.0; 3]);
        assert!(g.pixel(7, 7)[0] < 0.0);
        assert_eq!(g.pixel(8, 8), &[0.0; 3]);
        assert_eq!(face_identity_loss(Some(&IdentityEmbedder), &a, &a, Some([8.0, 8.0]), 2.0).0, 0.0);
    }

    #[test]
    fn face_loss_is_zero_when_disabled_or_off_image() {
        let a = Image::<f32>::zeros(16, 16, 3);
        let b = Image::<f32>::filled(16, 16, 3, 1.0);
        assert_eq!(face_identity_loss(None, &a, &b, Some([8.0, 8.0]), 2.0).0, 0.0);
        assert_eq!(face_identity_loss(Some(&IdentityEmbedder), &a, &b, None, 2.0).0, 0.0);
        assert_eq!(face_identity_loss(Some(&IdentityEmbedder), &a, &b, Some([-50.0, 8.0]), 2.0).0, 0.0);
    }

    #[test]
    fn generator_loss_is_the_weighted_sum() {
        let cfg = TrainConfig::default();
        let parts = LossParts { perceptual: 1.0, face: 0.0, adv: 1.0 };
        assert_eq!(total_generator_loss(&cfg, &parts), 11.0);
        assert_eq!(total_generator_loss(&cfg, &LossParts::default()), 0.0);
        let doubled = TrainConfig { lambda_p: 20.0, ..cfg.clone() };
        let p = LossParts { perceptual: 0.3, face: 0.2, adv: 0.7 };
        let delta = total_generator_loss(&doubled, &p) - total_generator_loss(&cfg, &p);
        assert!((delta - 10.0 * 0.3).abs() < 1e-12);
    }
}
