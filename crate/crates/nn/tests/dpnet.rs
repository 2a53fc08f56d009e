use egorender_core::img::Image;
use egorender_core::raster::IuvImage;
use egorender_nn::nets::dpnet::{egodp_loss, egodp_predict, EgoDPNet, EgoDpConfig};
use egorender_nn::{Adam, Checkpoint, Module, Tensor};

fn toy_sample() -> (Image<f32>, IuvImage<f32>) {
    let w = 16;
    let mut image = Image::<f32>::zeros(w, w, 3);
    let mut iuv = IuvImage::background(w, w);
    for y in 0..w {
        for x in 0..w {
            let k = y * w + x;
            if (4..12).contains(&x) && (2..14).contains(&y) {
                let part = if y < 8 { 1 } else { 2 };
                iuv.part[k] = part;
                iuv.uv[k] = [x as f32 / w as f32, y as f32 / w as f32];
                iuv.depth[k] = 1.0;
                image.pixel_mut(x, y).copy_from_slice(&[0.2 * part as f32, 0.5, x as f32 / w as f32]);
            } else {
                image.pixel_mut(x, y).copy_from_slice(&[0.9, 0.9, 0.9]);
            }
        }
    }
    (image, iuv)
}

#[test]
fn a_few_adam_steps_fit_one_sample() {
    let (image, gt) = toy_sample();
    let mut net = EgoDPNet::new(EgoDpConfig::new(2, 16, 1));
    let mut opt = Adam::new(2e-3, 0.9, 0.999);
    let x = Tensor::from_image(&image);
    let mut losses = Vec::new();
    for _ in 0..60 {
        let (out, tape) = net.forward_train(&x).unwrap();
        let (loss, dl, duv) = egodp_loss(&out, std::slice::from_ref(&gt)).unwrap();
        losses.push(loss.total);
        net.backward(&tape, &dl, &duv);
        opt.begin_step();
        net.visit_params(&mut |_, p| opt.update(p));
    }
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[59] < 0.5 * losses[0], "{} -> {}", losses[0], losses[59]);
    let pred = egodp_predict(&net, &image).unwrap();
    assert!(pred.mask_iou(&gt) > 0.8);
}

#[test]
fn checkpoints_restore_identical_predictions() {
    let (image, _) = toy_sample();
    let mut net = EgoDPNet::new(EgoDpConfig::new(2, 16, 4));
    let mut ck = Checkpoint::new(serde_json::json!({ "kind": "test" }), 7);
    ck.put_module("dp", &mut net);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dp.ckpt");
    ck.save(&path).unwrap();

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.header().step, 7);
    let mut other = EgoDPNet::new(EgoDpConfig::new(2, 16, 5));
    assert_ne!(egodp_predict(&other, &image).unwrap(), egodp_predict(&net, &image).unwrap());
    loaded.load_module("dp", &mut other).unwrap();
    assert_eq!(egodp_predict(&other, &image).unwrap(), egodp_predict(&net, &image).unwrap());
}
