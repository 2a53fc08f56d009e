use egorender_core::img::Image;
use egorender_core::metrics::{l1, psnr, ssim};
use egorender_synth::Dataset;
use egorender_train::render::{CallCounters, EgoPoses, RenderModel};
use serde::{Deserialize, Serialize};

use crate::{EvalError, LpipsPlugin};

/// A set of (frame, external view) pairs scored together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub name: String,
    pub frames: Vec<usize>,
    pub views: Vec<usize>,
}

/// Mean metrics over one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub psnr: f64,
    pub l1: f64,
    pub frames: usize,
}

/// Test frames seen from the hold-out cameras, and from the training cameras.
pub fn standard_splits(
    ds: &Dataset,
    train_views: &[usize],
    max_frames: Option<usize>,
) -> Result<Vec<EvalSplit>, EvalError> {
    let n = ds.view_count();
    if n < 2 {
        return Err(EvalError::Cameras(format!("hold-out camera evaluation needs >= 2 external views, dataset has {n}")));
    }
    if let Some(&k) = train_views.iter().find(|&&k| k >= n) {
        return Err(EvalError::Cameras(format!("training view {k} out of range; dataset has {n} views")));
    }
    let holdout: Vec<usize> = (0..n).filter(|k| !train_views.contains(k)).collect();
    if holdout.is_empty() || train_views.is_empty() {
        return Err(EvalError::Cameras(format!("training views {train_views:?} leave no hold-out camera out of {n}")));
    }
    let mut frames = ds.meta.test.clone();
    if let Some(m) = max_frames {
        frames.truncate(m);
    }
    if frames.is_empty() {
        return Err(EvalError::Config("dataset has no test frames".into()));
    }
    Ok(vec![
        EvalSplit { name: "holdout_cam".into(), frames: frames.clone(), views: holdout },
        EvalSplit { name: "holdout_frames".into(), frames, views: train_views.to_vec() },
    ])
}

fn masked(img: &Image<f32>, mask: &[bool]) -> Image<f32> {
    let mut out = img.clone();
    for (px, &m) in out.data.chunks_exact_mut(img.channels).zip(mask) {
        if !m {
            px.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Renders every pair of `split` and averages the metrics. Renders are
/// composited over the dataset background; with `foreground_only` both
/// images are blacked out outside the target silhouette instead.
pub fn evaluate_model(
    ds: &Dataset,
    model: &RenderModel,
    poses: &EgoPoses,
    split: &EvalSplit,
    lpips: Option<&dyn LpipsPlugin>,
    foreground_only: bool,
) -> Result<MetricMeans, EvalError> {
    let uses_te = model.spec().uses_te;
    let mut counters = CallCounters::default();
    let (mut s, mut lp, mut p, mut a, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for &frame in &split.frames {
        let ego = if uses_te {
            let e = ds.load_ego(frame)?;
            let pe = poses.get(frame, &e.image, &e.iuv, &mut counters)?;
            Some((e.image, pe))
        } else {
            None
        };
        for &view in &split.views {
            let v = ds.load_view(frame, view)?;
            let gen = model.render(ego.as_ref().map(|(i, p)| (i, p)), &v.iuv, &mut counters)?;
            let mask = v.iuv.mask();
            let (out, gt) = if foreground_only {
                (masked(&gen, &mask), masked(&v.image, &mask))
            } else {
                (gen.select(&mask, &v.image).map_err(|e| EvalError::Train(e.into()))?, v.image.clone())
            };
            s += ssim(&out, &gt)?;
            p += psnr(&out, &gt)?;
            a += l1(&out, &gt)?;
            if let Some(m) = lpips {
                lp += m.distance(&out, &gt)?;
            }
            n += 1;
        }
    }
    let k = n.max(1) as f64;
    Ok(MetricMeans { ssim: s / k, lpips: lpips.map(|_| lp / k), psnr: p / k, l1: a / k, frames: n })
}
