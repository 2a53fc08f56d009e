use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::Image;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing value for method `{method}` on `{dataset}`")]
    MissingCell { method: String, dataset: String },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
}

fn check<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    a.check_same_shape(b).map_err(|e| MetricError::Shape(e.to_string()))
}

/// Mean absolute difference.
pub fn l1<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs()).sum();
    Ok(s / a.data.len().max(1) as f64)
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2)).sum();
    Ok(s / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio for peak 1; `+inf` for identical images.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..SSIM_WINDOW).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y0 + i) * ow + x0]).sum();
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range 1,
/// averaged over the valid window positions and channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricError::Shape(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let k = gaussian_kernel();
    let (w, h, c) = (a.width, a.height, a.channels);
    let mut total = 0.0;
    for ch in 0..c {
        let xa: Vec<f64> = a.data.iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let xb: Vec<f64> = b.data.iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (mu_a, ow, oh) = filter_valid(&xa, w, h, &k);
        let (mu_b, _, _) = filter_valid(&xb, w, h, &k);
        let (saa, _, _) = filter_valid(&prod(&xa, &xa), w, h, &k);
        let (sbb, _, _) = filter_valid(&prod(&xb, &xb), w, h, &k);
        let (sab, _, _) = filter_valid(&prod(&xa, &xb), w, h, &k);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / c as f64)
}

/// Direction in which a metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

/// Choice of the reference ("worst") method for relative improvement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorstRule {
    /// The worst method of each dataset separately.
    PerDataset,
    /// One named method for every dataset.
    Fixed(String),
}

/// Metric values per method (rows) and dataset (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl MetricTable {
    pub fn new(methods: &[&str], datasets: &[&str], values: &[&[f64]]) -> Self {
        Self {
            methods: methods.iter().map(|s| s.to_string()).collect(),
            datasets: datasets.iter().map(|s| s.to_string()).collect(),
            values: values.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        }
    }

    fn cell(&self, m: usize, d: usize) -> Result<f64, MetricError> {
        self.values.get(m).and_then(|r| r.get(d)).copied().flatten().ok_or_else(|| MetricError::MissingCell {
            method: self.methods[m].clone(),
            dataset: self.datasets.get(d).cloned().unwrap_or_default(),
        })
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    /// Index of the worst method for one dataset.
    pub fn worst(&self, d: usize, o: Orientation) -> Result<usize, MetricError> {
        let mut best: Option<(usize, f64)> = None;
        for m in 0..self.methods.len() {
            let v = self.cell(m, d)?;
            let worse = match (best, o) {
                (None, _) => true,
                (Some((_, b)), Orientation::LowerIsBetter) => v > b,
                (Some((_, b)), Orientation::HigherIsBetter) => v < b,
            };
            if worse {
                best = Some((m, v));
            }
        }
        Ok(best.map(|b| b.0).unwrap_or(0))
    }
}

/// Per-dataset relative improvements `|m(y) - m(x)| / m(y)` in percent, one row per method.
pub fn relative_improvement_per_dataset(
    table: &MetricTable,
    orientation: Orientation,
    rule: &WorstRule,
) -> Result<Vec<Vec<f64>>, MetricError> {
    let fixed = match rule {
        WorstRule::Fixed(name) => Some(table.method_index(name).ok_or_else(|| MetricError::UnknownMethod(name.clone()))?),
        WorstRule::PerDataset => None,
    };
    let mut out = vec![vec![0.0; table.datasets.len()]; table.methods.len()];
    for d in 0..table.datasets.len() {
        let y = match fixed {
            Some(y) => y,
            None => table.worst(d, orientation)?,
        };
        let my = table.cell(y, d)?;
        for (m, row) in out.iter_mut().enumerate() {
            row[d] = 100.0 * (my - table.cell(m, d)?).abs() / my;
        }
    }
    Ok(out)
}

/// Mean over datasets of the per-dataset relative improvement, in percent.
pub fn relative_improvement(
    table: &MetricTable,
    orientation: Orientation,
    rule: &WorstRule,
) -> Result<Vec<(String, f64)>, MetricError> {
    let per = relative_improvement_per_dataset(table, orientation, rule)?;
    Ok(table
        .methods
        .iter()
        .zip(per)
        .map(|(m, r)| (m.clone(), r.iter().sum::<f64>() / r.len().max(1) as f64))
        .collect())
}

pub const PUBLISHED_METHODS: [&str; 6] = ["im_tex", "pix2pixhd", "ex_tex", "only_ego", "only_mv", "fea_net"];
pub const PUBLISHED_DATASETS: [&str; 4] = ["H1", "H2", "H3", "H4"];

/// Published single-video LPIPS values (x10) of the six methods on four captures.
pub fn published_lpips() -> MetricTable {
    MetricTable::new(
        &PUBLISHED_METHODS,
        &PUBLISHED_DATASETS,
        &[
            &[1.623, 1.617, 1.569, 1.571],
            &[1.713, 1.713, 1.640, 1.615],
            &[1.691, 1.683, 1.676, 1.629],
            &[1.769, 1.704, 1.660, 1.578],
            &[1.738, 1.626, 1.585, 1.587],
            &[1.695, 1.687, 1.630, 1.616],
        ],
    )
}

/// Published single-video SSIM values (x10), same layout as [`published_lpips`].
pub fn published_ssim() -> MetricTable {
    MetricTable::new(
        &PUBLISHED_METHODS,
        &PUBLISHED_DATASETS,
        &[
            &[7.529, 6.840, 6.469, 7.535],
            &[7.395, 6.798, 6.342, 7.428],
            &[7.431, 6.778, 6.326, 7.435],
            &[7.437, 6.782, 6.361, 7.586],
            &[7.543, 6.828, 6.360, 7.505],
            &[7.444, 6.823, 6.350, 7.449],
        ],
    )
}

/// Published mean relative LPIPS improvement of `im_tex` (percent), the method marked "-" as reference.
pub const PUBLISHED_IM_TEX_LPIPS_RI: f64 = 7.562;
pub const PUBLISHED_LPIPS_REFERENCE: &str = "only_ego";

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, w: usize, h: usize, c: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random(1, 24, 20, 3);
        let b = random(2, 24, 20, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = Image::<f64>::zeros(16, 16, 1);
        let b = Image::<f64>::filled(16, 16, 1, 1.0);
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!(ssim(&Image::<f64>::zeros(8, 8, 1), &Image::zeros(8, 8, 1)).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::<f64>::filled(4, 4, 3, 0.2);
        assert!((psnr(&a, &Image::filled(4, 4, 3, 0.3)).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&Image::<f64>::zeros(2, 2, 1), &Image::filled(2, 2, 1, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn l1_closed_forms() {
        let z = Image::<f64>::zeros(4, 2, 1);
        assert_eq!(l1(&z, &z).unwrap(), 0.0);
        assert_eq!(l1(&z, &Image::filled(4, 2, 1, 1.0)).unwrap(), 1.0);
        let mut half = z.clone();
        half.data[..4].iter_mut().for_each(|v| *v = 0.5);
        assert_eq!(l1(&z, &half).unwrap(), 0.25);
        assert!(l1(&z, &Image::zeros(2, 4, 1)).is_err());
    }

    #[test]
    fn pixel_permutation_invariance() {
        let a = random(3, 8, 8, 3);
        let b = random(4, 8, 8, 3);
        let perm = |img: &Image<f64>| {
            let mut out = img.clone();
            for i in 0..64 {
                let j = (i * 37) % 64;
                out.data[3 * j..3 * j + 3].copy_from_slice(&img.data[3 * i..3 * i + 3]);
            }
            out
        };
        assert!((l1(&a, &b).unwrap() - l1(&perm(&a), &perm(&b)).unwrap()).abs() < 1e-15);
        assert!((psnr(&a, &b).unwrap() - psnr(&perm(&a), &perm(&b)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ri_single_cell() {
        let t = published_lpips();
        let per = relative_improvement_per_dataset(&t, Orientation::LowerIsBetter, &WorstRule::Fixed("only_ego".into())).unwrap();
        assert!((per[0][0] - 8.253).abs() < 0.01);
        assert!((per[0][0] - 100.0 * (1.769 - 1.623) / 1.769).abs() < 1e-12);
    }

    #[test]
    fn ri_of_reference_is_zero_and_scale_free() {
        let t = published_lpips();
        let per = relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::PerDataset).unwrap();
        let worst_everywhere = t.worst(0, Orientation::LowerIsBetter).unwrap();
        assert_eq!(t.methods[worst_everywhere], "only_ego");
        let fixed = relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::Fixed("only_ego".into())).unwrap();
        assert_eq!(fixed[3].1, 0.0);
        let mut scaled = t.clone();
        for r in scaled.values.iter_mut() {
            for v in r.iter_mut() {
                *v = v.map(|x| x * 10.0);
            }
        }
        let per2 = relative_improvement(&scaled, Orientation::LowerIsBetter, &WorstRule::PerDataset).unwrap();
        for (a, b) in per.iter().zip(&per2) {
            assert!((a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn ri_aggregates_differ_from_published() {
        let t = published_lpips();
        let fixed = relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::Fixed(PUBLISHED_LPIPS_REFERENCE.into())).unwrap();
        let per = relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::PerDataset).unwrap();
        assert!((fixed[0].1 - 4.82).abs() < 0.01);
        assert!((per[0].1 - 5.95).abs() < 0.01);
        assert!((fixed[0].1 - PUBLISHED_IM_TEX_LPIPS_RI).abs() > 1.0);
    }

    #[test]
    fn ri_errors() {
        let mut t = published_lpips();
        assert!(matches!(
            relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::Fixed("nope".into())),
            Err(MetricError::UnknownMethod(_))
        ));
        t.values[2][1] = None;
        assert!(matches!(
            relative_improvement(&t, Orientation::LowerIsBetter, &WorstRule::PerDataset),
            Err(MetricError::MissingCell { .. })
        ));
    }

    #[test]
    fn higher_is_better_picks_minimum_as_worst() {
        let t = published_ssim();
        assert_eq!(t.methods[t.worst(0, Orientation::HigherIsBetter).unwrap()], "pix2pixhd");
    }
}
