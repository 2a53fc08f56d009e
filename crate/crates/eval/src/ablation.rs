//! Trains every requested variant under one configuration and scores each on
//! the hold-out splits.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use egorender_core::metrics::WorstRule;
use egorender_synth::Dataset;
use egorender_train::dpnet::training_ids;
use egorender_train::render::{RenderTrainer, TrainerOptions};
use egorender_train::{PeSource, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluate::{evaluate_model, standard_splits, EvalSplit};
use crate::report::{MetricReport, ReportRow};
use crate::{EvalError, LpipsPlugin, LpipsProxy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    /// Shared training settings; `variant` is overridden per run. An empty
    /// `train_views` keeps the last external view as the hold-out camera.
    pub train: TrainConfig,
    pub max_eval_frames: Option<usize>,
    pub foreground_only: bool,
    pub lpips: bool,
    pub worst_rule: WorstRule,
    /// Ego-DPNet checkpoint, needed when `train.pe_source` is predicted.
    pub dpnet: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            train: TrainConfig { pe_source: PeSource::GroundTruth, ..TrainConfig::default() },
            max_eval_frames: None,
            foreground_only: false,
            lpips: true,
            worst_rule: WorstRule::PerDataset,
            dpnet: None,
        }
    }
}

impl AblationConfig {
    /// sha256 over the JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Fails if a test frame is a training frame or a hold-out view is a
/// training view; returns the statements that held.
pub fn split_checks(ds: &Dataset, train: &TrainConfig, splits: &[EvalSplit]) -> Result<Vec<String>, EvalError> {
    let train_frames: HashSet<usize> = training_ids(ds, train).into_iter().collect();
    let mut checks = Vec::new();
    for s in splits {
        if let Some(f) = s.frames.iter().find(|f| train_frames.contains(f)) {
            return Err(EvalError::Overlap(format!("frame {f} of split {} is also a training frame", s.name)));
        }
        checks.push(format!("{}: {} test frames, none in the {} training frames", s.name, s.frames.len(), train_frames.len()));
    }
    if let Some(cam) = splits.iter().find(|s| s.name == "holdout_cam") {
        if let Some(v) = cam.views.iter().find(|v| train.train_views.contains(v)) {
            return Err(EvalError::Overlap(format!("hold-out view {v} is also a training view")));
        }
        checks.push(format!("holdout_cam: views {:?} disjoint from training views {:?}", cam.views, train.train_views));
    }
    Ok(checks)
}

/// Trains each variant into `out_dir/<variant>`, evaluates it and writes
/// `report.csv`, `report.md` and `report.json` into `out_dir`.
pub fn run_ablation(ds: &Dataset, cfg: &AblationConfig, out_dir: &Path) -> Result<MetricReport, EvalError> {
    if cfg.variants.is_empty() {
        return Err(EvalError::Config("no variants selected".into()));
    }
    if cfg.variants.iter().collect::<HashSet<_>>().len() != cfg.variants.len() {
        return Err(EvalError::Config("variants listed twice".into()));
    }
    if let WorstRule::Fixed(m) = &cfg.worst_rule {
        if !cfg.variants.iter().any(|v| v.name() == m) {
            return Err(EvalError::Config(format!("reference method `{m}` is not among the variants")));
        }
    }
    let mut cfg = cfg.clone();
    let n = ds.view_count();
    if cfg.train.train_views.is_empty() {
        cfg.train.train_views = (0..n.saturating_sub(1)).collect();
    }
    let splits = standard_splits(ds, &cfg.train.train_views, cfg.max_eval_frames)?;
    let checks = split_checks(ds, &cfg.train, &splits)?;
    let fingerprint = cfg.fingerprint();
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::Io { path: out_dir.to_path_buf(), source: e })?;
    let p = out_dir.join("ablation.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).expect("config serializes"))
        .map_err(|e| EvalError::Io { path: p, source: e })?;

    let proxy = LpipsProxy::default();
    let lpips: Option<&dyn LpipsPlugin> = cfg.lpips.then_some(&proxy as &dyn LpipsPlugin);
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let train = TrainConfig { variant, ..cfg.train.clone() };
        let opts = TrainerOptions { dpnet: cfg.dpnet.clone(), ..TrainerOptions::default() };
        let mut trainer = RenderTrainer::new(ds, &train, opts)?;
        log::info!("ablation: training {variant} for {} steps", train.steps);
        trainer.run(&out_dir.join(variant.name()))?;
        let cells = splits
            .iter()
            .map(|s| evaluate_model(ds, &trainer.model, &trainer.poses, s, lpips, cfg.foreground_only))
            .collect::<Result<Vec<_>, _>>()?;
        log::info!("ablation: {variant} {cells:?}");
        rows.push(ReportRow { variant: variant.name().into(), cells });
    }
    let report = MetricReport {
        datasets: splits.iter().map(|s| s.name.clone()).collect(),
        rows,
        lpips_name: lpips.map(|l| l.name().to_string()),
        worst_rule: cfg.worst_rule.clone(),
        fingerprint,
        checks,
    };
    report.write(out_dir)?;
    Ok(report)
}
