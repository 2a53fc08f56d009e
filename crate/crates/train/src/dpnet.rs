//! Ego-DPNet training on synthetic fisheye frames.

use std::path::Path;

use egorender_nn::nets::{decode_iuv, egodp_loss, DpScore, EgoDPNet, EgoDpConfig};
use egorender_nn::{Adam, Checkpoint, Module, Tensor};
use egorender_synth::{mix_seed, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::TrainConfig;
use crate::csvlog::CsvLog;
use crate::TrainError;

pub const DPNET_CHECKPOINT: &str = "dpnet.ckpt";
pub const DPNET_LOG: &str = "dpnet_loss.csv";
pub const DPNET_LOG_HEADER: [&str; 4] = ["step", "loss", "ce", "uv"];

const BATCH_DOMAIN: u64 = 0xd9_0001;

pub struct DpRun {
    pub net: EgoDPNet,
    /// Steps completed, including resumed ones.
    pub step: usize,
    /// Total loss of the steps run in this call.
    pub losses: Vec<f64>,
}

pub fn save_egodpnet(net: &mut EgoDPNet, step: usize, path: &Path) -> Result<(), TrainError> {
    let mut ck = Checkpoint::new(json!({ "net": "egodpnet", "config": net.config }), step as u64);
    ck.put_module("dpnet", net);
    Ok(ck.save(path)?)
}

/// Loads a network and its step count.
pub fn load_egodpnet(path: &Path) -> Result<(EgoDPNet, usize), TrainError> {
    let ck = Checkpoint::load(path)?;
    let h = ck.header();
    if h.arch["net"] != "egodpnet" {
        return Err(TrainError::Config(format!("{} is not an Ego-DPNet checkpoint", path.display())));
    }
    let config: EgoDpConfig =
        serde_json::from_value(h.arch["config"].clone()).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
    let mut net = EgoDPNet::new(config);
    ck.load_module("dpnet", &mut net)?;
    Ok((net, h.step as usize))
}

/// Training frame ids after `max_frames`.
pub fn training_ids(ds: &Dataset, cfg: &TrainConfig) -> Vec<usize> {
    let mut ids = ds.meta.train.clone();
    if let Some(m) = cfg.max_frames {
        ids.truncate(m);
    }
    ids
}

/// Frames drawn for `step`; independent of earlier steps so a resumed run
/// sees the same batches.
pub fn batch_ids(ids: &[usize], seed: u64, step: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ BATCH_DOMAIN, step as u64));
    (0..batch).map(|_| ids[rng.gen_range(0..ids.len())]).collect()
}

/// Trains on the ego frames of the training split, writing the checkpoint
/// and loss log into `out_dir`. `resume` continues from a checkpoint.
pub fn train_egodpnet(ds: &Dataset, cfg: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<DpRun, TrainError> {
    cfg.validate()?;
    let ids = training_ids(ds, cfg);
    if ids.is_empty() {
        return Err(TrainError::Config("dataset has no training frames".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    std::fs::write(out_dir.join("train.toml"), cfg.to_toml()).map_err(|e| TrainError::io(out_dir, e))?;

    let parts = ds.meta.atlas.part_count as usize;
    let size = ds.meta.config.ego_size as usize;
    let (mut net, start) = match resume {
        Some(p) => load_egodpnet(p)?,
        None => (EgoDPNet::new(EgoDpConfig::new(parts, size, cfg.seed)), 0),
    };
    if net.config.parts != parts || net.config.image_size != size {
        return Err(TrainError::Config("checkpoint does not match the dataset's parts or ego size".into()));
    }
    let mut adam = Adam::new(cfg.lr_dp as f32, cfg.dp_beta1 as f32, cfg.betas[1] as f32);
    adam.t = start as u64;
    let mut log = CsvLog::open(&out_dir.join(DPNET_LOG), &DPNET_LOG_HEADER, Some(start))?;
    let ckpt = out_dir.join(DPNET_CHECKPOINT);

    let mut losses = Vec::new();
    for step in start..cfg.steps {
        let mut images = Vec::with_capacity(cfg.batch);
        let mut gts = Vec::with_capacity(cfg.batch);
        for id in batch_ids(&ids, cfg.seed, step, cfg.batch) {
            let ego = ds.load_ego(id)?;
            images.push(Tensor::from_image(&ego.image));
            gts.push(ego.iuv);
        }
        let x = Tensor::stack(&images)?;
        let (out, tape) = net.forward_train(&x)?;
        let (loss, dl, du) = egodp_loss(&out, &gts)?;
        if !loss.total.is_finite() {
            return Err(TrainError::NonFinite { what: "Ego-DPNet loss".into(), step });
        }
        net.backward(&tape, &dl, &du);
        adam.begin_step();
        net.visit_params(&mut |_, p| adam.update(p));
        log.row(step, &[loss.total, loss.ce, loss.uv])?;
        losses.push(loss.total);
        if step % 50 == 0 {
            log::info!("dpnet step {step}: loss {:.4} (ce {:.4}, uv {:.4})", loss.total, loss.ce, loss.uv);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            log.flush()?;
            save_egodpnet(&mut net, step + 1, &ckpt)?;
        }
    }
    log.flush()?;
    let step = cfg.steps.max(start);
    save_egodpnet(&mut net, step, &ckpt)?;
    Ok(DpRun { net, step, losses })
}

/// Part accuracy and UV error of `net` on the ego frames `ids`.
pub fn evaluate_egodpnet(net: &EgoDPNet, ds: &Dataset, ids: &[usize]) -> Result<DpScore, TrainError> {
    let mut score = DpScore::default();
    for chunk in ids.chunks(8) {
        let egos = chunk.iter().map(|&id| ds.load_ego(id)).collect::<Result<Vec<_>, _>>()?;
        let x = Tensor::stack(&egos.iter().map(|e| Tensor::from_image(&e.image)).collect::<Vec<_>>())?;
        let out = net.forward(&x)?;
        for (i, e) in egos.iter().enumerate() {
            score.add(&decode_iuv(&out, i), &e.iuv);
        }
    }
    Ok(score)
}
