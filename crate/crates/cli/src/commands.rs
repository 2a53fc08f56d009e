use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use egorender_core::body::{build_canonical_body, IkOptions, JointTargets, TargetsRecord};
use egorender_core::geometry::{Camera, TransformRecord};
use egorender_core::img::Image;
use egorender_core::metrics::l1;
use egorender_core::posecon::{construct_target_pose, CoordMode, RingView, ViewIntrinsics, ViewSpec};
use egorender_core::raster::IuvImage;
use egorender_core::textures::{extract_partial_texture, TextureStack};
use egorender_eval::{
    evaluate_model, run_ablation, split_checks, standard_splits, AblationConfig, EvalError, LpipsPlugin, LpipsProxy,
    MetricReport, ReportRow,
};
use egorender_nn::perceptual::IdentityEmbedder;
use egorender_synth::{generate_dataset, Dataset, SynthError};
use egorender_train::dpnet::{load_egodpnet, train_egodpnet, DPNET_CHECKPOINT};
use egorender_train::render::{
    quantize_iuv, CallCounters, EgoPoses, RenderModel, RenderTrainer, TrainerOptions, RENDER_CHECKPOINT,
};
use egorender_train::{PeSource, Stage, TrainConfig, TrainError};

use crate::config::RunConfig;
use crate::{Missing, Usage};

pub fn exit_code(e: &anyhow::Error) -> u8 {
    fn io(e: &std::io::Error) -> Option<u8> {
        (e.kind() == std::io::ErrorKind::NotFound).then_some(3)
    }
    fn synth(e: &SynthError) -> Option<u8> {
        match e {
            SynthError::Config(_) => Some(2),
            SynthError::Io { source, .. } => io(source),
            _ => None,
        }
    }
    fn train(e: &TrainError) -> Option<u8> {
        match e {
            TrainError::Config(_) => Some(2),
            TrainError::Missing(_) => Some(3),
            TrainError::NonFinite { .. } => Some(4),
            TrainError::Io { source, .. } => io(source),
            TrainError::Synth(s) => synth(s),
            _ => None,
        }
    }
    for cause in e.chain() {
        let code = if cause.is::<Usage>() {
            Some(2)
        } else if cause.is::<Missing>() {
            Some(3)
        } else if let Some(t) = cause.downcast_ref::<TrainError>() {
            train(t)
        } else if let Some(s) = cause.downcast_ref::<SynthError>() {
            synth(s)
        } else if let Some(ev) = cause.downcast_ref::<EvalError>() {
            match ev {
                EvalError::Config(_) | EvalError::Cameras(_) => Some(2),
                EvalError::Train(t) => train(t),
                _ => None,
            }
        } else {
            cause.downcast_ref::<std::io::Error>().and_then(io)
        };
        if let Some(c) = code {
            return c;
        }
    }
    1
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Missing(format!("{what} {}", path.display())).into())
    }
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    require(&cfg.paths.data.join("meta.json"), "dataset")?;
    Ok(Dataset::open(&cfg.paths.data)?)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| cfg.paths.out.join(RENDER_CHECKPOINT))
}

fn dpnet_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.dpnet.clone().unwrap_or_else(|| cfg.paths.out.join(DPNET_CHECKPOINT))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.data;
    let meta = generate_dataset(&cfg.gen, dir, cfg.workers)?;
    cfg.echo(dir)?;
    println!("{} frames ({} train, {} test) in {}", cfg.gen.n_frames, meta.train.len(), meta.test.len(), dir.display());
    Ok(())
}

pub fn train_dpnet(cfg: &RunConfig, resume: Option<PathBuf>) -> Result<()> {
    let ds = open_dataset(cfg)?;
    if let Some(p) = &resume {
        require(p, "checkpoint")?;
    }
    let train = TrainConfig { stage: Stage::Dpnet, ..cfg.train.clone() };
    cfg.echo(&cfg.paths.out)?;
    let run = train_egodpnet(&ds, &train, &cfg.paths.out, resume.as_deref())?;
    println!("ego-dpnet: {} steps, checkpoint {}", run.step, cfg.paths.out.join(DPNET_CHECKPOINT).display());
    Ok(())
}

pub fn train_render(cfg: &RunConfig, resume: Option<PathBuf>) -> Result<()> {
    let ds = open_dataset(cfg)?;
    if let Some(p) = &resume {
        require(p, "checkpoint")?;
    }
    let opts = TrainerOptions {
        dpnet: Some(dpnet_path(cfg)),
        resume,
        face: cfg.train.face_loss.then(|| Box::new(IdentityEmbedder) as _),
    };
    let mut trainer = RenderTrainer::new(&ds, &cfg.train, opts)?;
    cfg.echo(&cfg.paths.out)?;
    trainer.run(&cfg.paths.out)?;
    println!("{}: {} steps, checkpoint {}", cfg.train.variant, trainer.step, cfg.paths.out.join(RENDER_CHECKPOINT).display());
    Ok(())
}

/// Loads a renderer with the P_e source it was trained with.
fn load_model(cfg: &RunConfig) -> Result<(RenderModel, EgoPoses, usize)> {
    let ckpt = checkpoint_path(cfg);
    require(&ckpt, "renderer checkpoint")?;
    let (model, arch, _) = RenderModel::load(&ckpt)?;
    let poses = if model.spec().uses_te && arch.pe_source == PeSource::Predicted {
        let p = dpnet_path(cfg);
        require(&p, "Ego-DPNet checkpoint")?;
        EgoPoses::predicted(load_egodpnet(&p)?.0)
    } else {
        EgoPoses::ground_truth()
    };
    Ok((model, poses, arch.image_size))
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Dataset frame supplying the ego image and ground-truth joints.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Ego image PNG; needs --joints.
    #[arg(long, conflicts_with = "frame", requires = "joints")]
    pub ego: Option<PathBuf>,
    /// JSON joint record (names, positions, confidence).
    #[arg(long)]
    pub joints: Option<PathBuf>,
    /// Ring viewpoint `az=<deg>,el=<deg>,dist=<m>`.
    #[arg(long)]
    pub view: Option<String>,
    /// Pinhole camera JSON.
    #[arg(long, conflicts_with_all = ["view", "sweep", "dataset_view"])]
    pub camera: Option<PathBuf>,
    /// Stored external camera K of --frame; also reports L1 against its image.
    #[arg(long, value_name = "K", requires = "frame", conflicts_with_all = ["view", "sweep"])]
    pub dataset_view: Option<usize>,
    /// local or global.
    #[arg(long, default_value = "global")]
    pub coords: String,
    /// Root transform JSON applied in global mode.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Azimuth sweep `az=<start>:<stop>:<step>` in degrees, stop excluded.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Also write P_e, T_e, P_t and the feature image.
    #[arg(long)]
    pub debug: bool,
}

pub fn parse_sweep(s: &str) -> Result<Vec<f64>, Usage> {
    let bad = || Usage(format!("--sweep expects az=<start>:<stop>:<step>, got `{s}`"));
    let range = s.strip_prefix("az=").ok_or_else(bad)?;
    let v: Vec<f64> = range.split(':').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = v[..] else { return Err(bad()) };
    if !(step > 0.0) || !(stop > start) {
        return Err(bad());
    }
    let n = ((stop - start) / step - 1e-9).ceil() as usize;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn rgb(img: &Image<f32>) -> Image<f32> {
    if img.channels >= 3 {
        img.channel_range(0, 3)
    } else {
        img.channel_range(0, 1)
    }
}

pub fn render(cfg: &RunConfig, a: &RenderArgs) -> Result<()> {
    let (model, poses, size) = load_model(cfg)?;
    let ds = match a.frame {
        Some(_) => Some(open_dataset(cfg)?),
        None => None,
    };
    let mut counters = CallCounters::default();
    let (ego_image, joints, pe) = match (a.frame, &a.ego, &ds) {
        (Some(id), None, Some(ds)) => {
            if id >= ds.len() {
                return Err(Usage(format!("frame {id} out of range; dataset has {}", ds.len())).into());
            }
            let e = ds.load_ego(id)?;
            let info = ds.load_info(id)?;
            let pe = poses.get(id, &e.image, &e.iuv, &mut counters)?;
            (e.image, JointTargets::<f64>::from_record(&info.joints)?, Some(pe))
        }
        (None, Some(ego), _) => {
            require(ego, "ego image")?;
            let image = Image::<f32>::load_png(ego)?;
            let rec: TargetsRecord = read_json(a.joints.as_ref().expect("clap requires joints"), "joints")?;
            let pe = poses.predict(&image, &mut counters)?;
            if pe.is_none() && model.spec().uses_te {
                return Err(Usage("ground-truth P_e is only available with --frame".into()).into());
            }
            (image, JointTargets::from_record(&rec)?, pe)
        }
        _ => return Err(Usage("render needs --frame or --ego with --joints".into()).into()),
    };
    let pe = if model.spec().uses_te { pe } else { None };

    let gen_cfg = ds.as_ref().map(|d| d.meta.config.clone()).unwrap_or_else(|| cfg.gen.clone());
    let (skel, mesh) = build_canonical_body::<f64>(&gen_cfg.body)?;
    let mode: CoordMode = a.coords.parse().map_err(|e| Usage(format!("{e}")))?;
    let intr = ViewIntrinsics { image_size: (size as u32, size as u32), fov_deg: gen_cfg.ring.fov_deg };
    let ring: RingView = match &a.view {
        Some(v) => v.parse().map_err(|e| Usage(format!("--view: {e}")))?,
        None => RingView::default(),
    };

    let mut views: Vec<(String, ViewSpec<f64>)> = Vec::new();
    let mut reference = None;
    if let Some(k) = a.dataset_view {
        let ds = ds.as_ref().expect("clap requires frame");
        if k >= ds.view_count() {
            return Err(Usage(format!("dataset view {k} out of range; dataset has {}", ds.view_count())).into());
        }
        let v = ds.load_view(a.frame.expect("clap requires frame"), k)?;
        views.push((format!("view{k}"), ViewSpec::pinhole(CoordMode::Global, v.camera.clone())));
        reference = Some(v);
    } else if let Some(p) = &a.camera {
        require(p, "camera")?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        match Camera::<f64>::from_json(&text).map_err(|e| Usage(format!("{}: {e}", p.display())))? {
            Camera::Pinhole(c) => views.push(("camera".into(), ViewSpec::pinhole(mode, c))),
            Camera::Fisheye(_) => return Err(Usage("--camera must be a pinhole camera".into()).into()),
        }
    } else if let Some(s) = &a.sweep {
        for (i, az) in parse_sweep(s)?.into_iter().enumerate() {
            views.push((format!("sweep_{i:03}"), ViewSpec::ring(mode, RingView { azimuth_deg: az, ..ring }, intr)));
        }
    } else {
        views.push(("avatar".into(), ViewSpec::ring(mode, ring, intr)));
    }
    if let Some(p) = &a.root {
        let rec: TransformRecord = read_json(p, "root transform")?;
        let root = rec.to_transform::<f64>().map_err(|e| Usage(format!("{}: {e}", p.display())))?;
        for (_, v) in &mut views {
            v.root = root.clone();
        }
    }

    let out = cfg.paths.out.join("render");
    cfg.echo(&out)?;
    let ego = pe.as_ref().map(|p| (&ego_image, p));
    if a.debug {
        if let Some(p) = &pe {
            std::fs::write(out.join("pe.png"), p.encode_png()?).context("writing pe.png")?;
            let te = extract_partial_texture(&ego_image, p, model.layout)?;
            te.preview(0).save_png(&out.join("te.png"))?;
        }
    }
    for (name, spec) in &views {
        let tp = construct_target_pose(&joints, spec, &skel, &mesh, &IkOptions::default())?;
        let pt: IuvImage<f32> = quantize_iuv(&tp.iuv.cast())?;
        let img = model.render(ego, &pt, &mut counters)?;
        let mask = pt.mask();
        let background = match &reference {
            Some(v) => v.image.clone(),
            None => Image::zeros(img.width, img.height, 3),
        };
        let comp = img.select(&mask, &background)?;
        comp.save_png(&out.join(format!("{name}.png")))?;
        if a.debug {
            std::fs::write(out.join(format!("{name}_pt.png")), pt.encode_png()?).context("writing P_t")?;
            rgb(&model.feature_image(ego, &pt, &mut counters)?).save_png(&out.join(format!("{name}_r.png")))?;
        }
        if let Some(v) = &reference {
            let err = l1(&comp, &v.image)?;
            println!("{name}: l1 {err:.6} (ik residual {:.2e} m)", tp.ik_mean_residual);
            std::fs::write(out.join("metrics.json"), serde_json::json!({ "view": name, "l1": err }).to_string())
                .context("writing metrics.json")?;
        }
    }
    println!("{} image(s) in {}", views.len(), out.display());
    Ok(())
}

fn train_views(cfg: &RunConfig, ds: &Dataset) -> Vec<usize> {
    if cfg.train.train_views.is_empty() {
        (0..ds.view_count().saturating_sub(1)).collect()
    } else {
        cfg.train.train_views.clone()
    }
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let (model, poses, _) = load_model(cfg)?;
    let mut train = cfg.train.clone();
    train.train_views = train_views(cfg, &ds);
    let splits = standard_splits(&ds, &train.train_views, cfg.eval.max_eval_frames)?;
    let checks = split_checks(&ds, &train, &splits)?;
    let proxy = LpipsProxy::default();
    let lpips: Option<&dyn LpipsPlugin> = cfg.eval.lpips.then_some(&proxy as &dyn LpipsPlugin);
    let cells = splits
        .iter()
        .map(|s| evaluate_model(&ds, &model, &poses, s, lpips, cfg.eval.foreground_only))
        .collect::<Result<Vec<_>, _>>()?;
    let report = MetricReport {
        datasets: splits.iter().map(|s| s.name.clone()).collect(),
        rows: vec![ReportRow { variant: model.variant.name().into(), cells }],
        lpips_name: lpips.map(|l| l.name().to_string()),
        worst_rule: cfg.eval.worst_rule.clone(),
        fingerprint: fingerprint(cfg),
        checks,
    };
    let out = cfg.paths.out.join("eval");
    cfg.echo(&out)?;
    report.write(&out)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn fingerprint(cfg: &RunConfig) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let ab = AblationConfig {
        variants: cfg.eval.variants.clone(),
        train: cfg.train.clone(),
        max_eval_frames: cfg.eval.max_eval_frames,
        foreground_only: cfg.eval.foreground_only,
        lpips: cfg.eval.lpips,
        worst_rule: cfg.eval.worst_rule.clone(),
        dpnet: Some(dpnet_path(cfg)),
    };
    let out = cfg.paths.out.join("ablation");
    cfg.echo(&out)?;
    let report = run_ablation(&ds, &ab, &out)?;
    print!("{}", report.to_markdown()?);
    Ok(())
}

pub fn texture_export(cfg: &RunConfig, input: &Path, output: Option<PathBuf>, channel: usize) -> Result<()> {
    require(input, "texture")?;
    let stack = if input.extension().is_some_and(|e| e == "ckpt") {
        let (model, _, _) = RenderModel::load(input)?;
        model.tm_stack().ok_or_else(|| Usage(format!("{} has no implicit texture", input.display())))?
    } else {
        TextureStack::<f32>::load(input)?
    };
    if channel + 3 > stack.channels {
        return Err(Usage(format!("channel {channel} leaves fewer than 3 of {} channels", stack.channels)).into());
    }
    let out = output.unwrap_or_else(|| cfg.paths.out.join("texture.png"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        cfg.echo(dir)?;
    }
    stack.preview(channel).save_png(&out)?;
    println!("{}", out.display());
    Ok(())
}
