//! Person-specific RenderNet training (with the implicit texture stack) for
//! every ablation variant, and inference with a trained model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use egorender_core::body::{build_canonical_body, global_transforms, joint, BodyPose, Skeleton};
use egorender_core::img::Image;
use egorender_core::raster::{feature_render, feature_render_grad, IuvImage};
use egorender_core::textures::{compose_global, extract_partial_texture, init_implicit_stack, AtlasLayout, TextureStack};
use egorender_nn::nets::feature::FeatureTape;
use egorender_nn::nets::{
    egodp_predict, DiscConfig, EgoDPNet, FeatureNetConfig, FrameFeatureNet, MultiScaleDiscriminator, RenderNet,
    RenderNetConfig,
};
use egorender_nn::perceptual::{FaceEmbedder, FeatureExtractor, RandomPyramid};
use egorender_nn::{Adam, Checkpoint, Module, Param, Tensor};
use egorender_synth::{mix_seed, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GeneratorInput, PeSource, TrainConfig, Variant, VariantSpec};
use crate::csvlog::CsvLog;
use crate::dpnet::{load_egodpnet, training_ids};
use crate::losses::{face_identity_loss, lsgan_d_loss, lsgan_g_loss, perceptual_loss_grad, total_generator_loss, LossParts};
use crate::TrainError;

pub const RENDER_CHECKPOINT: &str = "render.ckpt";
pub const RENDER_LOG: &str = "render_loss.csv";
pub const RENDER_LOG_HEADER: [&str; 6] = ["step", "L_D", "L_adv", "L_p", "L_face", "L_G"];
pub const TM_FILE: &str = "tm.tex";

const BATCH_DOMAIN: u64 = 0x9e_0002;

/// How often each pipeline stage ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounters {
    pub extract: usize,
    pub feature_render: usize,
    pub feature_net: usize,
    pub dpnet: usize,
}

/// Channels of the generator input for `variant` with `parts` body parts.
pub fn input_channels(variant: Variant, parts: usize) -> usize {
    match variant {
        Variant::ImTex | Variant::ExTex => 6,
        Variant::OnlyEgo | Variant::OnlyMv => 3,
        Variant::FeaNet => egorender_nn::nets::feature::FEATURE_CHANNELS,
        Variant::Pix2PixHd => parts + 3,
    }
}

/// One-hot part (background included) followed by `u, v`.
pub fn pose_encoding(pt: &IuvImage<f32>, parts: usize) -> Image<f32> {
    let c = parts + 3;
    let mut img = Image::zeros(pt.width, pt.height, c);
    for (i, &p) in pt.part.iter().enumerate() {
        let px = &mut img.data[i * c..(i + 1) * c];
        px[p as usize] = 1.0;
        if p > 0 {
            px[parts + 1] = pt.uv[i][0];
            px[parts + 2] = pt.uv[i][1];
        }
    }
    img
}

/// PNG round trip, so predicted and precomputed poses agree bit for bit.
pub fn quantize_iuv(iuv: &IuvImage<f32>) -> Result<IuvImage<f32>, TrainError> {
    Ok(IuvImage::decode_png(&iuv.encode_png()?)?)
}

/// `mask ? fg : bg` per sample.
pub fn composite(fg: &Tensor, bg: &Tensor, masks: &[Vec<bool>]) -> Tensor {
    let mut out = bg.clone();
    let plane = fg.plane();
    for (i, m) in masks.iter().enumerate() {
        let (src, dst) = (fg.sample(i), out.sample_mut(i));
        for c in 0..fg.c {
            for (p, &on) in m.iter().enumerate() {
                if on {
                    dst[c * plane + p] = src[c * plane + p];
                }
            }
        }
    }
    out
}

fn mask_grad(g: &mut Tensor, masks: &[Vec<bool>]) {
    let plane = g.plane();
    let c = g.c;
    for (i, m) in masks.iter().enumerate() {
        let s = g.sample_mut(i);
        for k in 0..c {
            for (p, &on) in m.iter().enumerate() {
                if !on {
                    s[k * plane + p] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderArch {
    pub variant: Variant,
    pub layout: AtlasLayout,
    pub image_size: usize,
    pub pe_source: PeSource,
    pub g: RenderNetConfig,
    pub d: DiscConfig,
    pub ffn: Option<FeatureNetConfig>,
}

/// Everything needed at inference: generator, T_m and the per-frame extractor.
#[derive(Debug, Clone)]
pub struct RenderModel {
    pub variant: Variant,
    pub layout: AtlasLayout,
    pub g: RenderNet,
    /// T_m texel values, in [`TextureStack`] order.
    pub tm: Option<Param>,
    pub ffn: Option<FrameFeatureNet>,
}

/// What the backward pass needs to route the input gradient.
enum InputTape {
    Frozen,
    /// Sampled stack; T_m occupies channels `offset..offset + 3`.
    Tm { stack: TextureStack<f32>, offset: usize },
    Ffn { stack: TextureStack<f32>, tape: FeatureTape },
}

impl RenderModel {
    pub fn spec(&self) -> VariantSpec {
        self.variant.spec()
    }

    pub fn tm_stack(&self) -> Option<TextureStack<f32>> {
        self.tm.as_ref().map(|p| TextureStack { layout: self.layout, channels: 3, data: p.value.clone(), visibility: None })
    }

    /// Trainable parameter count (generator, T_m and extractor).
    pub fn trainable_count(&mut self) -> usize {
        let spec = self.spec();
        let tm = if spec.tm_trainable { self.tm.as_ref().map_or(0, |p| p.len()) } else { 0 };
        self.g.param_count() + tm + self.ffn.as_mut().map_or(0, |f| f.param_count())
    }

    /// Generator input for one sample. `ego` is the ego image and its dense
    /// pose; it is ignored by variants without T_e.
    fn input(
        &self,
        ego: Option<(&Image<f32>, &IuvImage<f32>)>,
        pt: &IuvImage<f32>,
        train: bool,
        counters: &mut CallCounters,
    ) -> Result<(Image<f32>, InputTape), TrainError> {
        let spec = self.spec();
        if spec.generator_input == GeneratorInput::PoseEncoding {
            return Ok((pose_encoding(pt, self.layout.part_count as usize), InputTape::Frozen));
        }
        let te = if spec.uses_te {
            let (img, pe) = ego.ok_or_else(|| TrainError::Config(format!("{} needs the ego image", self.variant)))?;
            counters.extract += 1;
            Some(extract_partial_texture(img, pe, self.layout)?)
        } else {
            None
        };
        let tm = self.tm_stack();
        let trainable = train && spec.tm_trainable;
        let (stack, tape) = match (te, tm) {
            (Some(te), _) if spec.per_frame_extractor => {
                let ffn = self.ffn.as_ref().expect("fea_net has an extractor");
                counters.feature_net += 1;
                if train {
                    let (f, tape) = ffn.forward_train(&te)?;
                    (f.clone(), InputTape::Ffn { stack: f, tape })
                } else {
                    (ffn.forward(&te)?, InputTape::Frozen)
                }
            }
            (Some(te), Some(tm)) => {
                let g = compose_global(&te, &tm)?;
                let tape = if trainable { InputTape::Tm { stack: g.clone(), offset: 3 } } else { InputTape::Frozen };
                (g, tape)
            }
            (Some(te), None) => (te, InputTape::Frozen),
            (None, Some(tm)) => {
                let tape = if trainable { InputTape::Tm { stack: tm.clone(), offset: 0 } } else { InputTape::Frozen };
                (tm, tape)
            }
            (None, None) => unreachable!("feature-image variants use T_e or T_m"),
        };
        counters.feature_render += 1;
        Ok((feature_render(&stack, pt)?, tape))
    }

    /// Routes the gradient of one sample's generator input into T_m or the extractor.
    fn input_backward(&mut self, tape: &InputTape, pt: &IuvImage<f32>, dx: &Image<f32>) -> Result<(), TrainError> {
        match tape {
            InputTape::Frozen => {}
            InputTape::Tm { stack, offset } => {
                let g = feature_render_grad(stack, pt, dx)?;
                let tm = self.tm.as_mut().expect("T_m present");
                let c = stack.channels;
                for (k, texel) in g.data.chunks_exact(c).enumerate() {
                    for j in 0..3 {
                        tm.grad[3 * k + j] += texel[offset + j];
                    }
                }
            }
            InputTape::Ffn { stack, tape } => {
                let g = feature_render_grad(stack, pt, dx)?;
                self.ffn.as_mut().expect("extractor present").backward(tape, &g)?;
            }
        }
        Ok(())
    }

    /// Renders the foreground image for target pose `pt`.
    pub fn render(
        &self,
        ego: Option<(&Image<f32>, &IuvImage<f32>)>,
        pt: &IuvImage<f32>,
        counters: &mut CallCounters,
    ) -> Result<Image<f32>, TrainError> {
        let (x, _) = self.input(ego, pt, false, counters)?;
        Ok(self.g.forward(&Tensor::from_image(&x))?.to_image(0))
    }

    /// Feature image fed to the generator, for debugging output.
    pub fn feature_image(
        &self,
        ego: Option<(&Image<f32>, &IuvImage<f32>)>,
        pt: &IuvImage<f32>,
        counters: &mut CallCounters,
    ) -> Result<Image<f32>, TrainError> {
        Ok(self.input(ego, pt, false, counters)?.0)
    }

    pub fn load(path: &Path) -> Result<(Self, RenderArch, usize), TrainError> {
        let ck = Checkpoint::load(path)?;
        let arch: RenderArch = serde_json::from_value(ck.header().arch.clone())
            .map_err(|e| TrainError::Config(format!("{}: not a renderer checkpoint ({e})", path.display())))?;
        let mut model = RenderModel::build(&arch, None);
        model.load_from(&ck)?;
        Ok((model, arch, ck.header().step as usize))
    }

    fn build(arch: &RenderArch, tm: Option<TextureStack<f32>>) -> Self {
        let spec = arch.variant.spec();
        let tm = spec.uses_tm.then(|| {
            Param::new(tm.map_or_else(|| vec![0.5; arch.layout.texel_count() * 3], |t| t.data))
        });
        Self {
            variant: arch.variant,
            layout: arch.layout,
            g: RenderNet::new(arch.g.clone()),
            tm,
            ffn: arch.ffn.clone().map(FrameFeatureNet::new),
        }
    }

    fn load_from(&mut self, ck: &Checkpoint) -> Result<(), TrainError> {
        ck.load_module("g", &mut self.g)?;
        if let Some(tm) = self.tm.as_mut() {
            ck.load_param("tm", tm)?;
        }
        if let Some(f) = self.ffn.as_mut() {
            ck.load_module("ffn", f)?;
        }
        Ok(())
    }
}

/// Ego dense pose `P_e` per frame: stored ground truth or Ego-DPNet output.
pub struct EgoPoses {
    source: PeSource,
    net: Option<EgoDPNet>,
    cache: HashMap<usize, Vec<u8>>,
}

impl EgoPoses {
    pub fn ground_truth() -> Self {
        Self { source: PeSource::GroundTruth, net: None, cache: HashMap::new() }
    }

    pub fn predicted(net: EgoDPNet) -> Self {
        Self { source: PeSource::Predicted, net: Some(net), cache: HashMap::new() }
    }

    pub fn source(&self) -> PeSource {
        self.source
    }

    /// Predicts and stores the encoded pose of every frame in `ids`.
    pub fn precompute(&mut self, ds: &Dataset, ids: &[usize], counters: &mut CallCounters) -> Result<(), TrainError> {
        let Some(net) = &self.net else { return Ok(()) };
        for &id in ids {
            if !self.cache.contains_key(&id) {
                counters.dpnet += 1;
                let pe = egodp_predict(net, &ds.load_ego(id)?.image)?;
                self.cache.insert(id, pe.encode_png()?);
            }
        }
        Ok(())
    }

    /// `P_e` for an ego image of frame `id`; `gt` is the stored ego IUV.
    pub fn get(&self, id: usize, image: &Image<f32>, gt: &IuvImage<f32>, counters: &mut CallCounters) -> Result<IuvImage<f32>, TrainError> {
        match (&self.net, self.cache.get(&id)) {
            (None, _) => Ok(gt.clone()),
            (Some(_), Some(bytes)) => Ok(IuvImage::decode_png(bytes)?),
            (Some(net), None) => {
                counters.dpnet += 1;
                quantize_iuv(&egodp_predict(net, image)?)
            }
        }
    }

    /// `P_e` for an arbitrary ego image (never cached).
    pub fn predict(&self, image: &Image<f32>, counters: &mut CallCounters) -> Result<Option<IuvImage<f32>>, TrainError> {
        match &self.net {
            None => Ok(None),
            Some(net) => {
                counters.dpnet += 1;
                Ok(Some(quantize_iuv(&egodp_predict(net, image)?)?))
            }
        }
    }
}

/// Extra inputs to [`RenderTrainer::new`].
#[derive(Default)]
pub struct TrainerOptions {
    /// Ego-DPNet checkpoint; required when P_e is predicted and the variant uses T_e.
    pub dpnet: Option<PathBuf>,
    /// Renderer checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub face: Option<Box<dyn FaceEmbedder>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub l_d: f64,
    pub l_adv: f64,
    pub l_p: f64,
    pub l_face: f64,
    pub l_g: f64,
}

impl StepLosses {
    pub fn row(&self) -> [f64; 5] {
        [self.l_d, self.l_adv, self.l_p, self.l_face, self.l_g]
    }
}

/// One training target: external view `view` of frame `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Target {
    pub frame: usize,
    pub view: usize,
}

struct Sample {
    ego: Option<(Image<f32>, IuvImage<f32>)>,
    real: Image<f32>,
    pt: IuvImage<f32>,
    head: Option<[f64; 2]>,
}

pub struct RenderTrainer<'a> {
    ds: &'a Dataset,
    pub cfg: TrainConfig,
    pub model: RenderModel,
    pub d: MultiScaleDiscriminator,
    pub arch: RenderArch,
    pub step: usize,
    pub counters: CallCounters,
    pub targets: Vec<Target>,
    pub poses: EgoPoses,
    adam_g: Adam,
    adam_tm: Adam,
    adam_d: Adam,
    extractor: RandomPyramid,
    face: Option<Box<dyn FaceEmbedder>>,
    skel: Option<Skeleton<f64>>,
}

/// External views used as training targets.
pub fn train_views(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<usize>, TrainError> {
    let n = ds.view_count();
    if n == 0 {
        return Err(TrainError::Config("dataset has no external views".into()));
    }
    if cfg.train_views.is_empty() {
        return Ok((0..n).collect());
    }
    if let Some(&k) = cfg.train_views.iter().find(|&&k| k >= n) {
        return Err(TrainError::Config(format!("train view {k} out of range; dataset has {n} views")));
    }
    Ok(cfg.train_views.clone())
}

impl<'a> RenderTrainer<'a> {
    pub fn new(ds: &'a Dataset, cfg: &TrainConfig, opts: TrainerOptions) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = cfg.variant.spec();
        if cfg.face_loss && cfg.lambda_face > 0.0 && opts.face.is_none() {
            return Err(TrainError::Config("face_loss is enabled but no face embedder is available".into()));
        }
        let frames = training_ids(ds, cfg);
        if frames.is_empty() {
            return Err(TrainError::Config("dataset has no training frames".into()));
        }
        let views = train_views(ds, cfg)?;
        let targets: Vec<Target> =
            frames.iter().flat_map(|&frame| views.iter().map(move |&view| Target { frame, view })).collect();

        let layout = ds.meta.atlas;
        let parts = layout.part_count as usize;
        let channels = input_channels(cfg.variant, parts);
        let arch = RenderArch {
            variant: cfg.variant,
            layout,
            image_size: ds.meta.config.view_size as usize,
            pe_source: cfg.pe_source,
            g: RenderNetConfig::new(channels, mix_seed(cfg.seed, 1)),
            d: DiscConfig::new(channels, mix_seed(cfg.seed, 2)),
            ffn: spec.per_frame_extractor.then(|| FeatureNetConfig::new(mix_seed(cfg.seed, 3))),
        };

        let mut counters = CallCounters::default();
        let poses = match (spec.uses_te, cfg.pe_source) {
            (true, PeSource::Predicted) => {
                let path = opts.dpnet.as_ref().ok_or_else(|| {
                    TrainError::Missing(format!("variant {} needs an Ego-DPNet checkpoint for predicted P_e", cfg.variant))
                })?;
                if !path.exists() {
                    return Err(TrainError::Missing(format!("Ego-DPNet checkpoint {}", path.display())));
                }
                let (net, _) = load_egodpnet(path)?;
                let mut poses = EgoPoses::predicted(net);
                if cfg.precompute_pe {
                    poses.precompute(ds, &frames, &mut counters)?;
                }
                poses
            }
            _ => EgoPoses::ground_truth(),
        };

        let (model, d, step) = match &opts.resume {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                let stored: RenderArch = serde_json::from_value(ck.header().arch.clone())
                    .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
                if stored != arch {
                    return Err(TrainError::Config(format!("{} was trained with a different setup", path.display())));
                }
                let mut model = RenderModel::build(&arch, None);
                model.load_from(&ck)?;
                let mut d = MultiScaleDiscriminator::new(arch.d.clone());
                ck.load_module("d", &mut d)?;
                (model, d, ck.header().step as usize)
            }
            None => {
                let tm = if spec.uses_tm {
                    let records = targets
                        .iter()
                        .map(|t| ds.load_view(t.frame, t.view).map(|v| (v.image, v.iuv)))
                        .collect::<Result<Vec<_>, _>>()?;
                    counters.extract += records.len();
                    Some(init_implicit_stack(&records, layout)?)
                } else {
                    None
                };
                (RenderModel::build(&arch, tm), MultiScaleDiscriminator::new(arch.d.clone()), 0)
            }
        };

        let [b1, b2] = cfg.betas.map(|b| b as f32);
        let adam = |lr: f64| {
            let mut a = Adam::new(lr as f32, b1, b2);
            a.t = step as u64;
            a
        };
        let skel = if opts.face.is_some() && cfg.face_loss {
            Some(build_canonical_body::<f64>(&ds.meta.config.body).map_err(egorender_synth::SynthError::from)?.0)
        } else {
            None
        };
        Ok(Self {
            ds,
            cfg: cfg.clone(),
            model,
            d,
            arch,
            step,
            counters,
            targets,
            poses,
            adam_g: adam(cfg.lr_g),
            adam_tm: adam(cfg.lr_tm),
            adam_d: adam(cfg.lr_d),
            extractor: RandomPyramid::default(),
            face: opts.face,
            skel,
        })
    }

    /// Targets drawn at `step`.
    pub fn batch(&self, step: usize) -> Vec<Target> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed ^ BATCH_DOMAIN, step as u64));
        (0..self.cfg.batch).map(|_| self.targets[rng.gen_range(0..self.targets.len())]).collect()
    }

    fn head_pixel(&self, t: Target, cam: &egorender_core::geometry::PinholeCamera<f64>) -> Result<Option<[f64; 2]>, TrainError> {
        let Some(skel) = &self.skel else { return Ok(None) };
        let info = self.ds.load_info(t.frame)?;
        let pose = BodyPose::from_record(&info.pose);
        let head = global_transforms(skel, &pose)[joint::HEAD].1;
        let (w, h) = cam.image_size;
        Ok(cam
            .project(cam.pose.apply(head))
            .map(|(px, _)| px)
            .filter(|px| px[0] >= 0.0 && px[1] >= 0.0 && px[0] < w as f64 && px[1] < h as f64))
    }

    fn load(&mut self, t: Target) -> Result<Sample, TrainError> {
        let view = self.ds.load_view(t.frame, t.view)?;
        let ego = if self.model.spec().uses_te {
            let e = self.ds.load_ego(t.frame)?;
            let pe = self.poses.get(t.frame, &e.image, &e.iuv, &mut self.counters)?;
            Some((e.image, pe))
        } else {
            None
        };
        let head = self.head_pixel(t, &view.camera)?;
        Ok(Sample { ego, real: view.image, pt: view.iuv, head })
    }

    /// One alternating discriminator/generator update.
    pub fn train_step(&mut self) -> Result<StepLosses, TrainError> {
        let step = self.step;
        let samples = self.batch(step).into_iter().map(|t| self.load(t)).collect::<Result<Vec<_>, _>>()?;
        let mut xs = Vec::with_capacity(samples.len());
        let mut tapes = Vec::with_capacity(samples.len());
        for s in &samples {
            let ego = s.ego.as_ref().map(|(i, p)| (i, p));
            let (x, tape) = self.model.input(ego, &s.pt, true, &mut self.counters)?;
            xs.push(Tensor::from_image(&x));
            tapes.push(tape);
        }
        let x = Tensor::stack(&xs)?;
        let real = Tensor::stack(&samples.iter().map(|s| Tensor::from_image(&s.real)).collect::<Vec<_>>())?;
        let masks: Vec<Vec<bool>> = samples.iter().map(|s| s.pt.mask()).collect();

        let (y, gtape) = self.model.g.forward_train(&x)?;
        let fake = composite(&y, &real, &masks);

        // discriminator
        let (dr, rtape) = self.d.forward_train(&x, &real)?;
        let (df, ftape) = self.d.forward_train(&x, &fake)?;
        let (l_d, gr, gf) = lsgan_d_loss(&dr, &df);
        self.d.backward(&rtape, &gr, true);
        self.d.backward(&ftape, &gf, true);
        self.adam_d.begin_step();
        let adam_d = self.adam_d;
        self.d.visit_params(&mut |_, p| adam_d.update(p));

        // generator
        let (df2, tape2) = self.d.forward_train(&x, &fake)?;
        let (l_adv, gadv) = lsgan_g_loss(&df2);
        let (dfeat, dimg) = self.d.backward(&tape2, &gadv, false);
        let (l_p, dlp) = perceptual_loss_grad(&self.extractor as &dyn FeatureExtractor, &fake, &real)?;
        let (lam_p, lam_gan, lam_face) = (self.cfg.lambda_p as f32, self.cfg.lambda_gan as f32, self.cfg.lambda_face as f32);
        let mut dfake = dlp;
        dfake.scale(lam_p);
        let mut t = dimg;
        t.scale(lam_gan);
        dfake.add_assign(&t);

        let mut l_face = 0.0;
        if self.cfg.face_loss {
            let n = samples.len() as f64;
            for (i, s) in samples.iter().enumerate() {
                let radius = self.cfg.face_radius * s.pt.height as f64;
                let (l, g) = face_identity_loss(self.face.as_deref(), &fake.to_image(i), &s.real, s.head, radius);
                l_face += l / n;
                if let Some(g) = g {
                    let g = Tensor::from_image(&g);
                    for (o, v) in dfake.sample_mut(i).iter_mut().zip(&g.data) {
                        *o += lam_face * v / n as f32;
                    }
                }
            }
        }
        mask_grad(&mut dfake, &masks);

        let spec = self.model.spec();
        let need_input = spec.tm_trainable || spec.per_frame_extractor;
        let dx = self.model.g.backward(&gtape, &dfake, need_input);
        if let Some(mut dx) = dx {
            let mut t = dfeat;
            t.scale(lam_gan);
            dx.add_assign(&t);
            for (i, (tape, s)) in tapes.iter().zip(&samples).enumerate() {
                self.model.input_backward(tape, &s.pt, &dx.to_image(i))?;
            }
        }
        self.adam_g.begin_step();
        self.adam_tm.begin_step();
        let (adam_g, adam_tm) = (self.adam_g, self.adam_tm);
        self.model.g.visit_params(&mut |_, p| adam_g.update(p));
        if let Some(f) = self.model.ffn.as_mut() {
            f.visit_params(&mut |_, p| adam_g.update(p));
        }
        if spec.tm_trainable {
            if let Some(tm) = self.model.tm.as_mut() {
                adam_tm.update(tm);
            }
        }

        let parts = LossParts { perceptual: l_p, face: l_face, adv: l_adv };
        let losses = StepLosses { l_d, l_adv, l_p, l_face, l_g: total_generator_loss(&self.cfg, &parts) };
        if !losses.row().iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFinite { what: "renderer loss".into(), step });
        }
        self.step += 1;
        Ok(losses)
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<(), TrainError> {
        let arch = serde_json::to_value(&self.arch).expect("arch serializes");
        let mut ck = Checkpoint::new(arch, self.step as u64);
        ck.put_module("g", &mut self.model.g);
        ck.put_module("d", &mut self.d);
        if let Some(tm) = &self.model.tm {
            ck.put_param("tm", tm);
        }
        if let Some(f) = self.model.ffn.as_mut() {
            ck.put_module("ffn", f);
        }
        Ok(ck.save(path)?)
    }

    /// Foreground render and composite for target `t`.
    pub fn render_target(&mut self, t: Target) -> Result<(Image<f32>, Image<f32>), TrainError> {
        let s = self.load(t)?;
        let ego = s.ego.as_ref().map(|(i, p)| (i, p));
        let gen = self.model.render(ego, &s.pt, &mut self.counters)?;
        let comp = gen.select(&s.pt.mask(), &s.real)?;
        Ok((comp, s.real))
    }

    /// Runs until `cfg.steps`, writing the loss log, validation renders,
    /// checkpoints and the final T_m into `out_dir`.
    pub fn run(&mut self, out_dir: &Path) -> Result<Vec<StepLosses>, TrainError> {
        std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
        std::fs::write(out_dir.join("train.toml"), self.cfg.to_toml()).map_err(|e| TrainError::io(out_dir, e))?;
        let mut log = CsvLog::open(&out_dir.join(RENDER_LOG), &RENDER_LOG_HEADER, Some(self.step))?;
        let ckpt = out_dir.join(RENDER_CHECKPOINT);
        let mut all = Vec::new();
        while self.step < self.cfg.steps {
            let step = self.step;
            let l = self.train_step()?;
            log.row(step, &l.row())?;
            if step % 50 == 0 {
                log::info!(
                    "{} step {step}: L_D {:.4} L_adv {:.4} L_p {:.4} L_G {:.4}",
                    self.cfg.variant, l.l_d, l.l_adv, l.l_p, l.l_g
                );
            }
            all.push(l);
            if self.cfg.validate_every > 0 && (step + 1) % self.cfg.validate_every == 0 {
                self.validation_render(out_dir)?;
            }
            if self.cfg.checkpoint_every > 0 && (step + 1) % self.cfg.checkpoint_every == 0 {
                log.flush()?;
                self.save_checkpoint(&ckpt)?;
            }
        }
        log.flush()?;
        self.save_checkpoint(&ckpt)?;
        if let Some(tm) = self.model.tm_stack() {
            tm.save(&out_dir.join(TM_FILE))?;
        }
        Ok(all)
    }

    /// Writes `[render | ground truth]` for the first training target.
    fn validation_render(&mut self, out_dir: &Path) -> Result<(), TrainError> {
        let dir = out_dir.join("val");
        std::fs::create_dir_all(&dir).map_err(|e| TrainError::io(&dir, e))?;
        let (comp, real) = self.render_target(self.targets[0])?;
        let (w, h) = (comp.width, comp.height);
        let mut pair = Image::zeros(2 * w, h, 3);
        for y in 0..h {
            for x in 0..w {
                pair.pixel_mut(x, y).copy_from_slice(comp.pixel(x, y));
                pair.pixel_mut(w + x, y).copy_from_slice(real.pixel(x, y));
            }
        }
        let path = dir.join(format!("{:06}.png", self.step));
        pair.save_png(&path).map_err(TrainError::from)
    }
}
