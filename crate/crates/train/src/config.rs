use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dpnet,
    #[default]
    Render,
}

/// The renderer and its five ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    ImTex,
    ExTex,
    OnlyEgo,
    OnlyMv,
    #[serde(rename = "pix2pixhd")]
    Pix2PixHd,
    FeaNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorInput {
    /// Feature image rendered from a texture stack.
    FeatureImage,
    /// One-hot part plus uv encoding of the target pose.
    PoseEncoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSpec {
    pub uses_te: bool,
    pub uses_tm: bool,
    pub tm_trainable: bool,
    pub generator_input: GeneratorInput,
    pub per_frame_extractor: bool,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::ImTex, Variant::Pix2PixHd, Variant::ExTex, Variant::OnlyEgo, Variant::OnlyMv, Variant::FeaNet];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ImTex => "im_tex",
            Variant::ExTex => "ex_tex",
            Variant::OnlyEgo => "only_ego",
            Variant::OnlyMv => "only_mv",
            Variant::Pix2PixHd => "pix2pixhd",
            Variant::FeaNet => "fea_net",
        }
    }

    pub fn spec(self) -> VariantSpec {
        use GeneratorInput::*;
        let s = |uses_te, uses_tm, tm_trainable, generator_input, per_frame_extractor| VariantSpec {
            uses_te,
            uses_tm,
            tm_trainable,
            generator_input,
            per_frame_extractor,
        };
        match self {
            Variant::ImTex => s(true, true, true, FeatureImage, false),
            Variant::ExTex => s(true, true, false, FeatureImage, false),
            Variant::OnlyEgo => s(true, false, false, FeatureImage, false),
            Variant::OnlyMv => s(false, true, true, FeatureImage, false),
            Variant::Pix2PixHd => s(false, false, false, PoseEncoding, false),
            Variant::FeaNet => s(true, false, false, FeatureImage, true),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown variant `{s}`; expected one of im_tex, ex_tex, only_ego, only_mv, pix2pixhd, fea_net")))
    }
}

/// Where the renderer's ego dense pose comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeSource {
    /// Ego-DPNet prediction on the ego image.
    #[default]
    Predicted,
    /// The stored ground-truth ego IUV.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub variant: Variant,
    pub lr_g: f64,
    pub lr_tm: f64,
    pub lr_d: f64,
    pub betas: [f64; 2],
    pub lambda_gan: f64,
    pub lambda_p: f64,
    pub lambda_face: f64,
    pub face_loss: bool,
    /// Face crop half-side as a fraction of the image height.
    pub face_radius: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Ego-DPNet learning rate and first-moment decay.
    pub lr_dp: f64,
    pub dp_beta1: f64,
    pub pe_source: PeSource,
    /// Predict every needed P_e once before training instead of per step.
    pub precompute_pe: bool,
    /// External cameras used as targets; empty means all.
    pub train_views: Vec<usize>,
    /// Use only the first `max_frames` training frames.
    pub max_frames: Option<usize>,
    /// Validation render interval in steps; 0 disables.
    pub validate_every: usize,
    /// Checkpoint interval in steps; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Render,
            variant: Variant::ImTex,
            lr_g: 2e-4,
            lr_tm: 2e-3,
            lr_d: 2e-4,
            betas: [0.5, 0.999],
            lambda_gan: 1.0,
            lambda_p: 10.0,
            lambda_face: 5.0,
            face_loss: false,
            face_radius: 0.1,
            steps: 2000,
            batch: 4,
            seed: 0,
            lr_dp: 1e-3,
            dp_beta1: 0.9,
            pe_source: PeSource::Predicted,
            precompute_pe: true,
            train_views: Vec::new(),
            max_frames: None,
            validate_every: 500,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [("lr_g", self.lr_g), ("lr_tm", self.lr_tm), ("lr_d", self.lr_d), ("lr_dp", self.lr_dp)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0"));
            }
        }
        for (name, v) in [("lambda_gan", self.lambda_gan), ("lambda_p", self.lambda_p), ("lambda_face", self.lambda_face)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        for b in self.betas.iter().chain([&self.dp_beta1]) {
            if !(0.0..1.0).contains(b) {
                return bad("adam betas must lie in [0, 1)".into());
            }
        }
        if self.batch == 0 {
            return bad("batch must be > 0".into());
        }
        if !(self.face_radius > 0.0) {
            return bad("face_radius must be > 0".into());
        }
        if self.max_frames == Some(0) {
            return bad("max_frames must be > 0".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_g, c.betas[0], c.betas[1]), (2e-4, 0.5, 0.999));
        assert_eq!((c.lambda_gan, c.lambda_p, c.lambda_face), (1.0, 10.0, 5.0));
        assert!((c.lr_tm - 10.0 * c.lr_g).abs() < 1e-15);
        assert!(!c.face_loss);
        assert_eq!(c.batch, 4);
        c.validate().unwrap();
    }

    #[test]
    fn variant_table() {
        use GeneratorInput::*;
        let row = |v: Variant| {
            let s = v.spec();
            (s.uses_te, s.uses_tm, s.tm_trainable, s.generator_input, s.per_frame_extractor)
        };
        assert_eq!(row(Variant::ImTex), (true, true, true, FeatureImage, false));
        assert_eq!(row(Variant::ExTex), (true, true, false, FeatureImage, false));
        assert_eq!(row(Variant::OnlyEgo), (true, false, false, FeatureImage, false));
        assert_eq!(row(Variant::OnlyMv), (false, true, true, FeatureImage, false));
        assert_eq!(row(Variant::Pix2PixHd), (false, false, false, PoseEncoding, false));
        assert_eq!(row(Variant::FeaNet), (true, false, false, FeatureImage, true));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let toml = format!("variant = \"{}\"", v.name());
            assert_eq!(TrainConfig::from_toml(&toml).unwrap().variant, v);
        }
        assert!("imtex".parse::<Variant>().is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = TrainConfig { steps: 7, train_views: vec![0, 2], max_frames: Some(5), ..Default::default() };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(TrainConfig::from_toml("lr = 1.0").is_err());
        assert!(TrainConfig::from_toml("lambda_p = -1.0").is_err());
    }
}
