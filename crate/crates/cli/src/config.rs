//! The merged run configuration and its command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use egorender_core::metrics::WorstRule;
use egorender_synth::GenConfig;
use egorender_train::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::Usage;

/// File name of the effective configuration written into output directories.
pub const ECHO_FILE: &str = "egorender.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset generation threads; 0 picks the core count.
    pub workers: usize,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { workers: 0, gen: GenConfig::default(), train: TrainConfig::default(), paths: Paths::default(), eval: EvalSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory.
    pub data: PathBuf,
    /// Output directory of training, evaluation and rendering.
    pub out: PathBuf,
    /// Ego-DPNet checkpoint used for predicted P_e.
    pub dpnet: Option<PathBuf>,
    /// Renderer checkpoint for render and eval; defaults to `<out>/render.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data: "data".into(), out: "out".into(), dpnet: None, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub variants: Vec<Variant>,
    pub max_eval_frames: Option<usize>,
    pub foreground_only: bool,
    pub lpips: bool,
    pub worst_rule: WorstRule,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { variants: Variant::ALL.to_vec(), max_eval_frames: None, foreground_only: false, lpips: true, worst_rule: WorstRule::PerDataset }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = dir.join(ECHO_FILE);
        std::fs::write(&p, self.to_toml()).with_context(|| format!("writing {}", p.display()))
    }
}

/// Every dotted key with its default value, in declaration order.
pub fn all_keys() -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(map) if !map.is_empty() && !is_enum_value(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(RunConfig::default()).expect("config serializes"), &mut out);
    out
}

// `{"fixed": "..."}` is a value, not a section.
fn is_enum_value(map: &serde_json::Map<String, serde_json::Value>) -> bool {
    map.len() == 1 && map.contains_key("fixed")
}

/// Resolves a flag name (`n-frames`, `gen.n_frames`) to its dotted key.
pub fn resolve_key(name: &str) -> Result<String, Usage> {
    let name = name.replace('-', "_");
    let keys = all_keys();
    if keys.iter().any(|(k, _)| *k == name) {
        return Ok(name);
    }
    let hits: Vec<&String> = keys.iter().map(|(k, _)| k).filter(|k| k.rsplit('.').next() == Some(name.as_str())).collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Usage(format!("unknown flag or config key `{name}`"))),
        many => Err(Usage(format!(
            "`{name}` is ambiguous; use one of {}",
            many.iter().map(|k| format!("--{k}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `key = raw` in `table`, creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), Usage> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for p in path {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| Usage(format!("`{key}`: `{p}` is not a section")))?;
    }
    t.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Reads `file` (if any), applies `key=value` overrides in order and
/// deserializes; unknown keys are errors.
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| crate::Missing(format!("config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_key(&mut table, k, v)?;
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Usage(format!("config: {e}")))?;
    Ok(cfg)
}
