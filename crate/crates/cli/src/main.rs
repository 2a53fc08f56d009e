//! `egorender`: dataset synthesis, training, rendering and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;

/// Bad flags, values or configuration (exit 2).
#[derive(Debug)]
pub struct Usage(pub String);

/// A required input file is absent (exit 3).
#[derive(Debug)]
pub struct Missing(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for Missing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing artifact: {}", self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Missing {}

#[derive(Parser, Debug)]
#[command(
    name = "egorender",
    version,
    about = "Free-viewpoint avatar rendering from a synthetic egocentric fisheye camera",
    long_about = None
)]
struct Cli {
    /// TOML file with [gen], [train], [paths] and [eval] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset into paths.data (`--out` also names it).
    Synth,
    /// Train Ego-DPNet into paths.out.
    TrainDpnet {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the renderer variant `train.variant` into paths.out.
    TrainRender {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render avatars from new viewpoints into <paths.out>/render.
    Render(commands::RenderArgs),
    /// Score a trained renderer on the hold-out splits.
    Eval,
    /// Train and score every variant in eval.variants.
    Ablate,
    /// Write a texture stack as a preview grid PNG.
    TextureExport {
        /// `.tex` file or renderer checkpoint.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// First of the three channels shown.
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

/// Flags parsed by clap; every other `--name` is a config key.
const CLAP_FLAGS: [(&str, bool); 20] = [
    ("config", true),
    ("set", true),
    ("seed", true),
    ("print-config", false),
    ("help", false),
    ("version", false),
    ("resume", true),
    ("input", true),
    ("output", true),
    ("channel", true),
    ("frame", true),
    ("ego", true),
    ("joints", true),
    ("view", true),
    ("camera", true),
    ("dataset-view", true),
    ("coords", true),
    ("root", true),
    ("sweep", true),
    ("debug", false),
];

/// Splits config-key flags out of `args`.
fn split_key_flags(args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>), Usage> {
    let mut rest = vec![args[0].clone()];
    let mut keys = Vec::new();
    let mut sub: Option<&str> = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        i += 1;
        let Some(flag) = a.strip_prefix("--").filter(|f| !f.is_empty()) else {
            if sub.is_none() && !a.starts_with('-') {
                sub = Some(a.as_str());
            }
            rest.push(a.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if let Some(&(_, takes)) = CLAP_FLAGS.iter().find(|(n, _)| *n == name) {
            rest.push(a.clone());
            if takes && inline.is_none() && i < args.len() {
                rest.push(args[i].clone());
                i += 1;
            }
            continue;
        }
        let key = if name == "out" && sub == Some("synth") { "paths.data".to_string() } else { config::resolve_key(name)? };
        let value = match inline {
            Some(v) => v,
            None if i < args.len() && !args[i].starts_with("--") => {
                i += 1;
                args[i - 1].clone()
            }
            None => "true".into(),
        };
        keys.push((key, value));
    }
    Ok((rest, keys))
}

fn keys_help() -> String {
    let mut s = String::from(
        "Every config key is also a flag: `--n-frames 100`, `--train.lr_g 1e-4` or `--set gen.seed=3`.\n\nConfig keys (defaults):\n",
    );
    for (k, v) in config::all_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s.push_str("\nExit codes: 0 success, 2 usage error, 3 missing artifact, 4 numerical failure.\n");
    s.push_str("EGORENDER_DETERMINISTIC=1 forces deterministic mode.\n");
    s
}

fn run(args: Vec<String>) -> anyhow::Result<()> {
    let (rest, key_flags) = split_key_flags(&args)?;
    let matches = match Cli::command().after_long_help(keys_help()).after_help(keys_help()).try_get_matches_from(&rest) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Usage(e.to_string().trim_end().to_string()).into()),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Usage(e.to_string()))?;

    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        overrides.push((config::resolve_key(k)?, v.to_string()));
    }
    overrides.extend(key_flags);
    if let Some(seed) = cli.seed {
        overrides.push(("gen.seed".into(), seed.to_string()));
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    let mut cfg = config::load(cli.config.as_deref(), &overrides)?;
    if std::env::var("EGORENDER_DETERMINISTIC").is_ok_and(|v| v == "1") {
        log::info!("deterministic mode: single worker");
        cfg.workers = 1;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate()?;
    match cli.command {
        Cmd::Synth => commands::synth(&cfg),
        Cmd::TrainDpnet { resume } => commands::train_dpnet(&cfg, resume),
        Cmd::TrainRender { resume } => commands::train_render(&cfg, resume),
        Cmd::Render(a) => commands::render(&cfg, &a),
        Cmd::Eval => commands::eval(&cfg),
        Cmd::Ablate => commands::ablate(&cfg),
        Cmd::TextureExport { input, output, channel } => commands::texture_export(&cfg, &input, output, channel),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
