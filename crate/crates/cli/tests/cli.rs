use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn egorender(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egorender"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

const SMALL: &str = r#"
[gen]
n_frames = 10
n_textures = 1
n_backgrounds = 1
n_external_views = 2
ego_size = 32
view_size = 32
chart_size = 16

[train]
batch = 2
steps = 6
validate_every = 0
pe_source = "ground_truth"

[paths]
data = "data"
out = "run"
"#;

fn small_project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&egorender(dir.path(), &["synth", "--config", "run.toml"]));
    dir
}

#[test]
fn synth_writes_the_requested_frames_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--n-frames", "6", "--seed", "7", "--view-size", "32", "--ego-size", "32", "--chart-size", "16"];
    ok(&egorender(dir.path(), &[&args[..], &["--out", "a"]].concat()));
    ok(&egorender(dir.path(), &[&args[..], &["--out", "b"]].concat()));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["n_frames"], 6);
    assert_eq!(meta["config"]["seed"], 7);
    let (mut a, mut b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    // the echoed configs differ only in the output path
    let echo = Path::new("egorender.toml");
    let (ea, eb) = (a.remove(echo).unwrap(), b.remove(echo).unwrap());
    assert_eq!(String::from_utf8(ea).unwrap().replace("\"a\"", "\"b\""), String::from_utf8(eb).unwrap());
    assert_eq!(a, b);

    // a rerun into the same directory reproduces it byte for byte
    let det = Command::new(env!("CARGO_BIN_EXE_egorender"))
        .current_dir(dir.path())
        .env("EGORENDER_DETERMINISTIC", "1")
        .args([&args[..], &["--out", "a"]].concat())
        .output()
        .unwrap();
    ok(&det);
    let mut again = tree(&dir.path().join("a"));
    again.remove(echo);
    assert_eq!(again, a);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = egorender(dir.path(), &["synth", "--n-frames", "0", "--out", "d"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_frames"));
    assert_eq!(code(&egorender(dir.path(), &["synth", "--no-such-key", "1"])), 2);
    assert_eq!(code(&egorender(dir.path(), &["synth", "--set", "gen.bogus=1"])), 2);
    assert_eq!(code(&egorender(dir.path(), &["synth", "--fov-deg", "30"])), 2);
    assert_eq!(code(&egorender(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn help_lists_every_config_key_and_print_config_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&egorender(dir.path(), &["--help"]));
    let printed = ok(&egorender(dir.path(), &["--print-config", "synth", "--lr-g", "0.001", "--set", "train.max_frames=5"]));
    let cfg: toml::Table = toml::from_str(&printed).unwrap();
    fn keys(prefix: &str, t: &toml::Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v.as_table() {
                Some(sub) if !sub.contains_key("fixed") => keys(&key, sub, out),
                _ => out.push(key),
            }
        }
    }
    let mut all = Vec::new();
    keys("", &cfg, &mut all);
    assert!(all.len() > 40);
    for k in &all {
        assert!(help.contains(&format!("  {k} = ")), "help is missing {k}");
    }
    assert_eq!(cfg["train"]["lr_g"].as_float(), Some(0.001));
    assert_eq!(cfg["train"]["max_frames"].as_integer(), Some(5));
    assert!(help.contains("paths.dpnet") && help.contains("Exit codes"));
}

#[test]
fn missing_artifacts_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&egorender(dir.path(), &["train-dpnet", "--data", "nowhere"])), 3);
    assert_eq!(code(&egorender(dir.path(), &["synth", "--config", "absent.toml"])), 3);
    let p = small_project();
    let out = egorender(p.path(), &["train-render", "--config", "run.toml", "--pe-source", "predicted"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Ego-DPNet"));
    assert_eq!(code(&egorender(p.path(), &["render", "--config", "run.toml", "--frame", "9"])), 3);
    assert_eq!(code(&egorender(p.path(), &["texture-export", "--input", "none.tex"])), 3);
}

#[test]
fn diverging_training_exits_with_4() {
    let p = small_project();
    let out = egorender(p.path(), &["train-dpnet", "--config", "run.toml", "--lr-dp", "3e38", "--steps", "20"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dpnet_training_logs_each_step_and_resumes() {
    let p = small_project();
    ok(&egorender(p.path(), &["train-dpnet", "--config", "run.toml", "--steps", "3"]));
    let log = std::fs::read_to_string(p.path().join("run/dpnet_loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    ok(&egorender(p.path(), &["train-dpnet", "--config", "run.toml", "--steps", "5", "--resume", "run/dpnet.ckpt"]));
    let log = std::fs::read_to_string(p.path().join("run/dpnet_loss.csv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "1", "2", "3", "4"]);
    assert!(p.path().join("run/egorender.toml").exists());
}

#[test]
fn render_eval_and_export_after_training() {
    let p = small_project();
    let cfg = ["--config", "run.toml"];
    ok(&egorender(p.path(), &[&cfg[..], &["train-render", "--train-views", "[0]"]].concat()));
    let log = std::fs::read_to_string(p.path().join("run/render_loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);

    let sweep = [&cfg[..], &["render", "--frame", "9", "--sweep", "az=0:360:30", "--view", "el=20,dist=2.5"]].concat();
    ok(&egorender(p.path(), &sweep));
    let first = tree(&p.path().join("run/render"));
    assert_eq!(first.keys().filter(|k| k.to_string_lossy().starts_with("sweep_")).count(), 12);
    ok(&egorender(p.path(), &sweep));
    assert_eq!(tree(&p.path().join("run/render")), first);

    let out = ok(&egorender(p.path(), &[&cfg[..], &["render", "--frame", "9", "--dataset-view", "1", "--debug"]].concat()));
    let l1: f64 = out.split("l1 ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(l1 > 0.0 && l1 < 1.0, "{out}");
    for f in ["view1.png", "view1_pt.png", "view1_r.png", "pe.png", "te.png", "metrics.json"] {
        assert!(p.path().join("run/render").join(f).exists(), "{f}");
    }
    assert_eq!(code(&egorender(p.path(), &[&cfg[..], &["render", "--frame", "9", "--view", "zoom=2"]].concat())), 2);

    let csv = ok(&egorender(p.path(), &[&cfg[..], &["eval", "--train-views", "[0]"]].concat()));
    let fp = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string();
    assert_eq!(fp.len(), 64);
    assert!(csv.contains("im_tex,holdout_cam") && csv.contains("im_tex,holdout_frames"));
    assert!(p.path().join("run/eval/report.md").exists());

    ok(&egorender(p.path(), &[&cfg[..], &["texture-export", "--input", "run/tm.tex", "--output", "tex/tm.png"]].concat()));
    assert!(p.path().join("tex/tm.png").exists() && p.path().join("tex/egorender.toml").exists());
}

#[test]
fn ablation_writes_a_table_for_each_variant() {
    let p = small_project();
    let out = ok(&egorender(
        p.path(),
        &["ablate", "--config", "run.toml", "--steps", "2", "--set", "eval.variants=[\"im_tex\",\"pix2pixhd\",\"only_mv\"]"],
    ));
    let md = std::fs::read_to_string(p.path().join("run/ablation/report.md")).unwrap();
    assert_eq!(out, md);
    for v in ["| im_tex |", "| pix2pixhd |", "| only_mv |"] {
        assert!(md.contains(v), "{v}");
    }
    assert!(md.contains("RI_LPIPS") && md.contains("holdout_cam SSIM"));
    let csv = std::fs::read_to_string(p.path().join("run/ablation/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}
