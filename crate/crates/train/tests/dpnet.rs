mod common;

use egorender_train::config::{Stage, TrainConfig};
use egorender_train::csvlog::read_csv;
use egorender_train::dpnet::{evaluate_egodpnet, load_egodpnet, train_egodpnet, DPNET_CHECKPOINT, DPNET_LOG};

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig { stage: Stage::Dpnet, steps, batch: 2, seed: 3, ..Default::default() }
}

#[test]
fn loss_falls_and_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::toy_dataset(&dir.path().join("ds"), 12);
    let a = train_egodpnet(&ds, &cfg(60), &dir.path().join("a"), None).unwrap();
    let b = train_egodpnet(&ds, &cfg(60), &dir.path().join("b"), None).unwrap();
    assert_eq!(a.losses, b.losses);
    let head: f64 = a.losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = a.losses[55..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");

    let (header, rows) = read_csv(&dir.path().join("a").join(DPNET_LOG)).unwrap();
    assert_eq!(header, ["step", "loss", "ce", "uv"]);
    assert_eq!(rows.len(), 60);
    let (net, step) = load_egodpnet(&dir.path().join("a").join(DPNET_CHECKPOINT)).unwrap();
    assert_eq!(step, 60);
    let s1 = evaluate_egodpnet(&net, &ds, &ds.meta.test).unwrap();
    let s2 = evaluate_egodpnet(&a.net, &ds, &ds.meta.test).unwrap();
    assert_eq!(s1, s2);
    assert!(s1.foreground > 0);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::toy_dataset(&dir.path().join("ds"), 8);
    let full = train_egodpnet(&ds, &cfg(8), &dir.path().join("full"), None).unwrap();
    let out = dir.path().join("split");
    train_egodpnet(&ds, &cfg(5), &out, None).unwrap();
    let ck = out.join(DPNET_CHECKPOINT);
    let rest = train_egodpnet(&ds, &cfg(8), &out, Some(&ck)).unwrap();
    assert_eq!(rest.step, 8);
    assert_eq!(rest.losses, full.losses[5..]);
    let (_, rows) = read_csv(&out.join(DPNET_LOG)).unwrap();
    assert_eq!(rows.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
}

#[test]
fn empty_training_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::toy_dataset(&dir.path().join("ds"), 4);
    let c = TrainConfig { max_frames: Some(0), ..cfg(3) };
    assert!(train_egodpnet(&ds, &c, &dir.path().join("o"), None).is_err());
}
