//! Fixture files and a binary-driven train, score and report pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nrm::cli::RunConfig;
use nrm::data::{load_idx, synthetic_blobs, variance_scale, write_idx};
use nrm::eval::report::DEFAULT_BINS;
use nrm::eval::{score_dataset, summarize};
use nrm::train::{fit, TrainConfig};
use nrm::{Checkpoint, Network, NetworkSpec};

pub fn nrm(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nrm")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub struct Fixture {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub config: PathBuf,
    pub train: PathBuf,
    pub train_labels: PathBuf,
    pub test: PathBuf,
    pub ood: PathBuf,
}

pub fn run_config() -> RunConfig {
    RunConfig {
        network: NetworkSpec::reference([1, 8, 8], 3),
        train: TrainConfig { epochs: 2, batch_size: 8, learning_rate: 0.01, seed: 4, log_every: 2, ..TrainConfig::default() },
    }
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("config.json");
    fs::write(&config, serde_json::to_string_pretty(&run_config()).unwrap()).unwrap();
    let (train, train_labels) = (root.join("train.idx"), root.join("train-labels.idx"));
    write_idx(&synthetic_blobs(36, 3, [1, 8, 8], 0.2, 1).unwrap(), &train, Some(train_labels.as_path())).unwrap();
    let test = root.join("test.idx");
    write_idx(&synthetic_blobs(12, 3, [1, 8, 8], 0.2, 2).unwrap(), &test, None).unwrap();
    let ood = root.join("ood.idx");
    write_idx(&variance_scale(&synthetic_blobs(12, 3, [1, 8, 8], 0.2, 3).unwrap(), 0.8).unwrap(), &ood, None).unwrap();
    Fixture { _dir: dir, root, config, train, train_labels, test, ood }
}

/// train -> score (twice) -> report through the binary; returns the output directory.
pub fn cli_pipeline(f: &Fixture, name: &str) -> PathBuf {
    let out = f.root.join(name);
    let (code, err) = nrm(&[
        "train", "--config", s(&f.config), "--out", s(&out), "--images", s(&f.train), "--labels", s(&f.train_labels),
    ]);
    assert_eq!(code, 0, "{err}");
    let ck = out.join("checkpoint.nrmc");
    for data in [&f.test, &f.ood] {
        let (code, err) = nrm(&["score", "--checkpoint", s(&ck), "--images", s(data), "--out", s(&out)]);
        assert_eq!(code, 0, "{err}");
    }
    let (code, err) = nrm(&[
        "report", "--scores", s(&out.join("test.csv")), s(&out.join("ood.csv")), "--in-dist", "test", "--out", s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    out
}

/// The same pipeline in process: `(checkpoint bytes, report JSON)`.
pub fn in_process_pipeline(f: &Fixture) -> (Vec<u8>, String) {
    let cfg = run_config();
    let train = load_idx(&f.train, Some(f.train_labels.as_path())).unwrap();
    let net = Network::build(cfg.network, cfg.train.seed).unwrap();
    let (checkpoint, _) = fit(net, &train, &cfg.train).unwrap();
    let sets: Vec<_> = [&f.test, &f.ood]
        .iter()
        .map(|p| {
            let ds = load_idx(p, None).unwrap();
            (ds.name.clone(), score_dataset(&checkpoint.network, &ds).unwrap())
        })
        .collect();
    let report = summarize(&sets, "test", DEFAULT_BINS).unwrap();
    (checkpoint.to_bytes().unwrap(), report.to_json().unwrap())
}

/// Whether two binary runs with the same seed wrote identical artifacts.
pub fn runs_identical(a: &Path, b: &Path) -> bool {
    ["checkpoint.nrmc", "metrics.csv", "test.csv", "ood.csv", "report.json"]
        .iter()
        .all(|file| fs::read(a.join(file)).unwrap() == fs::read(b.join(file)).unwrap())
}

/// Checkpoint bytes survive load and save unchanged.
pub fn checkpoint_roundtrip(path: &Path) -> bool {
    let bytes = fs::read(path).unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    ck.to_bytes().unwrap() == bytes && Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap() == ck
}
