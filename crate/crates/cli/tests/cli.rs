use std::path::Path;
use std::process::{Command, Output};

use mkid::optim::{AdamConfig, TrainConfig};
use mkid::plants::{DatasetConfig, NlFamily, Structure, Variability};
use mkid_cli::config::{CheckConfig, ExperimentConfig, ModelConfig, NetworkConfig};

fn mkid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkid")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_experiment() -> ExperimentConfig {
    let mut dataset = DatasetConfig::desk(Structure::Hammerstein, Variability::Var, Variability::Inv, NlFamily::Sigmoid);
    dataset.plants = 2;
    dataset.n = 1500;
    dataset.l_h = 8;
    dataset.seed = 4;
    let mut net = NetworkConfig::new("NL2-FIR", &[8]);
    net.nl_depth = 2;
    net.nl_width = 4;
    let mut test = dataset.clone();
    test.seed = 40;
    ExperimentConfig {
        dataset,
        model: ModelConfig::Network(net),
        train: TrainConfig { epochs: 40, seed: 4, ..Default::default() },
        test: Some(test),
        check: CheckConfig::default(),
        out: None,
    }
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_or_broken_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mkid(&["train"])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"dataset\": ").unwrap();
    let out = mkid(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let mut cfg = small_experiment();
    cfg.model = ModelConfig::Network(NetworkConfig::new("FIR-NL7", &[8]));
    let p = write_config(dir.path(), "notation.json", &cfg);
    assert_eq!(code(&mkid(&["train", "--config", &p])), 2);
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", &small_experiment());
    let hash = |out: &str, seed: &str| {
        let o = mkid(&["generate", "--config", &cfg, "--seed", seed, "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        text.split("hash ").nth(1).unwrap().split(')').next().unwrap().to_string()
    };
    let a = hash(dir.path().join("a").to_str().unwrap(), "9");
    let b = hash(dir.path().join("b").to_str().unwrap(), "9");
    let c = hash(dir.path().join("c").to_str().unwrap(), "10");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(dir.path().join("a/metadata.json").exists());
    assert!(dir.path().join("a/plant1_y.f64").exists());
}

#[test]
fn train_writes_outputs_and_check_threshold_controls_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", &small_experiment());
    let out = dir.path().join("run");
    let o = mkid(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.json", "curve.csv", "checkpoint.bidm"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let results: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let min = results["summary"]["min_nmse_db"].as_f64().unwrap();
    assert!(min < 0.0);
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 41);

    // same seed, same number
    let o2 = mkid(&["train", "--config", &cfg, "--out", dir.path().join("run2").to_str().unwrap()]);
    assert_eq!(code(&o2), 0);
    let r2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run2/results.json")).unwrap()).unwrap();
    assert_eq!(r2["summary"]["min_nmse_db"].as_f64().unwrap().to_bits(), min.to_bits());

    let mut strict = small_experiment();
    strict.check.max_nmse_db = Some(-200.0);
    let p = write_config(dir.path(), "strict.json", &strict);
    let o = mkid(&["train", "--config", &p, "--out", dir.path().join("s").to_str().unwrap(), "--check"]);
    assert_eq!(code(&o), 4);
    // without --check a miss is only recorded
    let o = mkid(&["train", "--config", &p, "--out", dir.path().join("s2").to_str().unwrap()]);
    assert_eq!(code(&o), 0);

    let ckpt = out.join("checkpoint.bidm");
    let o = mkid(&[
        "adapt",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("adapt").to_str().unwrap(),
        "--epochs",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("adapt/results.json").exists());
}

#[test]
fn divergence_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_experiment();
    cfg.train.adam = AdamConfig { lr: 1e300, ..AdamConfig::default() };
    let p = write_config(dir.path(), "blowup.json", &cfg);
    let o = mkid(&["train", "--config", &p, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn memory_polynomial_training_writes_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_experiment();
    cfg.model = ModelConfig::MemoryPolynomial { order: 3, len: 8 };
    let p = write_config(dir.path(), "mp.json", &cfg);
    let out = dir.path().join("mp");
    let o = mkid(&["train", "--config", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("baseline.json").exists());
    assert!(out.join("results.json").exists());
}

#[test]
fn gradcheck_passes_under_check() {
    let o = mkid(&["gradcheck", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 17);
    assert!(!text.contains("FAIL"));
}

#[test]
fn matrix_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cell = small_experiment();
    let mut fir = cell.clone();
    fir.model = ModelConfig::Network(NetworkConfig::new("FIR", &[8]));
    let spec = serde_json::json!({
        "name": "tiny",
        "rows": ["hammerstein"],
        "columns": ["NL2-FIR", "FIR"],
        "cells": [cell, fir],
    });
    let p = dir.path().join("matrix.json");
    std::fs::write(&p, spec.to_string()).unwrap();
    let out = dir.path().join("m");
    let o = mkid(&["matrix", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(table.contains("NL2-FIR") && table.contains("hammerstein"));
    assert_eq!(code(&mkid(&["matrix", "--preset", "table9"])), 2);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
