use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bsnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small dataset, trained and binarized tiny model, calibrated profile and
/// converted spiking model.
struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        ok(&["synth", "--out", &p(d, "train.bin"), "--samples", "240", "--seed", "1"]);
        ok(&["synth", "--out", &p(d, "test.bin"), "--samples", "60", "--seed", "2"]);
        ok(&["train", "--data", &p(d, "train.bin"), "--out", &p(d, "fp.bin"), "--epochs", "2"]);
        ok(&["binarize", "--model", &p(d, "fp.bin"), "--data", &p(d, "train.bin"), "--out", &p(d, "bin.bin"), "--epochs", "1"]);
        ok(&["calibrate", "--model", &p(d, "bin.bin"), "--data", &p(d, "train.bin"), "--out", &p(d, "profile.csv")]);
        ok(&["convert", "--model", &p(d, "bin.bin"), "--profile", &p(d, "profile.csv"), "--out", &p(d, "snn.bin")]);
        Pipeline { dir }
    }

    fn path(&self, name: &str) -> String {
        p(self.dir.path(), name)
    }
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_owned()
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(dir.path(), "a.bin"), p(dir.path(), "b.bin"));
    ok(&["synth", "--out", &a, "--samples", "50", "--seed", "9"]);
    ok(&["synth", "--out", &b, "--samples", "50", "--seed", "9"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(Path::new(&format!("{a}.manifest.json")).exists());
}

#[test]
fn full_pipeline_and_outputs() {
    let pl = Pipeline::new();
    let (snn, test) = (pl.path("snn.bin"), pl.path("test.bin"));

    ok(&["infer", "--model", &snn, "--data", &test, "--out", &pl.path("plain.csv"), "--timesteps", "32"]);
    ok(&[
        "infer", "--model", &snn, "--data", &test, "--out", &pl.path("never.csv"), "--timesteps", "32", "--early-exit", "none",
    ]);
    assert_eq!(fs::read(pl.path("plain.csv")).unwrap(), fs::read(pl.path("never.csv")).unwrap());
    let rows = fs::read_to_string(pl.path("plain.csv")).unwrap();
    assert_eq!(rows.lines().count(), 61);

    ok(&[
        "report", "--model", &snn, "--data", &test, "--out", &pl.path("report.json"), "--csv", &pl.path("ops.csv"), "--timesteps",
        "32",
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(pl.path("report.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["ops"]["normalized_ops"].as_f64().unwrap() >= 0.0);
    assert!(fs::read_to_string(pl.path("ops.csv")).unwrap().starts_with("layer,kind,ops,ifr,normalized_ops"));
}

#[test]
fn sweep_writes_one_curve_per_percentile() {
    let pl = Pipeline::new();
    ok(&[
        "sweep", "--model", &pl.path("bin.bin"), "--data", &pl.path("test.bin"), "--calibration-data", &pl.path("train.bin"),
        "--out", &pl.path("sweep.csv"), "--percentiles", "100,99", "--timesteps", "8",
    ]);
    let text = fs::read_to_string(pl.path("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "percentile,reset,timestep,accuracy,normalized_ops");
    let percentiles: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(percentiles.len(), 16);
    assert_eq!(percentiles.iter().filter(|&&q| q == 100.0).count(), 8);
    assert_eq!(percentiles.iter().filter(|&&q| q == 99.0).count(), 8);
}

#[test]
fn convert_without_profile_names_the_missing_step() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", &p(d, "train.bin"), "--samples", "40"]);
    ok(&["train", "--data", &p(d, "train.bin"), "--out", &p(d, "fp.bin"), "--epochs", "1"]);
    let out = bsnn(&["convert", "--model", &p(d, "fp.bin"), "--profile", &p(d, "profile.csv"), "--out", &p(d, "snn.bin")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "missing-dependency");
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibrate"));
    assert!(!d.join("snn.bin").exists());
}

#[test]
fn invalid_arguments_are_reported_as_json() {
    let out = bsnn(&["synth", "--out", "x.bin", "--noise", "loud"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "invalid-argument");
    let out = bsnn(&["--threads", "0", "synth", "--out", "x.bin"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn refuses_to_overwrite_inputs() {
    let dir = TempDir::new().unwrap();
    let data = p(dir.path(), "d.bin");
    ok(&["synth", "--out", &data, "--samples", "40"]);
    let out = bsnn(&["train", "--data", &data, "--out", &data, "--epochs", "1"]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "invalid-argument");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let config: PathBuf = dir.path().join("synth.json");
    fs::write(&config, r#"{"samples": 30, "seed": 4, "noise": 0.2}"#).unwrap();
    let (a, b, c) = (p(dir.path(), "a.bin"), p(dir.path(), "b.bin"), p(dir.path(), "c.bin"));
    ok(&["synth", "--config", config.to_str().unwrap(), "--out", &a]);
    ok(&["synth", "--out", &b, "--samples", "30", "--seed", "4", "--noise", "0.2"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(&["synth", "--config", config.to_str().unwrap(), "--out", &c, "--seed", "5"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    // A manifest replays the run that wrote it.
    fs::remove_file(&a).unwrap();
    ok(&["--config", &format!("{a}.manifest.json")]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
