use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const COMMANDS: [&str; 7] = ["synth", "cluster", "distill", "compose", "eval", "metrics", "sweep"];

fn gvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = gvd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

/// A scaled-down experiment so the full command chain runs in seconds.
fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "train_per_class": 40,
        "test_per_class": 20,
        "denoiser_training": { "hidden": [32], "epochs": 3 },
        "teacher": { "epochs": 40 },
        "student": { "epochs": 40 },
        "eval_seeds": 2,
        "sweep": { "lambdas": [0.1, 0.5] },
        "distill": { "ipc": 2 }
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn synth_defaults_are_counted_sized_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let summary = ok(&["synth", "--out", a.to_str().unwrap()]);
    assert_eq!(summary["train_records"], 1000);
    assert_eq!(summary["test_records"], 500);
    ok(&["synth", "--out", b.to_str().unwrap(), "--workers", "3"]);
    assert_eq!(snapshot(&a), snapshot(&b));

    // 28-byte header, then a u32 label and F·D f32 values per record.
    let record = 4 + 4 * 16 * 2;
    for (name, n) in [("train.gvds", 1000u64), ("test.gvds", 500)] {
        let bytes = fs::read(a.join(name)).unwrap();
        let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(count, n);
        assert_eq!(bytes.len() as u64, 28 + n * record);
    }
    let world: Value = serde_json::from_slice(&fs::read(a.join("world.json")).unwrap()).unwrap();
    assert_eq!(world["class_means"].as_array().unwrap().len(), 5);
}

#[test]
fn every_command_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}"));
        for cmd in COMMANDS {
            ok(&[cmd, "--config", cfg, "--out", out.to_str().unwrap(), "--workers", workers, "--seed", "11"]);
        }
        runs.push(snapshot(&out));
    }
    let files: Vec<&String> = runs[0].keys().collect();
    for name in [
        "train.gvds", "test.gvds", "world.json", "centers.gvds", "raw.gvds", "distilled.gvds",
        "provenance.json", "trace.csv", "composed.gvds", "composed_provenance.json", "eval.json",
        "eval_trace.csv", "metrics.json", "metrics.csv", "sweep.csv",
    ] {
        assert!(runs[0].contains_key(name), "missing {name} in {files:?}");
    }
    for (name, bytes) in &runs[0] {
        assert!(&runs[1][name] == bytes, "{name} differs between worker counts");
    }
}

#[test]
fn eval_report_has_one_accuracy_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "eval_seeds": 3 }));
    let out = dir.path().join("o");
    let args = |cmd| [cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    ok(&args("synth"));
    let d = ok(&args("distill"));
    assert_eq!(d["distilled"], 10);
    assert_eq!(d["raw_instances"], 40);
    let report = ok(&args("eval"));
    let accs: Vec<f64> = report["accuracies"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
    assert_eq!(accs.len(), 3);
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((report["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((report["std"].as_f64().unwrap() - std).abs() < 1e-12);
    assert_eq!(ok(&args("eval")), report);
}

#[test]
fn single_cell_sweep_reproduces_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "sweep": { "lambdas": [0.1] } }));
    let out = dir.path().join("o");
    let args = |cmd| [cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    ok(&args("synth"));
    ok(&args("distill"));
    let report = ok(&args("eval"));
    ok(&args("sweep"));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][4], "ok");
    let mean: f64 = rows[0][6].parse().unwrap();
    assert_eq!(mean, report["mean"].as_f64().unwrap());
}

#[test]
fn lambda_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "sweep": { "lambdas": [0.01, 0.05, 0.1, 0.2, 0.5, 0.1] } }));
    let out = dir.path().join("o");
    let args = |cmd| [cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    ok(&args("synth"));
    ok(&args("sweep"));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let lambdas: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(lambdas, ["0.01", "0.05", "0.1", "0.2", "0.5"]);
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "no_such_field": 1 }"#).unwrap();
    let res = gvd(&["synth", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_json(&res)["error"], "config");

    let cfg = small_config(dir.path(), json!({ "distill": { "ipc": 0 } }));
    let res = gvd(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    // Missing inputs from an earlier stage are a config problem too.
    let res = gvd(&["distill", "--out", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(error_json(&res)["message"].as_str().unwrap().contains("synth"));
}

#[test]
fn diverging_training_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "student": { "epochs": 40, "lr": 1e12 } }));
    let out = dir.path().join("o");
    let args = |cmd| [cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    ok(&args("synth"));
    ok(&args("distill"));
    let res = gvd(&args("eval"));
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(error_json(&res)["error"], "training");

    // The sweep records the failure and keeps going.
    ok(&args("sweep"));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.matches("failed").count(), 2);
}
