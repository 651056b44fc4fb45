use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bepath(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bepath"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bepath(dir, args);
    assert!(
        out.status.success(),
        "bepath {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    bepath(dir, args).status.code().expect("exited normally")
}

/// Generates, preprocesses and splits a small corpus in `dir`.
fn prepare(dir: &Path, patients: &str) {
    ok(dir, &["--seed", "4", "generate", "--patients", patients, "--out", "raw.jsonl"]);
    ok(
        dir,
        &["preprocess", "--corpus", "raw.jsonl", "--out", "corpus.jsonl", "--rejects", "rejects.json"],
    );
    ok(dir, &["split", "--corpus", "corpus.jsonl"]);
}

#[test]
fn baseline_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir, "60");
    assert_eq!(fs::read_to_string(dir.join("rejects.json")).unwrap().trim(), "[]");

    let stats = ok(dir, &["stats", "--labels", "labels.csv"]);
    assert!(stats.starts_with("Tokenizer,Text,Min,25p,50p,75p,Max,%>512\n"));
    assert_eq!(stats.lines().count(), 3);
    assert!(fs::read_to_string(dir.join("labels.csv")).unwrap().starts_with("label,count,percent\n"));

    ok(dir, &["--seed", "0", "train", "--task", "binary", "--field", "full"]);
    ok(dir, &["evaluate", "--results", "run/results.json"]);
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/results.json")).unwrap()).unwrap();
    assert_eq!(results["trials"].as_array().unwrap().len(), 4);
    assert!(results["validation"]["f1"].as_f64().unwrap() > 0.5);

    let table = ok(dir, &["report", "--results", "run/results.json", "--with-comparator", "--expanded"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "Report Type,Model,Dataset,Recall,Precision,Accuracy,F1-Score,AU-ROC,F2-Beta"
    );
    assert!(lines[1].starts_with("Sub-Section,Rule-Based (external reference),Development,"));
    assert!(lines[3].starts_with("Full,Baseline (linear),Development,"));
    assert_eq!(lines.len(), 5);

    let preds = ok(dir, &["predict", "--results", "run/results.json", "--corpus", "corpus.jsonl"]);
    let corpus_lines = fs::read_to_string(dir.join("corpus.jsonl")).unwrap().lines().count();
    assert_eq!(preds.lines().count(), corpus_lines);
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert_eq!(first["probs"].as_array().unwrap().len(), 2);
}

#[test]
fn dry_run_lists_transformer_grid_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["train", "--dry-run", "--models", "clinical-bert,clinical-bigbird"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 24);
    assert_eq!(lines.iter().filter(|l| l.starts_with("clinical_bert-")).count(), 6);
    assert_eq!(lines.iter().filter(|l| l.starts_with("clinical_bigbird-")).count(), 18);
    assert!(lines[0].starts_with("clinical_bert-t512-lr2e-5-s0\t"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn worker_backend_through_stub_process() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir, "40");
    let exe = env!("CARGO_BIN_EXE_bepath");
    fs::write(
        dir.join("worker.toml"),
        format!("[harness]\nbackend = \"worker\"\nparallelism = 2\n\n[worker]\ncommand = [{exe:?}, \"stub-worker\"]\n"),
    )
    .unwrap();
    ok(dir, &["--config", "worker.toml", "train", "--models", "clinical-bert", "--task", "binary"]);
    ok(dir, &["--config", "worker.toml", "evaluate", "--results", "run/results.json"]);
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/results.json")).unwrap()).unwrap();
    assert_eq!(results["backend"], "worker");
    assert_eq!(results["trials"].as_array().unwrap().len(), 6);
    assert!(results["validation"].is_object());
    assert!(dir.join("run/worker_checkpoints").is_dir());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(dir, &["--help"]), 0);
    assert_eq!(code(dir, &["--version"]), 0);
    assert_eq!(code(dir, &["train", "--no-such-flag"]), 1);
    assert_eq!(code(dir, &["split", "--corpus", "missing.jsonl"]), 2);
    fs::write(dir.join("bad.toml"), "[split]\nval_fraction = 2.0\n").unwrap();
    assert_eq!(code(dir, &["--config", "bad.toml", "config"]), 1);
    assert_eq!(code(dir, &["evaluate", "--results", "missing.json"]), 2);

    prepare(dir, "30");
    assert_eq!(code(dir, &["split", "--corpus", "corpus.jsonl", "--val-fraction", "1.5"]), 1);
    fs::write(
        dir.join("broken.toml"),
        "[harness]\nbackend = \"worker\"\n\n[worker]\ncommand = [\"/nonexistent/worker\"]\n",
    )
    .unwrap();
    assert_eq!(code(dir, &["--config", "broken.toml", "train", "--models", "clinical-bert"]), 3);
}

#[test]
fn config_defaults_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(tmp.path(), &["config", "--print-defaults"]);
    fs::write(tmp.path().join("c.toml"), &text).unwrap();
    assert_eq!(ok(tmp.path(), &["--config", "c.toml", "config"]), text);
}
