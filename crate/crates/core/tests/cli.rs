//! Command-line behaviour: outputs, exit codes and error paths.

use std::fs;
use std::process::{Command, Output};

fn curio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curio")).args(args).output().unwrap()
}

#[test]
fn gen_dataset_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sets/novel.json");
    let out = curio(&["gen-dataset", "--schema", "novel", "--count", "12", "--seed", "4", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = curio_core::Dataset::load(&path).unwrap();
    assert_eq!(ds.scenes.len(), 12);
    assert_eq!(ds.schema.name, "novel");
}

#[test]
fn eval_writes_summary_curves_and_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.toml");
    fs::write(&cfg, "[eval]\nbudget = 4\nfolds = 1\nfold_size = 5\nrepeats = 1\n[data]\nsize = 60\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = curio(&["eval", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--policy", "random,entropy"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("policy,split,row,R@10,R@20,R@50,AUC\n"));
    assert_eq!(summary.lines().filter(|l| l.contains(",mean,")).count(), 2);
    assert!(out_dir.join("curves/random_standard-test.csv").exists());
    let t = fs::read_to_string(out_dir.join("transcripts/entropy_standard-test_r0f0.txt")).unwrap();
    assert!(t.lines().any(|l| l.starts_with("# image 1 ")));
    assert!(t.lines().filter(|l| !l.starts_with('#')).all(|l| l.split('\t').count() >= 3));
}

#[test]
fn malformed_output_dir_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "not a directory").unwrap();
    let out = curio(&["grad-check", "--out", file.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a directory"));
}

#[test]
fn learned_policy_requires_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = curio(&["eval", "--out", dir.path().to_str().unwrap(), "--policy", "learned"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn grad_check_reports_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grad.toml");
    fs::write(&cfg, "seeds = 2\n").unwrap();
    let out = curio(&["grad-check", "--seed", "3", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 6);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}
