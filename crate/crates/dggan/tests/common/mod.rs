//! Helpers for driving the built binary.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use dggan_core::search::CandidateRecord;

/// Small two-resolution search that finishes in about a minute.
pub const TOY: &str = r#"{
    "d0": 8, "target_resolution": 16, "k": 2, "p": 1.0, "max_layers": 2, "iters": 200,
    "latent_dim": 8, "base_channels": 8, "min_stage_channels": 4,
    "filter_sizes": [3], "filter_counts": [4, 8], "batch_size": 8, "n_samples": 128,
    "dataset_count": 128, "dataset_resolution": 16, "final_multiplier": 1
}"#;

pub fn dggan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dggan")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = dggan(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn fails(args: &[&str]) -> String {
    let out = dggan(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

pub fn masked(ledger: &[CandidateRecord]) -> Vec<CandidateRecord> {
    ledger.iter().map(|r| CandidateRecord { wallclock_s: 0.0, ..r.clone() }).collect()
}

/// Starts a search and kills it once the ledger has `lines` lines.
pub fn kill_search_after(cfg: &Path, out: &Path, workers: usize, lines: usize) {
    let mut child: Child = Command::new(env!("CARGO_BIN_EXE_dggan"))
        .args(["search", "--config", s(cfg), "--out", s(out), "--workers", &workers.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let lpath = out.join("ledger.jsonl");
    let count = || fs::read_to_string(&lpath).map(|t| t.lines().count()).unwrap_or(0);
    while count() < lines {
        assert!(child.try_wait().unwrap().is_none(), "search finished before it could be interrupted");
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
}
