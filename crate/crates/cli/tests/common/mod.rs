//! Helpers for driving the `sembed` binary from tests.
#![allow(dead_code)]

use std::ffi::OsStr;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sembed_core::static_embed::fnv1a64;

pub fn small_conf() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.conf")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the binary with `SEMBED_SEED` cleared unless `env_seed` is given.
pub fn sembed_env<S: AsRef<OsStr>>(args: &[S], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sembed"));
    cmd.args(args).env_remove("SEMBED_SEED");
    if let Some(s) = env_seed {
        cmd.env("SEMBED_SEED", s);
    }
    cmd.output().expect("binary runs")
}

pub fn sembed<S: AsRef<OsStr>>(args: &[S]) -> Output {
    sembed_env(args, None)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Asserts success and returns stdout.
pub fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Writes the small synthetic corpus into `dir`.
pub fn synth_into(dir: &Path, seed: u64) {
    ok(sembed(&["synth", "--config", p(&small_conf()), "--seed", &seed.to_string(), "--out-dir", p(dir)]));
}

/// Trains a small checkpoint with the given setup and returns its path.
pub fn train_into(dir: &Path, setup: &str, out: &str, seed: u64) -> PathBuf {
    let out = dir.join(out);
    let mut args = vec![
        "train".to_string(),
        "--setup".into(),
        setup.into(),
        "--config".into(),
        p(&small_conf()).into(),
        "--seed".into(),
        seed.to_string(),
        "--out".into(),
        p(&out).into(),
    ];
    if setup != "sts" {
        args.extend(["--nli".into(), p(&dir.join("nli.jsonl")).into()]);
    }
    if setup != "nli" {
        args.extend(["--sts".into(), p(&dir.join("sts.jsonl")).into()]);
    }
    ok(sembed(&args));
    out
}

/// Deterministic 4-d vectors for every word of the corpus files in `dir`,
/// derived from each word's hash.
pub fn hashed_wordvecs(dir: &Path) -> PathBuf {
    let mut words = std::collections::BTreeSet::new();
    for name in ["nli.jsonl", "sts.jsonl", "sts_test.jsonl", "cls_train.jsonl", "cls_val.jsonl", "cls_test.jsonl"] {
        let text = std::fs::read_to_string(dir.join(name)).expect("synth output");
        for value in text.split('"') {
            if value.chars().all(|c| c.is_ascii_lowercase() || c == ' ') {
                words.extend(value.split_whitespace().map(str::to_string));
            }
        }
    }
    let mut out = format!("{} 4\n", words.len());
    for w in &words {
        let h = fnv1a64(w.as_bytes());
        out.push_str(w);
        for j in 0..4 {
            let byte = (h >> (8 * j)) & 0xff;
            write!(out, " {:.4}", byte as f64 / 255.0 - 0.5).unwrap();
        }
        out.push('\n');
    }
    let path = dir.join("hashed_vectors.txt");
    std::fs::write(&path, out).unwrap();
    path
}
