// Each test binary uses a different subset of these helpers.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn uad() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_uad"));
    c.env_remove("UAD_OUT_DIR").env_remove("UAD_VLM_ENDPOINT").env_remove("UAD_LOG");
    c
}

/// Runs `uad args…`, asserting success, and returns the stdout summary.
pub fn ok(args: &[&str]) -> Value {
    let out = uad().args(args).output().unwrap();
    assert_success(&out, args);
    serde_json::from_slice(&out.stdout).unwrap()
}

pub fn assert_success(out: &Output, args: &[&str]) {
    assert!(out.status.success(), "uad {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every stderr line parsed as JSON; panics on a non-JSON line.
pub fn events(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stderr.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("non-JSON stderr line {l:?}: {e}")))
        .collect()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth → fuse → cluster for each fixture; returns the object directories.
pub fn stage(root: &Path, objects: &[&str], seed: &str) -> Vec<PathBuf> {
    let mut args = vec!["synth", "--seed", seed, "--out-dir", s(root)];
    for o in objects {
        args.extend(["--object", o]);
    }
    let summary = ok(&args);
    let scenes: Vec<PathBuf> = summary["scenes"].as_array().unwrap().iter().map(|v| PathBuf::from(v.as_str().unwrap())).collect();
    assert_eq!(scenes.len(), objects.len());
    scenes
        .iter()
        .map(|scene| {
            let dir = scene.parent().unwrap().to_path_buf();
            ok(&["fuse", "--seed", seed, "--scene", s(scene), "--out-dir", s(&dir)]);
            ok(&["cluster", "--seed", seed, "--out-dir", s(&dir)]);
            dir
        })
        .collect()
}

/// annotate with the per-object mock fixtures written by `synth`.
pub fn annotate_mock(objects: &[PathBuf], out: &Path, seed: &str) -> Value {
    let mut args: Vec<String> = vec!["annotate".into(), "--seed".into(), seed.into(), "--out-dir".into(), s(out).into()];
    for o in objects {
        args.extend(["--input".into(), s(o).into(), "--mock-fixture".into(), s(&o.join("vlm_fixture.json")).into()]);
    }
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

/// Config file with a small decoder so training stays cheap in tests.
pub fn small_decoder_config(dir: &Path, plan: &[usize]) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::json!({ "train": { "layer_plan": plan } }).to_string()).unwrap();
    p
}
