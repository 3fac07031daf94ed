//! Exit codes, error reporting and environment overrides.

mod common;

use common::*;

#[test]
fn unknown_flag_exits_2() {
    for args in
        [&["fuse", "--bogus"][..], &["distill", "--dataset", "x", "--epochs", "ten"], &["pack-obs", "--scene", "x", "--bounds", "1,2,3"]]
    {
        let out = uad().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn failure_exits_1_with_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uad().args(["fuse", "--scene", s(&tmp.path().join("missing.json")), "--out-dir", s(tmp.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let last = events(&out).pop().unwrap();
    assert_eq!(last["event"], "error");
    assert_eq!(last["stage"], "fuse");
    assert!(last["message"].as_str().unwrap().contains("missing.json"));
    assert!(out.stdout.is_empty());
}

#[test]
fn annotate_without_a_vlm_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uad().args(["annotate", "--input", s(tmp.path()), "--out-dir", s(tmp.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(events(&out).pop().unwrap()["stage"], "annotate");
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-env");
    let out = uad().env("UAD_OUT_DIR", &target).args(["synth", "--object", "slab"]).output().unwrap();
    assert_success(&out, &["synth"]);
    assert!(target.join("slab/scene.json").exists());

    // the flag beats the variable
    let flag = tmp.path().join("from-flag");
    let out = uad().env("UAD_OUT_DIR", &target).args(["synth", "--object", "slab", "--out-dir", s(&flag)]).output().unwrap();
    assert_success(&out, &["synth"]);
    assert!(flag.join("slab/scene.json").exists());
}

#[test]
fn progress_is_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uad().env("UAD_LOG", "debug").args(["synth", "--object", "slab", "--out-dir", s(tmp.path())]).output().unwrap();
    assert_success(&out, &["synth"]);
    let ev = events(&out);
    assert!(ev.iter().any(|e| e["stage"] == "synth"));
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = uad().args(["synth", "--config", s(&cfg), "--object", "slab", "--out-dir", s(tmp.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(events(&out).pop().unwrap()["event"], "error");
}
