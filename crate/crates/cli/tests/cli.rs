use std::process::{Command, Output};

fn graspdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspdiff")).args(args).env_remove("GRASPDIFF_SEED").output().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(graspdiff(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = graspdiff(&["sample", "--sampler", "/nonexistent.gdw", "--cloud", "/nope.txt", "--out", out.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "runtime");
    assert!(err["message"].as_str().unwrap().contains("/nonexistent.gdw"));
}

#[test]
fn non_empty_output_directories_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let out = graspdiff(&["gen-data", "--objects", "2", "--views", "1", "--grasps-per-view", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "output-not-fresh");
}

#[test]
fn unknown_refine_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = graspdiff(&[
        "refine", "--method", "annealing", "--sampler", "s.gdw", "--evaluator", "e.gdw", "--cloud", "c.txt", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
