use std::path::Path;
use std::process::Command;

use bsdelab::manifest::Manifest;
use bsdelab::{preset, run, Pipeline};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bsdelab"))
}

fn small_config(dir: &Path, pipeline: Pipeline) -> std::path::PathBuf {
    let mut config = preset("paper-xi1-q3").unwrap();
    config.mc.n_paths = 2000;
    config.pipeline = pipeline;
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn simulate_writes_paths_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), Pipeline::Simulate);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .env_remove("BSDELAB_OUT")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(header(&out.join("paths.csv")), "path_id,node_index,t,x_1,exited_flag,exit_time,exit_sentinel_flag");
    assert_eq!(header(&out.join("exit_cdf.csv")), "s,probability,stderr");
    let manifest = Manifest::read(&out.join("manifest.json")).unwrap();
    let names: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    assert!(names.contains(&"paths.csv"));
    assert!(names.windows(2).all(|w| w[0] < w[1]));
    assert!(manifest.files.iter().all(|f| f.sha256.len() == 64));
}

#[test]
fn env_var_overrides_out_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), Pipeline::Simulate);
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("flag"))
        .env("BSDELAB_OUT", tmp.path().join("env"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(tmp.path().join("env/manifest.json").exists());
    assert!(!tmp.path().join("flag").exists());
}

#[test]
fn malformed_config_exits_with_two_and_position() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{\n  \"name\": \"bad\",\n  \"model\": [1, 2,\n}\n").unwrap();
    let out = bin().args(["solve", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_preset_exits_with_two() {
    let out = bin().args(["solve", "--preset", "nonexistent"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paper-xi1-q3"));
}

#[test]
fn invalid_model_is_a_config_error() {
    let mut config = preset("paper-xi1-q3").unwrap();
    config.driver.q = 1.0;
    let tmp = tempfile::tempdir().unwrap();
    let err = run(&config, tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn solve_artifacts_have_documented_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = preset("paper-xi1-q3").unwrap();
    config.mc.n_paths = 3000;
    config.terminal.ladder = vec![1.0, 2.0, 4.0];
    config.pipeline = Pipeline::Solve;
    let outcome = run(&config, tmp.path()).unwrap();
    assert_eq!(outcome.status(), 0);
    assert_eq!(header(&tmp.path().join("ladder.csv")), "k,y0,y0_stderr,status");
    for k in [1, 2, 4] {
        assert!(tmp.path().join(format!("solution_k{k}.csv")).exists());
    }
    assert!(outcome.check("ladder_monotone").unwrap().passed);
}

#[test]
fn runs_with_equal_config_have_equal_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = preset("moving-domain-density").unwrap();
    config.mc.n_paths = 5000;
    config.pipeline = Pipeline::Simulate;
    let a = run(&config, &tmp.path().join("a")).unwrap().manifest;
    let b = run(&config, &tmp.path().join("b")).unwrap().manifest;
    assert_eq!(a, b);
    config.mc.seed += 1;
    let c = run(&config, &tmp.path().join("c")).unwrap().manifest;
    assert_ne!(a.files, c.files);
}
