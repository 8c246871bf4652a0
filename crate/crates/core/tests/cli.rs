use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tweedie-spatial")).current_dir(cwd).args(args).output().unwrap()
}

fn simulate(cwd: &Path) {
    let out = run(cwd, &["simulate", "--fixture", "counties", "--pattern", "hotspot", "--n", "400", "--out-dir", "sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const DATA: [&str; 4] = ["--obs", "sim/data/obs.csv", "--edges", "sim/data/edges.csv"];

#[test]
fn fit_writes_effects_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = run(dir.path(), &[&["fit"][..], &DATA, &["--lambda1", "0.1", "--lambda2", "1", "--out-dir", "o"]].concat());
    assert!(out.status.success());
    let fit = fs::read_to_string(dir.path().join("o/fits/fit_gl.csv")).unwrap();
    assert_eq!(fit.lines().count(), 9);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "fit");
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let missing = run(dir.path(), &["fit", "--obs", "nope.csv", "--edges", "sim/data/edges.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_p = run(dir.path(), &[&["fit"][..], &DATA, &["--p", "2.5"]].concat());
    assert_eq!(bad_p.status.code(), Some(2));
    fs::write(dir.path().join("neg.csv"), "location_label,y,lp_mean,phi,weight\nHartford,-1,0,1,1\n").unwrap();
    let neg = run(dir.path(), &["fit", "--obs", "neg.csv", "--edges", "sim/data/edges.csv"]);
    assert_eq!(neg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&neg.stderr).contains("neg.csv:2"));
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    fs::write(dir.path().join("huge.csv"), "location_label,y,lp_mean,phi,weight\nHartford,1,2000,1,1\n").unwrap();
    let out = run(dir.path(), &["fit", "--obs", "huge.csv", "--edges", "sim/data/edges.csv", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    fs::write(dir.path().join("run.conf"), "# shared settings\nlambda1 = 0.5\nlambda2 = 2\nout-dir = from_config\n").unwrap();
    let out = run(dir.path(), &[&["--config", "run.conf", "fit"][..], &DATA, &["--lambda1", "0.25"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("from_config/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["details"]["lambda1"], 0.25);
    assert_eq!(meta["details"]["lambda2"], 2.0);
}
