use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obstacle-control"))
        .args(args)
        .env_remove("OBSTACLE_CONTROL_OUT")
        .output()
        .expect("spawn cli")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("read json")).expect("parse json")
}

fn surface_values(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn validate_accepts_the_bundled_configs() {
    for name in ["standard.toml", "trivial-zero.toml", "tree-oracle.toml"] {
        let out = cli(&["validate", "--config", config(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn trivial_zero_run_writes_zero_surfaces_and_a_complete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--config", config("trivial-zero.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let values = surface_values(&dir.path().join("trivial-zero/surface.csv"));
    assert!(!values.is_empty() && values.iter().all(|&v| v == 0.0));
    let manifest = json(&dir.path().join("manifest.json"));
    let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    for file in ["config.toml", "trivial-zero/surface.csv", "trivial-zero/report.json", "summary.json"] {
        assert!(listed.contains(&file), "{file} missing from manifest");
    }
    assert_eq!(json(&dir.path().join("summary.json"))["passed"], Value::Bool(true));
}

#[test]
fn incompatible_terminal_value_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "run",
        "--config",
        config("incompatible-obstacle.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("obstacle compatibility"));
    let report = json(&dir.path().join("error.json"));
    assert_eq!(report["error"], "config");
    assert_eq!(report["exit_code"], 2);
}

#[test]
fn tree_oracle_table_matches_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "run",
        "--config",
        config("tree-oracle.toml").to_str().unwrap(),
        "--suite",
        "tree-oracle",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("tree-oracle/table.csv")).unwrap();
    let gaps: Vec<f64> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(gaps.len() >= 6);
    assert!(gaps.iter().all(|&g| g < 1e-10), "{gaps:?}");
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--suite", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_directory_defaults_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_obstacle-control"))
        .args(["run", "--config", config("trivial-zero.toml").to_str().unwrap(), "--seed-override", "9"])
        .env("OBSTACLE_CONTROL_OUT", dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(json(&dir.path().join("manifest.json"))["seed"], 9);
}

#[test]
fn compare_reports_node_differences() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    std::fs::write(&a, "t,x0,W\n0,0,1.5\n0,1,2\n1,0,0\n1,1,-1\n").unwrap();
    std::fs::write(&b, "t,x0,W\n0,0,2.5\n0,1,3\n1,0,1\n1,1,0\n").unwrap();
    std::fs::write(&c, "t,x0,W\n0,0,1\n0,2,1\n1,0,1\n1,2,1\n").unwrap();
    let diff = |x: &Path, y: &Path| {
        let out = cli(&["compare", x.to_str().unwrap(), y.to_str().unwrap()]);
        (out.status.code(), serde_json::from_slice::<Value>(&out.stdout).ok())
    };
    let (code, same) = diff(&a, &a);
    assert_eq!(code, Some(0));
    assert_eq!(same.unwrap()["diff"]["max_abs"], 0.0);
    let (code, shifted) = diff(&a, &b);
    assert_eq!(code, Some(0));
    let shifted = shifted.unwrap();
    assert_eq!(shifted["diff"]["max_abs"], 1.0);
    assert_eq!(shifted["diff"]["mean_abs"], 1.0);
    assert_eq!(diff(&a, &c).0, Some(2));
}
