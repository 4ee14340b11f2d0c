use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldcone::reduction::{crafted_fixture, CaseTag};
use serde_json::Value;

fn ldcone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldcone"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_with_schema_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fd.csv");
    let o = ldcone(&[
        "run", "tight_fd", "--d", "3", "--kmin", "10", "--kmax", "1000", "--points", "5", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# ldcone tight_fd schema v1"));
    assert!(lines.next().unwrap().contains(','));
    assert_eq!(lines.count(), 5);
}

#[test]
fn flags_override_config_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# grid\npoints = 9\nkmin=10\nkmax=100\n").unwrap();
    let out = dir.path().join("t.csv");
    let o = ldcone(&[
        "run", "tight_fd", "--config", path_str(&cfg), "--set", "points=7", "--points", "4", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2 + 4);

    let o = ldcone(&["run", "tight_fd", "--config", path_str(&cfg), "--set", "points=7", "--out", path_str(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2 + 7);
}

#[test]
fn bad_input_exits_with_two() {
    assert_eq!(ldcone(&["run", "no_such_experiment"]).status.code(), Some(2));
    assert_eq!(ldcone(&["run", "tight_fd", "--set", "points"]).status.code(), Some(2));
    assert_eq!(
        ldcone(&["certify", "--problem", "/nonexistent/problem.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn certify_accepts_crafted_chain() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    let fx = crafted_fixture(CaseTag::Entropic, 2, 11);
    fs::write(&problem, serde_json::to_string(&fx.to_file()).unwrap()).unwrap();
    let out = dir.path().join("cert.json");
    let o = ldcone(&["certify", "--problem", path_str(&problem), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["verification"]["passed"], Value::Bool(true));
    assert_eq!(v["certificate"]["case_tag"], Value::String("Entropic".into()));
    assert_eq!(v["certificate"]["d_pps"], Value::from(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("chain verified"));
}

#[test]
fn certify_rejects_flipped_exposing_vector() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    let mut file = crafted_fixture(CaseTag::FsHolder, 3, 12).to_file();
    file.chain[0] = file.chain[0].scale(-1.0);
    fs::write(&problem, serde_json::to_string(&file).unwrap()).unwrap();
    let o = ldcone(&["certify", "--problem", path_str(&problem)]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verification"]["passed"], Value::Bool(false));
    assert!(v["certificate"].is_null());
    assert!(String::from_utf8_lossy(&o.stderr).contains("chain rejected at step 1"));
}

#[test]
fn gamma_reports_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let face = dir.path().join("face.json");
    fs::write(&face, r#"{"kind":"F_d","n":{"x":0,"y":1,"Z":[[0,0],[0,0]]}}"#).unwrap();
    let o = ldcone(&[
        "gamma", "--face", path_str(&face), "--g", "gd", "--eta", "1", "--samples", "500",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"], Value::from(500));
    assert!(v["estimate"].is_object());
}
