use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmt"))
        .args(args)
        .env_remove("GMT_SEED")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn line_scene(dir: &Path) {
    let out = gmt(&["gen", "line-scene", "--h", "0.00390625", "--out", p(dir)]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn generated_plane_reports_its_regularity() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("plane");
    let out = gmt(&["gen", "plane", "--n", "2", "--k", "1", "--h", "0.0078125", "--out", p(&stem)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["result"]["points"], 128);
    assert!(v["result"]["regularity_constant"].as_f64().unwrap() >= 1.0);
    assert_eq!(v["config"]["kind"], "plane");
    assert!(stem.with_extension("csv").exists() && stem.with_extension("json").exists());
}

#[test]
fn glem_passes_on_a_plane_and_rejects_a_bad_exponent_pair() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("plane");
    gmt(&["gen", "plane", "--h", "0.0078125", "--out", p(&stem)]);
    let ok = gmt(&["glem", "--input", p(&stem), "--p", "2", "--q", "2"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["verdict"], "pass");
    let bad = gmt(&["glem", "--input", p(&stem), "--p", "1", "--q", "inf", "--d", "1"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("1/q - 1/p + 1/d"));
}

#[test]
fn run_bp2_with_a_trivial_coronization_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    line_scene(&scene);
    let run = dir.path().join("run");
    let out = gmt(&[
        "run",
        "bp2",
        "--input",
        p(&scene.join("set")),
        "--catalog",
        p(&scene.join("catalog_0")),
        "--trivial",
        "0",
        "--out",
        p(&run),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["bp2.json", "corona.json", "tree.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = gmt(&["report", p(&run)]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(json(&report)["verdict"], "pass");
}

#[test]
fn reports_are_reproducible_and_follow_the_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let report = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gmt"));
        cmd.args(["parabolic", "observe", "--resolution", "32", "--seed", "7", "--report", p(&report)]);
        match seed {
            Some(s) => cmd.env("GMT_SEED", s),
            None => cmd.env_remove("GMT_SEED"),
        };
        assert_eq!(cmd.output().unwrap().status.code(), Some(0));
        std::fs::read(report).unwrap()
    };
    let a = run("a.json", None);
    let b = run("b.json", None);
    assert_eq!(a, b);
    let c = run("c.json", Some("8"));
    let v: Value = serde_json::from_slice(&c).unwrap();
    assert_eq!(v["config"]["seed"], 8);
    assert_ne!(a, c);
}

#[test]
fn malformed_seed_override_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmt"))
        .args(["gen", "plane", "--out", p(&dir.path().join("x"))])
        .env("GMT_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lewis_silver_graph_is_generated_as_a_parabolic_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ls");
    let out = gmt(&["gen", "lewis-silver", "--resolution", "8", "--out", p(&stem)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["metric"], "parabolic");
}

#[test]
fn missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmt(&["cubes", "--input", p(&dir.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(3));
}
