use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eigopt::config::RunConfig;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn eigopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigopt")).args(args).output().expect("spawn eigopt")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bundled_sphere_spectrum() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("sphere_spectrum.toml");
    let o = eigopt(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(out.path());
    let values: Vec<f64> = serde_json::from_value(s["result"]["values"].clone()).unwrap();
    assert!(values[0].abs() < 1e-8);
    for v in &values[1..4] {
        assert!((v - 2.0).abs() < 0.02, "{values:?}");
    }
    for i in 0..4 {
        let f = eigopt::io::read_field(&out.path().join(format!("eigvec_{i:03}.field"))).unwrap();
        assert_eq!(f.len(), s["mesh"]["vertices"].as_u64().unwrap() as usize);
    }
    assert!(out.path().join("spectrum.svg").exists());
}

#[test]
fn missing_mesh_is_io_error_with_path() {
    let out = tempfile::tempdir().unwrap();
    let o = eigopt(&["spectrum", "--mesh", "no/such/mesh.off", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no/such/mesh.off"), "{}", stderr(&o));
}

#[test]
fn infinite_ps_eps_gives_single_record() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("flow_noop.toml");
    let o = eigopt(&["flow", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(out.path());
    assert_eq!(s["result"]["records"], 1);
    assert_eq!(s["result"]["termination"], "palais_smale");
    let csv = std::fs::read_to_string(out.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    // same thing from the flag
    let out2 = tempfile::tempdir().unwrap();
    let o = eigopt(&["flow", "--ps-eps", "inf", "--out", out2.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary(out2.path())["result"]["records"], 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[flow]\narmijo_c = 3.0\n").unwrap();
    let o = eigopt(&["flow", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("armijo_c"));

    std::fs::write(&bad, "[flow]\nnot_a_key = 1\n").unwrap();
    let o = eigopt(&["flow", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    assert_eq!(eigopt(&["spectrum", "--bogus"]).status.code(), Some(1));
    assert_eq!(eigopt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(eigopt(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_two() {
    // Steklov needs a boundary; the icosahedron has none
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[mesh]\nshape = \"icosahedron\"\n[functional]\nkind = \"steklov\"\n").unwrap();
    let o = eigopt(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn summaries_are_byte_identical_and_embed_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("torus_subgrad.toml");
    let run = || {
        let o = eigopt(&["subgrad", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.path().join("summary.json")).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);

    let s: Value = serde_json::from_slice(&a).unwrap();
    let embedded: RunConfig = serde_json::from_value(s["config"].clone()).unwrap();
    let mut expected = RunConfig::load(&cfg).unwrap();
    expected.output.dir = out.path().to_path_buf();
    expected.propagate_seed();
    assert_eq!(embedded, expected);
    assert_eq!(s["seed"], 1);
    assert_eq!(s["result"]["criticality"]["critical"], true);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("e1,") || text.contains("e1\n"), "floats use fixed exponent form");
}

#[test]
fn flow_output_feeds_diagnose() {
    let out = tempfile::tempdir().unwrap();
    let o = eigopt(&[
        "flow",
        "--mesh",
        configs().join("../data/octahedron.off").to_str().unwrap(),
        "--refine",
        "2",
        "--sphere-project",
        "--max-steps",
        "5",
        "--dump-matrices",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(out.path());
    assert!(s["result"]["records"].as_u64().unwrap() <= 6);
    assert!(s["result"]["max_increase"].as_f64().unwrap_or(f64::NEG_INFINITY) <= 1e-10);
    for f in ["stiffness.mtx", "mass.mtx", "trace.csv", "trace_energy.svg", "final_factor.field"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let mtx = std::fs::read_to_string(out.path().join("stiffness.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real symmetric"));

    let diag = tempfile::tempdir().unwrap();
    let factor = out.path().join("final_factor.field");
    let o = eigopt(&[
        "diagnose",
        "--mesh",
        configs().join("../data/octahedron.off").to_str().unwrap(),
        "--refine",
        "2",
        "--sphere-project",
        "--factor",
        factor.to_str().unwrap(),
        "--no-svg",
        "--out",
        diag.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = summary(diag.path());
    assert_eq!(d["result"]["evaluation"]["value"], s["result"]["final_energy"]);
    assert!(d["result"]["energy_identity"]["gap"].as_f64().unwrap() < 1e-8);
    assert!(!diag.path().join("lambda_star.svg").exists());
}

#[test]
fn two_well_minmax_finds_the_barrier() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_well_minmax.toml");
    let o = eigopt(&["minmax", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--no-svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(out.path());
    let c = s["result"]["c_estimate"].as_f64().unwrap();
    let barrier = ((24.65856221474685839f64 - 22.89415922135526316) / 2.0).powi(4);
    assert!(c >= 0.9 * barrier && c <= 1.01 * barrier, "c = {c}, barrier = {barrier}");
    let cands = s["result"]["ps_candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    assert!(cands[0]["pseudo_norm"].as_f64().unwrap() < 0.05 * barrier);
}
