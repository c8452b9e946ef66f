use std::path::Path;
use std::process::{Command, Output};

fn mhdci(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhdci")).args(args).current_dir(cwd).output().expect("spawn")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn decompose_skew_matrix_gives_positive_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), r#"{"matrix": [[0, 0.01, 0], [-0.01, 0, 0.02], [0, -0.02, 0]]}"#).unwrap();
    let out = mhdci(&["decompose", "m.json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lemma"], "skew");
    let c = v["coefficients"].as_array().unwrap();
    assert_eq!(c.len(), 5);
    assert!(c.iter().all(|x| x.as_f64().unwrap() > 0.0));
}

#[test]
fn precondition_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("far.json"), "[[1, 0, 0], [0, 3, 0], [0, 0, 1]]").unwrap();
    assert_eq!(mhdci(&["decompose", "far.json"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.cfg"), "n 16\n").unwrap();
    assert_eq!(mhdci(&["--config", "bad.cfg", "init", "--out", "s"], dir.path()).status.code(), Some(2));
    assert_eq!(mhdci(&["diagnose", "--state", "missing", "--out", "d"], dir.path()).status.code(), Some(2));
}

#[test]
fn coarse_step_is_a_resolution_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mhdci(&["init", "--n", "16", "--out", "s"], dir.path()).status.success());
    let out = mhdci(&["step", "--state", "s", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diagnose_bootstrap_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.cfg"), "# desk data on a small grid\nn = 16\namp = 0.2\n").unwrap();
    assert!(mhdci(&["--config", "c.cfg", "init", "--out", "s"], dir.path()).status.success());
    for out in ["d1", "d2"] {
        let o = mhdci(&["diagnose", "--state", "s", "--out", out, "--spectra"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("d1/norms.csv"), read("d2/norms.csv"));
    assert_eq!(read("d1/spectra.csv"), read("d2/spectra.csv"));
    let ledger = json(&dir.path().join("d1/ledger.json"));
    assert!(ledger["rows"].as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn mhd_run_reports_small_drift() {
    let dir = tempfile::tempdir().unwrap();
    let o = mhdci(&["mhd-run", "--n", "16", "--t-end", "0.1", "--out", "r"], dir.path());
    assert!(o.status.success());
    let b = json(&dir.path().join("r/balance.json"));
    assert!(b["energy_drift"].as_f64().unwrap().abs() < 1e-5);
    assert!(dir.path().join("r/v.tfld").exists() && dir.path().join("r/v.json").exists());
}

#[test]
fn flows_and_glue_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mhdci(&["flows", "--preset", "desk", "--out", "f"], dir.path()).status.success());
    let man = json(&dir.path().join("f/flows.json"));
    assert_eq!(man["flows"].as_array().unwrap().len(), 12);
    assert_eq!(man["overlap_points"], 0);
    assert_eq!(mhdci(&["flows", "--preset", "full", "--out", "g"], dir.path()).status.code(), Some(2));

    assert!(mhdci(&["init", "--n", "16", "--out", "s"], dir.path()).status.success());
    assert!(mhdci(&["glue", "--state", "s", "--time", "0.4", "--out", "g"], dir.path()).status.success());
    let g = json(&dir.path().join("g/glue.json"));
    assert!(g["defect_v"].as_f64().unwrap() < 1e-10);
}
