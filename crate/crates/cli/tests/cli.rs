use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn model(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

fn mfc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfc"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("MFC_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_riccati_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = model("m1.toml");
    let o = mfc(
        dir.path(),
        &["solve", "--model", m1.to_str().unwrap(), "--steps", "200"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let mut rows = csv::Reader::from_path(dir.path().join("riccati.csv")).unwrap();
    let headers = rows.headers().unwrap().clone();
    let lambda = headers
        .iter()
        .position(|h| h.starts_with("Lambda"))
        .expect("Lambda column");
    let first = rows.records().next().unwrap().unwrap();
    assert!((first[lambda].parse::<f64>().unwrap() + 0.25).abs() < 1e-9);

    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["run"]["command"], "solve");
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["model_toml"]
        .as_str()
        .unwrap()
        .contains("R = -0.5"));
    assert!(json(dir.path().join("condition_h.json"))["holds"]
        .as_bool()
        .unwrap());
}

#[test]
fn condition_h_failure_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = model("bad_r.toml");
    let o = mfc(dir.path(), &["solve", "--model", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("R"));

    // Forcing past the check reaches the solver, which rejects the entropy term.
    let o = mfc(
        dir.path(),
        &["solve", "--model", bad.to_str().unwrap(), "--force"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_model_file_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfc(dir.path(), &["solve", "--model", "/nonexistent/model.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn perturbed_value_function_violates_hjb() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = model("m1.toml");
    let m1 = m1.to_str().unwrap();
    assert_eq!(code(&mfc(dir.path(), &["hjb-check", "--model", m1])), 0);
    let o = mfc(
        dir.path(),
        &["hjb-check", "--model", m1, "--perturb-lambda", "0.1"],
    );
    assert_eq!(code(&o), 4);
    assert_eq!(json(dir.path().join("manifest.json"))["exit_code"], 4);
}

#[test]
fn rerun_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let m2 = model("m2.toml");
    let o = mfc(
        &a,
        &[
            "simulate",
            "--model",
            m2.to_str().unwrap(),
            "--particles",
            "200",
            "--sim-steps",
            "40",
            "--seed",
            "3",
            "--dynamics",
            "relaxed",
        ],
    );
    assert_eq!(code(&o), 0);
    let manifest = a.join("manifest.json");
    assert_eq!(
        code(&mfc(
            &b,
            &["rerun", manifest.to_str().unwrap(), "--threads", "2"]
        )),
        0
    );
    for name in ["trajectory.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn outer_iteration_recovers_optimal_policy() {
    let dir = tempfile::tempdir().unwrap();
    let m2 = model("m2.toml");
    let o = mfc(
        dir.path(),
        &[
            "fixed-point",
            "--outer",
            "--model",
            m2.to_str().unwrap(),
            "--steps",
            "200",
            "--tol",
            "1e-8",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("outer_trace.csv").exists());
    assert!(dir.path().join("policy.csv").exists());
}

#[test]
fn help_lists_every_command() {
    let o = Command::new(env!("CARGO_BIN_EXE_mfc"))
        .arg("--help")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "solve",
        "policy",
        "simulate",
        "fixed-point",
        "convergence",
        "improve",
        "hjb-check",
        "rerun",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
