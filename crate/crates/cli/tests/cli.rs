//! Command-line contract: reports, manifests, replay and exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drma_core::rng;
use rand::Rng;
use serde_json::Value;

fn drma(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_drma"));
    cmd.current_dir(dir).env_remove("DRMA_SEED");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("drma binary runs")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

/// Linear data with a text label column: y = x1 − x2 + noise.
fn linear_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut r = rng::stream(seed, &[]);
    let mut text = String::from("x1,x2,x3,label,y\n");
    for i in 0..n {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = 1.0 + x[0] - x[1] + 0.5 * r.random_range(-1.0..1.0);
        writeln!(text, "{},{},{},row{i},{y}", x[0], x[1], x[2]).unwrap();
    }
    let path = dir.join("linear.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn test_reports_match_schema_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_csv(dir.path(), 80, 1);
    let report_schema = schema("report.schema.json");
    let manifest_schema = schema("manifest.schema.json");
    for method in ["dee-sir", "dee-save", "mave", "zheng"] {
        let output = format!("{method}.json");
        let out = run(drma(dir.path())
            .args(["test", "--response", "y", "--exclude", "label", "--method", method])
            .args(["--bootstrap", "20", "--seed", "3", "--output", &output, "--data"])
            .arg(&data));
        let report = stdout_json(&out);
        assert_valid(&report_schema, &report);
        assert_eq!(report["n"], 80);
        assert_eq!(report["p"], 3);
        assert_eq!(report["predictors"], serde_json::json!(["x1", "x2", "x3"]));
        assert_eq!(report["bootstrap"]["t_star"].as_array().unwrap().len(), 20);
        assert_eq!(report["sdr"].is_null(), method == "zheng");
        assert_eq!(std::fs::read(dir.path().join(&output)).unwrap(), out.stdout);

        let manifest: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{output}.manifest.json"))).unwrap())
                .unwrap();
        assert_valid(&manifest_schema, &manifest);
        assert_eq!(manifest["invocation"]["method"], method);
        assert_eq!(manifest["stdout_sha256"], manifest["outputs"][0]["sha256"]);
    }
}

#[test]
fn linear_null_is_not_rejected_and_departure_is() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_csv(dir.path(), 150, 2);
    let report = stdout_json(&run(drma(dir.path())
        .args(["test", "--response", "y", "--exclude", "label", "--data"])
        .arg(&data)));
    assert_eq!(report["result"]["q_hat"], 1);
    assert!(report["result"]["p_value"].as_f64().unwrap() > 0.01);

    let mut r = rng::stream(4, &[]);
    let mut text = String::from("a,b,y\n");
    for _ in 0..150 {
        let (a, b): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        writeln!(text, "{a},{b},{}", a + 2.0 * a * a + 0.3 * r.random_range(-1.0..1.0)).unwrap();
    }
    std::fs::write(dir.path().join("quad.csv"), text).unwrap();
    let report = stdout_json(&run(drma(dir.path()).args([
        "test",
        "--response",
        "y",
        "--data",
        "quad.csv",
    ])));
    assert_eq!(report["reject"], true);
    assert!(report["result"]["p_value"].as_f64().unwrap() < 1e-6);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_csv(dir.path(), 60, 3);
    let base = ["test", "--response", "y", "--exclude", "label", "--bootstrap", "15"];
    let from_env = run(drma(dir.path())
        .env("DRMA_SEED", "9")
        .args(base)
        .arg("--data")
        .arg(&data));
    let from_flag = run(drma(dir.path()).args(base).args(["--seed", "9", "--data"]).arg(&data));
    let other = run(drma(dir.path()).args(base).args(["--seed", "10", "--data"]).arg(&data));
    let env_report = stdout_json(&from_env);
    assert_eq!(env_report["seed"], 9);
    assert_eq!(from_env.stdout, from_flag.stdout);
    assert_ne!(from_env.stdout, other.stdout);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("drma-test.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 10);
}

#[test]
fn replay_reproduces_test_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_csv(dir.path(), 60, 5);
    let out = run(drma(dir.path())
        .args([
            "test",
            "--response",
            "y",
            "--exclude",
            "label",
            "--bootstrap",
            "10",
            "--output",
            "t.json",
            "--data",
        ])
        .arg(&data));
    stdout_json(&out);
    let replayed = run(drma(dir.path()).args(["replay", "t.json.manifest.json", "--verify"]));
    assert_eq!(
        replayed.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&replayed.stderr)
    );
    assert_eq!(replayed.stdout, out.stdout);

    let sim = run(drma(dir.path()).args([
        "simulate",
        "--study",
        "H12",
        "--n",
        "40",
        "--a",
        "0,1",
        "--reps",
        "6",
        "--method",
        "dee-sir,zheng",
        "--out",
        "sim.csv",
    ]));
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    let copy = run(drma(dir.path()).args(["replay", "sim.csv.manifest.json", "--out-dir", "copy"]));
    assert_eq!(copy.status.code(), Some(0));
    let original = std::fs::read(dir.path().join("sim.csv")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("copy/sim.csv")).unwrap(), original);
    assert!(dir.path().join("copy/sim.csv.manifest.json").exists());

    let text = String::from_utf8(original).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "study,n,p,a,sigma,error_law,method,frequency,stderr,mean_q_hat,replications,seed"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("H12,40,8,0,1,normal,dee-sir,"));
    assert!(lines[4].starts_with("H12,40,8,1,1,normal,zheng,"));
}

#[test]
fn bandwidth_sweep_adds_a_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(drma(dir.path()).args([
        "simulate", "--study", "H11", "--n", "30", "--a", "0", "--reps", "4", "--sweep", "0.5,1.5", "--out", "sw.csv",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sw.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].ends_with(",seed,bandwidth_scale"));
    assert!(lines[1].ends_with(",0.5") && lines[2].ends_with(",1.5"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_csv(dir.path(), 40, 6);
    let code = |cmd: &mut Command| run(cmd).status.code();

    // Usage errors.
    assert_eq!(
        code(
            drma(dir.path())
                .args(["test", "--response", "y", "--alpha", "1.5", "--data"])
                .arg(&data)
        ),
        Some(2)
    );
    assert_eq!(
        code(
            drma(dir.path())
                .args(["test", "--response", "y", "--alpha", "0", "--data"])
                .arg(&data)
        ),
        Some(2)
    );
    assert_eq!(
        code(
            drma(dir.path())
                .args(["test", "--response", "y", "--method", "sliced", "--data"])
                .arg(&data)
        ),
        Some(2)
    );
    assert_eq!(
        code(drma(dir.path()).args(["simulate", "--study", "H11", "--a", "", "--out", "x.csv"])),
        Some(2)
    );
    assert_eq!(
        code(drma(dir.path()).args(["simulate", "--study", "H11", "--out", "x.csv"])),
        Some(2)
    );
    assert_eq!(
        code(
            drma(dir.path())
                .env("DRMA_SEED", "abc")
                .args(["test", "--response", "y", "--data"])
                .arg(&data)
        ),
        Some(2)
    );

    // Data errors.
    assert_eq!(
        code(drma(dir.path()).args(["test", "--response", "y", "--data", "missing.csv"])),
        Some(2)
    );
    assert_eq!(
        code(
            drma(dir.path())
                .args(["test", "--response", "nope", "--data"])
                .arg(&data)
        ),
        Some(2)
    );
    // The label column is text and was not excluded.
    let out = run(drma(dir.path()).args(["test", "--response", "y", "--data"]).arg(&data));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));
    assert_eq!(
        code(drma(dir.path()).args(["simulate", "--study", "study2", "--p", "8", "--a", "0", "--out", "x.csv"])),
        Some(2)
    );
    assert_eq!(
        code(drma(dir.path()).args(["realdata", "--data", "linear.csv"])),
        Some(2)
    );

    // Numerical failure: an exactly duplicated predictor.
    let mut text = String::from("a,b,y\n");
    for i in 0..30 {
        let a = (i as f64 * 0.37).sin();
        writeln!(text, "{a},{a},{}", a + (i as f64 * 1.3).cos()).unwrap();
    }
    std::fs::write(dir.path().join("dup.csv"), text).unwrap();
    let out = run(drma(dir.path()).args(["test", "--response", "y", "--data", "dup.csv"]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("null-model fit"));

    // A replay whose outputs were altered is reported with exit 1.
    stdout_json(&run(drma(dir.path())
        .args([
            "test",
            "--response",
            "y",
            "--exclude",
            "label",
            "--output",
            "r.json",
            "--data",
        ])
        .arg(&data)));
    let path = dir.path().join("r.json.manifest.json");
    let mut manifest: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["stdout_sha256"] = Value::from("f".repeat(64));
    std::fs::write(&path, manifest.to_string()).unwrap();
    assert_eq!(
        code(drma(dir.path()).args(["replay", "r.json.manifest.json", "--verify"])),
        Some(1)
    );
}
