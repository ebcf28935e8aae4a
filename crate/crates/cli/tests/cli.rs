use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hbrate::tuning::{corollary2_certificate, RateCertificate};
use serde_json::{json, Value};

fn hbrate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbrate"))
        .args(args)
        .env_remove("HBRATE_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn load_schema(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(schema_dir().join(name)).unwrap()).unwrap()
}

fn assert_schema(name: &str, doc: &Value) {
    let certificate = load_schema("certificate.schema.json");
    let check = load_schema("check_report.schema.json");
    let registry = jsonschema::Registry::new()
        .add("json-schema:///certificate.schema.json", &certificate)
        .unwrap()
        .add("json-schema:///check_report.schema.json", &check)
        .unwrap()
        .prepare()
        .unwrap();
    let schema = load_schema(name);
    let validator = jsonschema::options()
        .with_base_uri("json-schema:///")
        .with_registry(&registry)
        .build(&schema)
        .unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}

fn geometric(rank: usize, kappa: f64) -> Vec<f64> {
    let low = kappa.sqrt();
    (0..rank).map(|i| low.powf(i as f64 / (rank - 1) as f64)).collect()
}

fn degenerate(m: usize, n: usize, seed: u64, kappa: f64) -> Value {
    json!({
        "kind": "degenerate_least_squares",
        "dims": [m, n],
        "seed": seed,
        "singular_values": geometric(m.min(n) - 1, kappa),
    })
}

#[test]
fn certify_optimal_small_kappa() {
    let out = hbrate(&["certify", "--kappa", "1e-2", "--regime", "cor1"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["tau"].as_f64().unwrap() - 0.48).abs() <= 0.01);
    assert!((v["sigma"].as_f64().unwrap() - 0.45).abs() <= 0.01);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n(1e-8) ="));
    assert_schema("certificate.schema.json", &v);
}

#[test]
fn certify_theorem1_out_of_domain_exits_2() {
    let out = hbrate(&["certify", "--kappa", "0.5", "--regime", "thm1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_overestimate_matches_library() {
    let out = hbrate(&["certify", "--theta", "0.1", "--kappa", "0.004"]);
    assert!(out.status.success());
    let got: RateCertificate = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(got, corollary2_certificate(0.1, 0.004).unwrap());
}

#[test]
fn certify_from_lipschitz_and_mu() {
    let a = stdout_json(&hbrate(&["certify", "--L", "50", "--mu", "0.5"]));
    let b = stdout_json(&hbrate(&["certify", "--kappa", "0.01"]));
    assert_eq!(a, b);
    assert_eq!(hbrate(&["certify", "--mu", "0.5"]).status.code(), Some(2));
    assert_eq!(hbrate(&["certify", "--kappa", "1e-2", "--regime", "cor2"]).status.code(), Some(2));
}

#[test]
fn run_without_schemes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &json!({ "problem": degenerate(6, 4, 1, 0.1), "schemes": [] }));
    let out = hbrate(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schemes"));
}

#[test]
fn run_separates_rates_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": degenerate(12, 8, 41, 1e-4),
            "schemes": [{ "kind": "fb" }, { "kind": "vfista" }],
            "seed": 3,
            "output_dir": "first",
            "budgets": { "max_iter": 100000, "stop_gap": 1e-9 },
            "emit": { "csv": true, "json_report": true, "gnuplot_script": true }
        }),
    );
    let out = hbrate(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_schema("run_report.schema.json", &report);
    let first = dir.path().join("first");
    for f in ["fb.csv", "vfista.csv", "report.json", "plot.gp"] {
        assert!(first.join(f).exists(), "{f} missing");
    }
    let reached = |file: &str| {
        let text = fs::read_to_string(first.join(file)).unwrap();
        text.lines()
            .skip(1)
            .find(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() <= 1e-8)
            .map(|l| l.split(',').next().unwrap().parse::<usize>().unwrap())
    };
    let (fb, vf) = (reached("fb.csv").unwrap(), reached("vfista.csv").unwrap());
    assert!(vf < fb, "vfista {vf} vs fb {fb}");
    assert_eq!(report["runs"][1]["bound_check"]["pass"], json!(true));

    // same seed and config, output redirected through the environment
    let second = dir.path().join("second");
    let again = Command::new(env!("CARGO_BIN_EXE_hbrate"))
        .args(["run", cfg.to_str().unwrap()])
        .env("HBRATE_OUT_DIR", &second)
        .output()
        .unwrap();
    assert!(again.status.success());
    for f in ["fb.csv", "vfista.csv", "report.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn compare_orders_schemes_by_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": degenerate(12, 8, 5, 1e-3),
            "schemes": [{ "kind": "fb" }, { "kind": "fista_restart", "label": "restart" }, { "kind": "vfista" }],
            "budgets": { "max_iter": 60000 }
        }),
    );
    let out = hbrate(&["compare", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_schema("comparison_report.schema.json", &report);
    let ordering = &report["ordering"];
    assert_eq!(ordering["expected_order"], json!(["vfista", "restart", "fb"]));
    assert_eq!(ordering["holds"], json!(true));
    let vf = report["rows"].as_array().unwrap().iter().find(|r| r["label"] == "vfista").unwrap();
    let kappa: f64 = report["kappa"].as_f64().unwrap();
    let cert = hbrate::tuning::corollary1_certificate(kappa).unwrap();
    let expected = -(1.0 - cert.sigma * kappa.sqrt()).ln();
    assert!((vf["certified_decrement"].as_f64().unwrap() - expected).abs() < 1e-15);
    assert!(dir.path().join("out/compare.json").exists());
}

#[test]
fn compare_single_scheme_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": degenerate(6, 4, 2, 0.1),
            "schemes": [{ "kind": "fista_bt" }],
            "budgets": { "max_iter": 2000 }
        }),
    );
    let report = stdout_json(&hbrate(&["compare", cfg.to_str().unwrap()]));
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
    assert_eq!(report["ordering"], Value::Null);
}

#[test]
fn validate_compliant_runs() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/validate_cor1.json");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hbrate"))
        .args(["validate", cfg.to_str().unwrap()])
        .env("HBRATE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert!(out.status.success(), "{report:#}");
    assert_schema("validation_report.schema.json", &report);
    let names: Vec<&str> = report["schemes"][1]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"theorem1_energy_decay") && names.contains(&"lemma7"));
    assert!(dir.path().join("validation.json").exists());
}

#[test]
fn validate_lasso_only_checks_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": {
                "kind": "lasso",
                "dims": [3, 2],
                "matrix": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
                "rhs": [3.0, 0.5, 2.0],
                "lambda": 0.5,
                "ground_truth": { "f_star": 0.0, "mu": 0.5, "L": 3.0, "numeric_reference": false }
            },
            "schemes": [{ "kind": "vfista" }, { "kind": "fb" }],
            "budgets": { "max_iter": 300 }
        }),
    );
    let out = hbrate(&["validate", cfg.to_str().unwrap()]);
    let report = stdout_json(&out);
    assert!(out.status.success(), "{report:#}");
    let vf = &report["schemes"][0];
    assert_eq!(vf["checks"].as_array().unwrap().len(), 1);
    assert_eq!(vf["checks"][0]["name"], "gap_bound");
    assert!(vf["skipped"].as_str().unwrap().contains("unavailable"));
    assert!(report["schemes"][1]["skipped"].is_string());
}

#[test]
fn ode_theorem3_run() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ode_theorem3.json");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hbrate"))
        .args(["ode", cfg.to_str().unwrap()])
        .env("HBRATE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert!(out.status.success(), "{report:#}");
    assert_schema("ode_report.schema.json", &report);
    assert_eq!(report["steps"], json!(40000));
    let csv = fs::read_to_string(dir.path().join("ode.csv")).unwrap();
    assert!(csv.starts_with("t,fgap,speed,energy\n0.0,"));
    assert_eq!(csv.lines().count(), 40002);
}

#[test]
fn ode_custom_friction_reports_without_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": degenerate(4, 3, 2, 0.25),
            "ode": { "friction": { "value": 0.3 }, "t_end": 2.0, "dt": 0.01, "at_rest": true },
            "emit": { "csv": false, "json_report": false }
        }),
    );
    let out = hbrate(&["ode", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["checks"], json!([]));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn ode_refuses_nonsmooth_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "problem": { "kind": "lasso", "dims": [2, 2], "matrix": [[1.0, 0.0], [0.0, 1.0]], "rhs": [3.0, 0.5], "lambda": 1.0 },
            "ode": { "friction": { "value": 1.0 }, "t_end": 1.0, "dt": 0.01 }
        }),
    );
    assert_eq!(hbrate(&["ode", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn malformed_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    assert_eq!(hbrate(&["run", path.to_str().unwrap()]).status.code(), Some(2));

    let cfg = write_config(dir.path(), &json!({ "schemes": [{ "kind": "fb" }] }));
    assert_eq!(hbrate(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({ "problem": degenerate(6, 4, 1, 0.1), "schemes": [{ "kind": "fb" }], "output_dir": "blocker/sub", "budgets": { "max_iter": 10 } }),
    );
    assert_eq!(hbrate(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        &json!({ "problem": degenerate(6, 4, 1, 0.1), "schemes": [{ "kind": "fb" }, { "kind": "fb" }] }),
    );
    assert_eq!(hbrate(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn shipped_configs_match_schema() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let doc: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_schema("experiment_config.schema.json", &doc);
    }
}
