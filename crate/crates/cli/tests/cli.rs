use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn covadj(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covadj"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COVADJ_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = covadj(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: impl AsRef<Path>) -> Value {
    let path = path.as_ref();
    serde_json::from_str(&fs::read_to_string(path).unwrap())
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn assert_valid(schema: &str, doc: &Value) {
    let schema = read_json(schema_dir().join(format!("{schema}.schema.json")));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema} violations: {errors:#?}");
}

/// Writes a synthetic experiment with a day column and returns its path.
fn simulate(dir: &Path, n: usize) -> PathBuf {
    let n = n.to_string();
    ok(
        &[
            "simulate", "--n-units", &n, "--outcome-cor", "0.7", "--k-covariates", "3",
            "--daily-arrivals", "50", "--seed", "11", "--out", "sim",
        ],
        dir,
    );
    dir.join("sim/synthetic.csv")
}

#[test]
fn estimate_on_four_rows_gives_one_estimate() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("tiny.csv"),
        "assignment,outcome,x\n0,1.0,0.1\n0,2.0,0.3\n1,3.5,0.2\n1,4.0,0.5\n",
    )
    .unwrap();
    ok(&["estimate", "--input", "tiny.csv", "--models", "dim", "--out", "o"], tmp.path());
    let rep = read_json(tmp.path().join("o/estimate.json"));
    assert_valid("estimate", &rep);
    let est = rep["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 1);
    assert_eq!(est[0]["model_id"], "dim");
    assert!((est[0]["ate"].as_f64().unwrap() - 2.25).abs() < 1e-12);
    assert_valid("run_manifest", &read_json(tmp.path().join("o/run_manifest.json")));
}

#[test]
fn batch_writes_one_report_per_experiment_and_day() {
    let tmp = TempDir::new().unwrap();
    ok(
        &[
            "batch", "--experiments", "3", "--days", "7,28", "--n-units", "400",
            "--outcome-cor", "0.6", "--models", "dim,ols", "--out", "b",
        ],
        tmp.path(),
    );
    let dir = tmp.path().join("b");
    let mut reports: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("exp") && n.ends_with(".json"))
        .collect();
    reports.sort();
    assert_eq!(
        reports,
        [
            "exp000_day28.json", "exp000_day7.json", "exp001_day28.json",
            "exp001_day7.json", "exp002_day28.json", "exp002_day7.json",
        ]
    );
    for r in &reports {
        let doc = read_json(dir.join(r));
        assert_valid("estimate", &doc);
    }
    let agg = read_json(dir.join("aggregate.json"));
    assert_valid("aggregate", &agg);
    assert_eq!(agg["n_reports"], 6);
    assert!(dir.join("aggregate_summary.csv").is_file());
}

#[test]
fn aa_split_csv_has_one_row_per_split_and_model() {
    let tmp = TempDir::new().unwrap();
    let input = simulate(tmp.path(), 300);
    ok(
        &[
            "aa", "--input", input.to_str().unwrap(), "--models", "dim,ols",
            "--s-splits", "10000", "--kappa", "20", "--out", "a",
        ],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("a/aa_splits.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,zeta,model,ate,ci_lo,ci_hi"));
    assert_eq!(lines.count(), 10_000 * 2);
    let rep = read_json(tmp.path().join("a/aa.json"));
    assert_valid("aa", &rep);
    assert_eq!(rep["bucket_metrics"]["buckets"].as_array().unwrap().len(), 20);
}

#[test]
fn every_command_emits_schema_valid_reports() {
    let tmp = TempDir::new().unwrap();
    let input = simulate(tmp.path(), 600);
    let input = input.to_str().unwrap();
    assert_valid("simulate", &read_json(tmp.path().join("sim/simulate.json")));
    ok(&["stress", "--input", input, "--draws", "4", "--folds", "1,2", "--out", "s"], tmp.path());
    assert_valid("stress", &read_json(tmp.path().join("s/stress.json")));
    ok(
        &["power", "--input", input, "--day", "4", "--delta", "0.3", "--models", "dim,ols,ridge", "--out", "p"],
        tmp.path(),
    );
    let power = read_json(tmp.path().join("p/power.json"));
    assert_valid("power", &power);
    assert_eq!(power["recommendations"][0]["model_id"], "dim");
    for dir in ["sim", "s", "p"] {
        assert_valid("run_manifest", &read_json(tmp.path().join(dir).join("run_manifest.json")));
    }
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let input = simulate(tmp.path(), 500);
    let input = input.to_str().unwrap();
    let runs: [(&str, Vec<&str>, &[&str]); 4] = [
        ("estimate", vec!["--models", "dim,ols,lasso,two_step:ridge"], &["estimate.json"]),
        ("aa", vec!["--models", "dim,ols", "--s-splits", "200", "--kappa", "5"], &["aa.json", "aa_splits.csv", "aa_buckets.csv"]),
        ("stress", vec!["--draws", "3"], &["stress.json", "stress_draws.csv", "stress_summary.csv"]),
        ("power", vec!["--day", "5", "--delta", "0.2"], &["power.json"]),
    ];
    for (cmd, extra, files) in runs {
        for out in ["r1", "r2"] {
            let mut args = vec![cmd, "--input", input, "--seed", "99", "--out", out];
            args.extend(&extra);
            ok(&args, tmp.path());
        }
        for f in files {
            let a = fs::read(tmp.path().join("r1").join(f)).unwrap();
            let b = fs::read(tmp.path().join("r2").join(f)).unwrap();
            assert!(a == b, "{cmd}: {f} differs between runs");
        }
    }
}

fn estimate_doc(vr: f64, n: usize) -> Value {
    json!({
        "kind": "estimate", "format_version": 1, "source": format!("n{n}"), "day": null,
        "n_units": n, "k": 1, "n_per_arm": [n / 2, n - n / 2], "alpha": 0.05, "seed": 0,
        "estimates": [{
            "model_id": "ols", "ate": 0.1, "lift": null, "lift_ci": null, "variance": 0.01,
            "mse_per_arm": [1.0, 1.0], "ci": [0.0, 0.2], "alpha": 0.05,
            "n_per_arm": [n / 2, n - n / 2], "control_mean": 0.0, "variance_reduction": vr
        }],
        "failures": []
    })
}

fn quartile(agg: &Value, model: &str, field: &str) -> f64 {
    agg["distributions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["model_id"] == model)
        .unwrap()["summary"][field]
        .as_f64()
        .unwrap()
}

#[test]
fn aggregate_median_of_four_reports() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["aggregate".to_string(), "--out".into(), "agg".into()];
    for (i, vr) in [0.0, 10.0, 20.0, 30.0].into_iter().enumerate() {
        let name = format!("r{i}.json");
        fs::write(tmp.path().join(&name), estimate_doc(vr, 100 + i).to_string()).unwrap();
        args.push(name);
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args, tmp.path());
    let agg = read_json(tmp.path().join("agg/aggregate.json"));
    assert_valid("aggregate", &agg);
    assert_eq!(quartile(&agg, "ols", "median"), 15.0);
}

#[test]
fn aggregate_of_one_report_echoes_it() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("r.json"), estimate_doc(42.5, 80).to_string()).unwrap();
    ok(&["aggregate", "r.json", "--out", "agg"], tmp.path());
    let agg = read_json(tmp.path().join("agg/aggregate.json"));
    for f in ["min", "q1", "median", "q3", "max"] {
        assert_eq!(quartile(&agg, "ols", f), 42.5);
    }
}

#[test]
fn hundred_experiments_split_into_four_size_groups() {
    let tmp = TempDir::new().unwrap();
    ok(
        &[
            "batch", "--experiments", "100", "--n-units", "120", "--models", "dim,ols",
            "--outcome-cor", "0.5", "--out", "b",
        ],
        tmp.path(),
    );
    let agg = read_json(tmp.path().join("b/aggregate.json"));
    let groups = agg["size_groups"].as_array().unwrap();
    assert_eq!(groups.len(), 4);
    for g in groups {
        assert_eq!(g["n_experiments"], 25);
    }
    let hi = |i: usize| groups[i]["n_units_range"][1].as_u64().unwrap();
    let lo = |i: usize| groups[i]["n_units_range"][0].as_u64().unwrap();
    for i in 0..3 {
        assert!(hi(i) <= lo(i + 1));
    }
}

#[test]
fn mixed_report_kinds_are_rejected() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("e.json"), estimate_doc(1.0, 50).to_string()).unwrap();
    let mut other = estimate_doc(1.0, 50);
    other["kind"] = json!("power");
    fs::write(tmp.path().join("p.json"), other.to_string()).unwrap();
    let out = covadj(&["aggregate", "e.json", "p.json", "--out", "agg"], tmp.path());
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_valid("error", &err);
    assert!(err["error"]["message"].as_str().unwrap().contains("mix"));
}

#[test]
fn config_errors_exit_before_any_output() {
    let tmp = TempDir::new().unwrap();
    let cases: [&[&str]; 4] = [
        &["estimate", "--input", "missing.csv", "--out", "o"],
        &["estimate", "--input", "missing.csv", "--alpha", "1.5", "--out", "o"],
        &["aa", "--input", "missing.csv", "--models", "dim,bogus", "--out", "o"],
        &["simulate", "--assignment-prob", "1.5", "--out", "o"],
    ];
    for args in cases {
        let out = covadj(args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_valid("error", &err);
        assert_eq!(err["error"]["kind"], "config");
        assert!(!tmp.path().join("o").exists());
    }
}

#[test]
fn runtime_failure_writes_error_document() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.csv"), "assignment,outcome\n0,1\n0,2\n0,3\n").unwrap();
    let out = covadj(&["estimate", "--input", "bad.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = read_json(tmp.path().join("o/error.json"));
    assert_valid("error", &err);
    assert_eq!(err["error"]["kind"], "runtime");
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let input = simulate(tmp.path(), 300);
    fs::write(
        tmp.path().join("run.toml"),
        "[common]\nmodels = \"dim,ols\"\nseed = 5\nalpha = 0.1\nout = \"from-file\"\n\n[aa]\ns_splits = 30\nkappa = 3\n",
    )
    .unwrap();
    ok(
        &["aa", "--config", "run.toml", "--input", input.to_str().unwrap(), "--seed", "8"],
        tmp.path(),
    );
    let rep = read_json(tmp.path().join("from-file/aa.json"));
    assert_eq!(rep["seed"], 8);
    assert_eq!(rep["alpha"], 0.1);
    assert_eq!(rep["s_splits"], 30);
    assert_eq!(rep["kappa"], 3);
    assert_eq!(rep["models"].as_array().unwrap().len(), 2);
}

#[test]
fn output_dir_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_covadj"))
        .args(["simulate", "--n-units", "20"])
        .current_dir(tmp.path())
        .env("COVADJ_OUT_DIR", "env-out")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("env-out/synthetic.csv").is_file());
}
