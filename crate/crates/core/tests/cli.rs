use std::path::Path;
use std::process::{Command, Output};

use asep_core::cli::{RunConfig, EXIT_CONFIG, EXIT_FAILED, EXIT_OK};
use tempfile::TempDir;

fn asep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asep"))
        .args(args)
        .env_remove("ASEP_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const STEP_ORACLE: &str = r#"{
    "model": {"p": "0", "q": "1"},
    "profile": {"type": "periodic", "rho": ["1/2"]},
    "eval": {"l": 1, "t": 1.0, "x_min": -8, "x_max": 3},
    "sim": {"trials": 20000, "seed": 1}
}"#;

const DETERMINISTIC: &str = r#"{
    "model": {"p": "1/3", "q": "2/3"},
    "profile": {"type": "deterministic", "y": [2, 4]},
    "eval": {"l": [1, 2], "t": 0.0, "x_min": 0, "x_max": 5, "tolerance": 1e-8},
    "output": {"format": "csv"}
}"#;

#[test]
fn identities_with_seed_and_trials() {
    let out = asep(&["identities", "--seed", "7", "--trials", "100"]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 800);
    assert!(lines
        .iter()
        .all(|v| v["equal"] == serde_json::Value::Bool(true)));
    let again = asep(&["identities", "--seed", "7", "--trials", "100"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn cdf_at_time_zero_is_an_indicator() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "det.json", DETERMINISTIC);
    let out = asep(&["cdf", "--config", &config]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", stderr(&out));
    let text = stdout(&out);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "l",
            "x",
            "value",
            "imag_residual",
            "tail_estimate",
            "quad_error_estimate",
            "series_converged",
            "quadrature_converged",
            "terms",
            "radius"
        ]
    );
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        let l: usize = record[0].parse().unwrap();
        let x: i64 = record[1].parse().unwrap();
        let value: f64 = record[2].parse().unwrap();
        let want = if [2, 4][l - 1] <= x { 1.0 } else { 0.0 };
        assert!((value - want).abs() < 1e-6, "l={l} x={x}: {value}");
        rows += 1;
    }
    assert_eq!(rows, 12);
}

#[test]
fn pmf_rows_sum_to_cdf_increments() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "det.json", DETERMINISTIC);
    let out = asep(&["pmf", "--config", &config, "--format", "json"]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", stderr(&out));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&out)).unwrap();
    for row in &rows {
        let want = if row["x"] == row["l"].as_u64().unwrap() * 2 {
            1.0
        } else {
            0.0
        };
        assert!(
            (row["value"].as_f64().unwrap() - want).abs() < 1e-6,
            "{row}"
        );
    }
}

#[test]
fn compare_passes_on_the_step_oracle() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "step.json", STEP_ORACLE);
    let path = dir.path().join("report.json");
    let out = asep(&[
        "compare",
        "--config",
        &config,
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["rows"].as_array().unwrap().len(), 12);
}

#[test]
fn compare_fails_with_a_single_trial() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "step.json", STEP_ORACLE);
    let out = asep(&[
        "compare", "--config", &config, "--trials", "1", "--format", "csv",
    ]);
    assert_eq!(out.status.code(), Some(EXIT_FAILED), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("l,x,formula,imag_residual,tail_estimate,quad_error_estimate,")
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        &STEP_ORACLE.replace("\"t\": 1.0", "\"t\": \"later\""),
    );
    let out = asep(&["cdf", "--config", &bad]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("eval.t"), "{}", stderr(&out));

    let unknown = write(
        dir.path(),
        "unknown.json",
        &STEP_ORACLE.replace("\"seed\"", "\"sead\""),
    );
    let out = asep(&["simulate", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("sim.sead"), "{}", stderr(&out));

    assert_eq!(asep(&["cdf"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(asep(&["frobnicate"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(asep(&["--help"]).status.code(), Some(EXIT_OK));

    let threads = Command::new(env!("CARGO_BIN_EXE_asep"))
        .args(["identities", "--trials", "1"])
        .env("ASEP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn output_files_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "step.json", STEP_ORACLE);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let path = dir.path().join(format!("sim{i}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_asep"))
            .args([
                "simulate", "--config", &config, "--format", "csv", "--trials", "5000",
            ])
            .args(["--out", path.to_str().unwrap()])
            .env("ASEP_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(EXIT_OK), "{}", stderr(&out));
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(String::from_utf8_lossy(&outputs[0]).starts_with("l,x,hits,trials,p_hat,stderr\n"));
}

#[test]
fn configs_round_trip() {
    for text in [STEP_ORACLE, DETERMINISTIC] {
        let config = RunConfig::from_json(text).unwrap();
        assert_eq!(RunConfig::from_json(&config.to_json()).unwrap(), config);
    }
}
