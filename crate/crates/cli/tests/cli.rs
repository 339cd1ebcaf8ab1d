use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pals(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pals"))
        .args(args)
        .env_remove("PALS_JOBS")
        .output()
        .expect("binary runs")
}

fn boston() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/boston_housing.csv")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn missing_response_names_the_column() {
    let input = boston();
    let out = pals(&["fit", "--input", input.to_str().unwrap(), "--response", "PRICE"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["schema_version"], 1);
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"].as_str().unwrap().contains("PRICE"));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let out = pals(&["simulate", "--model", "VII", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pals(&["simulate", "--model", "IV", "--case", "ii", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn dry_run_prints_resolved_config() {
    let out = pals(&["simulate", "--table", "1", "--model", "III", "--p", "10", "--reps", "7", "--dry-run"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["command"], "simulate");
    assert_eq!(v["config"]["reps"], 7);
    assert_eq!(v["config"]["model"][0], "III");
}

#[test]
fn single_rep_table_has_empty_se() {
    let out = pals(&["simulate", "--model", "I", "--case", "ii", "--methods", "SIR", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let se = header.iter().position(|h| *h == "se").unwrap();
    assert_eq!(row[se], "");
}

#[test]
fn fits_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = boston();
    let run = |name: &str, jobs: &str| {
        let path = dir.path().join(name);
        let out = pals(&[
            "fit", "--input", input.to_str().unwrap(), "--response", "MEDV", "--drop", "CHAS",
            "--exclude-where", "CHAS=1", "--out", path.to_str().unwrap(), "--jobs", jobs,
        ]);
        assert!(out.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.json", "1"), run("b.json", "3"));
}

fn model_four_file(dir: &Path) -> PathBuf {
    let path = dir.join("model4.csv");
    let out = pals(&["generate", "--model", "IV", "--n", "100", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    path
}

#[test]
fn kernel_fit_reports_upsilon_and_clamps_basis() {
    let dir = tempfile::tempdir().unwrap();
    let data = model_four_file(dir.path());
    let out_path = dir.path().join("k.json");
    let out = pals(&[
        "kernel-fit", "--input", data.to_str().unwrap(), "--response", "y", "--truth-column", "phi1",
        "--lambda", "1", "--basis-size", "500", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out_path).unwrap()).unwrap();
    assert_eq!(v["p"], 10);
    assert!(v["m"].as_u64().unwrap() <= 100);
    let u = v["fits"][0]["upsilon"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&u));
    assert_eq!(v["fits"][0]["predictors"].as_array().unwrap().len(), 100);
}

#[test]
fn dc_with_single_lambda_matches_fixed_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = model_four_file(dir.path());
    let fit = |dc: bool| {
        let mut args = vec![
            "kernel-fit", "--input", data.to_str().unwrap(), "--response", "y", "--truth-column", "phi1",
            "--lambda", "10",
        ];
        if dc {
            args.push("--dc");
        }
        let out = pals(&args);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["fits"][0].clone()
    };
    assert_eq!(fit(true), fit(false));
}

#[test]
fn env_overrides_flags() {
    let out = Command::new(env!("CARGO_BIN_EXE_pals"))
        .args(["simulate", "--model", "III", "--dry-run"])
        .env("PALS_REPS", "13")
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["reps"], 13);
}
