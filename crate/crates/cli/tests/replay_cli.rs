//! The `faf` binary end to end: fixture, golden report, formats and exit codes.
//! Set `FAF_BLESS=1` to rewrite the fixture and golden files from the current build.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faf_core::fixtures::tokyo_script;
use faf_core::replay::{parse_scripts, DebateScript};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn faf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faf")).args(args).output().expect("runs faf")
}

fn bless() -> bool {
    std::env::var_os("FAF_BLESS").is_some()
}

fn tokyo_json() -> String {
    fixtures().join("tokyo.json").to_string_lossy().into_owned()
}

#[test]
fn fixture_is_the_tokyo_debate() {
    let path = fixtures().join("tokyo.json");
    if bless() {
        std::fs::write(&path, serde_json::to_string_pretty(&tokyo_script()).unwrap() + "\n").unwrap();
    }
    let scripts = parse_scripts(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(scripts, vec![tokyo_script()]);
}

#[test]
fn golden_report_is_byte_identical() {
    let golden = fixtures().join("tokyo.report.json");
    let first = faf(&["replay", &tokyo_json(), "--format", "json"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    if bless() {
        std::fs::write(&golden, &first.stdout).unwrap();
    }
    assert_eq!(first.stdout, std::fs::read(&golden).unwrap(), "report drifted from the committed golden file");
    let second = faf(&["replay", &tokyo_json(), "--format", "json"]);
    assert_eq!(first.stdout, second.stdout);
}

/// Verdicts worked out by hand from each agent's confidence (alice −0.75, bob 0.0625,
/// charlie 0.75 against the 0.75 proposal) and the four scripted forecasts.
#[test]
fn golden_report_matches_hand_computed_verdicts() {
    let report: Value = serde_json::from_slice(&std::fs::read(fixtures().join("tokyo.report.json")).unwrap()).unwrap();
    let row = &report["rows"][0];
    assert_eq!(row["question"], "tokyo");
    assert_eq!(row["forecasts"], 4);
    assert_eq!(row["irrational_increase"], 1);
    assert_eq!(row["irrational_decrease"], 1);
    assert_eq!(row["irrational_scale"], 2);
    // alice twice at −0.75, bob 0.0625, charlie 0.75.
    let mean_c = (-0.75 - 0.75 + 0.0625 + 0.75) / 4.0;
    assert!((row["mean_confidence"].as_f64().unwrap() - mean_c).abs() < 1e-9);

    let blocked: Vec<(String, f64, f64)> = report["blocked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| (b["agent"].as_str().unwrap().to_string(), b["submitted"].as_f64().unwrap(), b["follow_up"].as_f64().unwrap()))
        .collect();
    assert_eq!(
        blocked,
        vec![("alice".to_string(), 0.10, 0.19), ("bob".to_string(), 0.70, 0.76), ("alice".to_string(), 0.80, 0.74)]
    );
    let q = &report["questions"][0];
    assert_eq!(q["outcome"], false);
    assert!((q["final_forecast"].as_f64().unwrap() - (0.74 + 0.76 + 0.95) / 3.0).abs() < 1e-9);
    // Daily Brier from 1 March through the 5 March close: alice holds 0.19 for two days
    // and 0.74 for three; bob 0.76 from day 2; charlie 0.95 from day 2.
    let alice = (2.0 * 0.19f64.powi(2) + 3.0 * 0.74f64.powi(2)) / 5.0;
    assert!((q["agent_brier"]["alice"].as_f64().unwrap() - alice).abs() < 1e-9);
    assert!((q["agent_brier"]["bob"].as_f64().unwrap() - 0.76f64.powi(2)).abs() < 1e-9);
    assert!((q["agent_brier"]["charlie"].as_f64().unwrap() - 0.95f64.powi(2)).abs() < 1e-9);
    assert_eq!(report["all"]["forecasts"], 4);
}

#[test]
fn out_flag_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let status = faf(&["replay", &tokyo_json(), "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixtures().join("tokyo.report.json")).unwrap());

    let csv = faf(&["replay", &tokyo_json(), "--format", "csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "question,group_brier,min_brier,max_brier,forecasts,irrational_increase,irrational_decrease,irrational_scale,mean_confidence");
    assert!(lines[1].starts_with("tokyo,") && lines[1].contains(",4,1,1,2,"), "{}", lines[1]);

    let table = faf(&["replay", &tokyo_json()]);
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.starts_with("Q "), "{table}");
    assert!(table.lines().last().unwrap().starts_with("All"));

    let mean = faf(&["replay", &tokyo_json(), "--format", "json", "--policy", "mean"]);
    let mean: Value = serde_json::from_slice(&mean.stdout).unwrap();
    assert_eq!(mean["policy"], "mean");
    let coarse = faf(&["replay", &tokyo_json(), "--format", "json", "--grid", "0.05"]);
    assert!(coarse.status.success(), "{}", String::from_utf8_lossy(&coarse.stderr));
    assert_eq!(serde_json::from_slice::<Value>(&coarse.stdout).unwrap()["grid"], 0.05);
}

fn write_script(dir: &Path, script: &DebateScript) -> String {
    let path = dir.join("s.json");
    std::fs::write(&path, serde_json::to_string(script).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn exit_codes() {
    assert_eq!(faf(&["validate", &tokyo_json()]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let mut broken = tokyo_script();
    broken.question.outcome = None;
    broken.windows[0].forecasts[0].value = 2.0;
    let path = write_script(dir.path(), &broken);
    let v = faf(&["validate", &path]);
    assert_eq!(v.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&v.stderr);
    assert!(stderr.contains("question.outcome") && stderr.contains("windows[0].forecasts[0].value"), "{stderr}");
    assert_eq!(faf(&["replay", &path]).status.code(), Some(2));

    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "[1, 2").unwrap();
    assert_eq!(faf(&["validate", junk.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(faf(&["replay", &tokyo_json(), "--grid", "0.3"]).status.code(), Some(2));
    assert_eq!(faf(&["validate", "/nonexistent/script.json"]).status.code(), Some(1));
}
