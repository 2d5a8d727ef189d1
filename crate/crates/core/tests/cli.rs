//! End-to-end runs of the `bias-harness` binary.

use std::path::Path;
use std::process::{Command, Output};

use bias_harness::dataset::DatasetBundle;
use bias_harness::domain::TranscriptRecord;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bias-harness"));
    c.env("RUST_LOG", "error");
    c
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    DatasetBundle::samples().write_dir(&dir.path().join("data")).unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn invoke(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

const ALWAYS_B: &str = r#"
run_id = "cli"
dataset_dir = "data"
output_dir = "out"
pad_to = 20

[[backends]]
id = "yes-man"
model = "scripted"
kind = "scripted"
policy = { kind = "fixed_answer", text = "Answer: B. Explanation: everyone says so." }

[[protocols]]
experiment = "herd"
backend = "yes-man"
repetitions = 2
questions = 5
"#;

#[test]
fn validate_accepts_a_good_config() {
    let dir = workspace(ALWAYS_B);
    let out = invoke(dir.path(), &["validate", "run.toml"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_reports_unknown_backend() {
    let dir = workspace(&ALWAYS_B.replace("backend = \"yes-man\"", "backend = \"nobody\""));
    let out = invoke(dir.path(), &["validate", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("nobody"));

    let out = invoke(dir.path(), &["run", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").join("cli").join("manifest.json").exists());
}

#[test]
fn herd_with_always_b_backend_reports_full_conformity() {
    let dir = workspace(ALWAYS_B);
    let out = invoke(dir.path(), &["run", "run.toml"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("out").join("cli");
    let table = std::fs::read_to_string(run_dir.join("rates").join("table1.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(table.as_bytes());
    let mut cells = 0;
    for rec in rows.records() {
        for cell in rec.unwrap().iter().skip(1) {
            assert_eq!(cell, "100.00", "{table}");
            cells += 1;
        }
    }
    assert!(cells >= 8, "{table}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert!(run_dir.join("accounting.csv").exists());
}

#[test]
fn seed_and_out_flags_override_config() {
    let dir = workspace(ALWAYS_B);
    let out = invoke(dir.path(), &["--out", "elsewhere", "--seed", "9", "run", "run.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = std::fs::read_to_string(dir.path().join("elsewhere/cli/manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn unreachable_backend_exits_with_backend_code_and_keeps_transcripts() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = format!(
        r#"
run_id = "down"
dataset_dir = "data"
output_dir = "out"

[[backends]]
id = "canned"
model = "scripted"
kind = "scripted"
policy = {{ kind = "fixed_answer", text = "Answer: A." }}

[[backends]]
id = "remote"
model = "gpt-test"
kind = "http"
endpoint = "http://127.0.0.1:{port}/v1/chat/completions"
timeout_ms = 2000
retry = {{ max_attempts = 1, base_backoff_ms = 1 }}

[[protocols]]
experiment = "halo"
backend = "canned"
repetitions = 2
questions = 1

[[protocols]]
experiment = "gambler"
backend = "remote"
repetitions = 2
questions = 1
"#
    );
    let dir = workspace(&config);
    let out = invoke(dir.path(), &["run", "run.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let run_dir = dir.path().join("out").join("down");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");

    for exp in ["halo", "gambler"] {
        let path = run_dir.join("transcripts").join(exp).join("down.ndjson");
        let text = std::fs::read_to_string(&path).unwrap();
        let records: Vec<TranscriptRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(matches!(records.first(), Some(TranscriptRecord::Header(_))), "{exp}");
        if exp == "halo" {
            assert!(records.iter().any(|r| matches!(r, TranscriptRecord::Outcome(_))));
            assert!(matches!(records.last(), Some(TranscriptRecord::Footer { .. })));
        }
    }
}

#[test]
fn qualify_writes_a_report() {
    let dir = workspace(&ALWAYS_B.replace("Answer: B.", "Answer: A."));
    let out = invoke(
        dir.path(),
        &["qualify", "data/known_mcq.ndjson", "--backend", "yes-man", "--reps", "5", "--config", "run.toml"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accepted"), "{stdout}");
    let report = dir.path().join("out").join("qualification").join("known_mcq.yes-man.ndjson");
    let lines = std::fs::read_to_string(report).unwrap().lines().count();
    assert_eq!(lines, DatasetBundle::samples().known.len());
}
