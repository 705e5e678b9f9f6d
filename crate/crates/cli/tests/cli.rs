use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn hfo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfo"))
        .args(args)
        .env_remove("HFO_ENCODER_URL")
        .output()
        .expect("run hfo")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Generates and prepares a small trace, returning the prepared path.
fn prepared(dir: &TempDir) -> PathBuf {
    let raw = dir.path().join("raw.csv");
    let out = hfo(&[
        "generate", "--seed", "5", "--months", "3", "--users", "12", "--jobs-per-day", "20", "--start", "2020-06-01",
        "--out", path_str(&raw),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let prepared = dir.path().join("prepared.csv");
    let out = hfo(&["prepare", "--in", path_str(&raw), "--out", path_str(&prepared)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("labeled failed"), "{text}");
    prepared
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = hfo(&["generate", "--seed", "9", "--months", "2", "--jobs-per-day", "15", "--out", path_str(p)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let meta = |p: &Path| fs::read(format!("{}.meta.json", p.display())).unwrap();
    assert_eq!(meta(&a), meta(&b));
    let meta: serde_json::Value = serde_json::from_slice(&meta(&a)).unwrap();
    assert_eq!(meta["config"]["seed"], 9);
    assert!(meta["stats"]["jobs"].as_u64().unwrap() > 0);
}

#[test]
fn invalid_generator_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = hfo(&["generate", "--fail-rate", "1.5", "--out", path_str(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prepare_audit_run_and_report() {
    let dir = TempDir::new().unwrap();
    let trace = prepared(&dir);

    let audit_json = dir.path().join("audit.json");
    let out = hfo(&["audit", "--in", path_str(&trace), "--out", path_str(&audit_json)]);
    assert!(out.status.success());
    let audit: serde_json::Value = serde_json::from_slice(&fs::read(&audit_json).unwrap()).unwrap();
    // Prepared traces agree with their exit codes.
    assert_eq!(audit["not_completed_exit_zero"], 0);
    assert_eq!(audit["completed_exit_nonzero"], 0);

    let majority = dir.path().join("majority.json");
    let out = hfo(&[
        "run", "--in", path_str(&trace), "--model", "majority", "--setting", "online", "--verify", "--out",
        path_str(&majority),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    let row = table.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(" | ").map(str::trim).collect();
    assert_eq!(cells[0], "Majority");
    assert_eq!(&cells[7..10], ["0.00*", "0.00*", "0.00*"]);
    assert_eq!(cells[6], "1.00*");
    assert_eq!(cells[10], "N.A.");

    let report: serde_json::Value = serde_json::from_slice(&fs::read(&majority).unwrap()).unwrap();
    assert_eq!(report["setting"], "online");
    assert_eq!(report["monthly_mean"]["failed"]["f1"], 0.0);

    let dt = dir.path().join("dt.json");
    let out = hfo(&[
        "run", "--in", path_str(&trace), "--model", "dt", "--setting", "offline", "--out", path_str(&dt),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let one = hfo(&["report", path_str(&dt)]);
    assert!(one.status.success());
    assert_eq!(stdout(&one).lines().count(), 2);
    assert!(stdout(&one).lines().nth(1).unwrap().starts_with("INT+DT"));

    let two = hfo(&["report", path_str(&dt), path_str(&majority)]);
    assert!(two.status.success());
    let text = stdout(&two);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().starts_with("Model"));
}

#[test]
fn knn_model_round_trips_through_save_model() {
    let dir = TempDir::new().unwrap();
    let trace = prepared(&dir);
    let model = dir.path().join("model.json");
    let out = hfo(&[
        "run", "--in", path_str(&trace), "--model", "knn", "--encoding", "sb", "--distance", "cosine", "--k", "3",
        "--save-model", path_str(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).lines().nth(1).unwrap().starts_with("SB+CD"));
    let saved: serde_json::Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    assert_eq!(saved["format"], "hfo-model-v1");
}

#[test]
fn unreachable_encoder_exits_4() {
    let dir = TempDir::new().unwrap();
    let trace = prepared(&dir);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = hfo(&[
        "run", "--in", path_str(&trace), "--model", "knn", "--encoding", "sb", "--encoder", "external",
        "--encoder-url", &format!("http://127.0.0.1:{port}"),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn error_codes() {
    let dir = TempDir::new().unwrap();
    let missing = hfo(&["run", "--in", "/nonexistent.csv", "--model", "dt"]);
    assert_eq!(missing.status.code(), Some(3));

    let trace = prepared(&dir);
    let bad_k = hfo(&["run", "--in", path_str(&trace), "--model", "knn", "--k", "0"]);
    assert_eq!(bad_k.status.code(), Some(2));

    let no_url = hfo(&["run", "--in", path_str(&trace), "--model", "knn", "--encoding", "sb", "--encoder", "external"]);
    assert_eq!(no_url.status.code(), Some(2));

    let zero_jobs = hfo(&["--jobs", "0", "report", path_str(&trace)]);
    assert_eq!(zero_jobs.status.code(), Some(2));

    let not_a_report = hfo(&["report", path_str(&trace)]);
    assert_eq!(not_a_report.status.code(), Some(3));
}
