//! End-to-end runs of the `trajfix` binary.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output};
use std::time::Duration;

use trajfix::harness::sim::clean_trajectory;
use trajfix::harness::EvalReport;
use trajfix::trajectory::to_line;

fn trajfix(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajfix"))
        .args(args)
        .current_dir(dir)
        .env_remove("LLM_BASE_URL")
        .env_remove("RETRIEVER_BASE_URL")
        .output()
        .unwrap()
}

fn simulated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = trajfix(&["simulate", "sim"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn eval_on_the_scripted_set_writes_every_report_file() {
    let dir = simulated();
    let out = trajfix(
        &["eval", "sim/dataset.jsonl", "--config", "sim/config.toml", "--strategy", "drrag", "--out", "rep"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["report.json", "summary.md", "per_type.csv", "confusion.csv", "repaired.jsonl", "outcomes.jsonl"] {
        assert!(dir.path().join("rep").join(f).is_file(), "{f}");
    }
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("| drrag |") && summary.contains("| 80.0 |"), "{summary}");
}

#[test]
fn eval_reports_match_across_worker_counts() {
    let dir = simulated();
    let mut views = Vec::new();
    for (n, out) in [("1", "w1"), ("8", "w8")] {
        let o = trajfix(
            &["eval", "sim/dataset.jsonl", "--config", "sim/config.toml", "--concurrency", n, "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(dir.path().join(out).join("report.json")).unwrap();
        let report: EvalReport = serde_json::from_str(&text).unwrap();
        views.push(report.deterministic_view());
    }
    assert_eq!(views[0], views[1]);
}

#[test]
fn diagnose_and_repair_use_the_script() {
    let dir = simulated();
    let o = trajfix(&["diagnose", "sim/dataset.jsonl", "--script", "sim/script.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    assert_eq!(lines[0]["diagnosis"]["error_type"], "format");

    let o = trajfix(
        &["repair", "sim/dataset.jsonl", "--strategy", "oracle", "--script", "sim/script.json", "--out", "fixed.jsonl"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = trajfix(&["validate", "fixed.jsonl"], dir.path());
    assert!(v.status.success(), "{}", stderr(&v));
    assert!(String::from_utf8_lossy(&v.stdout).contains("40 trajectories valid (0 not known correct)"));
}

#[test]
fn inject_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let clean: String = (0..10).map(|i| to_line(&clean_trajectory(i)) + "\n").collect();
    std::fs::write(dir.path().join("clean.jsonl"), clean).unwrap();
    let run = || trajfix(&["inject", "clean.jsonl", "--type", "format", "--seed", "7"], dir.path());
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 10);
    let other = trajfix(&["inject", "clean.jsonl", "--type", "reasoning", "--seed", "7"], dir.path());
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let good = to_line(&clean_trajectory(0));
    std::fs::write(dir.path().join("bad.jsonl"), format!("{good}\n{good}\n{{\"id\": 3}}\n")).unwrap();
    let o = trajfix(&["validate", "bad.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = trajfix(&["validate", "bad.jsonl", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    let o = trajfix(&["inject", "bad.jsonl", "--type", "nonsense", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = trajfix(&["eval", "missing.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_backend_exits_two_with_a_partial_report() {
    let dir = simulated();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = Command::new(env!("CARGO_BIN_EXE_trajfix"))
        .args(["eval", "sim/dataset.jsonl", "--out", "partial"])
        .current_dir(dir.path())
        .env("LLM_BASE_URL", format!("http://127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(dir.path().join("partial/report.json").is_file());
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn retriever_server_answers_search_requests() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Killed(
        Command::new(env!("CARGO_BIN_EXE_trajfix"))
            .args(["serve-retriever", "--addr", &addr])
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap(),
    );
    let body = r#"{"query": "Arvenna latitude", "top_k": 3}"#;
    let reply = (0..50)
        .find_map(|_| {
            std::thread::sleep(Duration::from_millis(50));
            post(&addr, "/search", body).ok()
        })
        .expect("server came up");
    let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(results[0]["doc_id"], "ent-arvenna");
}

/// Minimal HTTP/1.1 POST returning the response body.
fn post(addr: &str, path: &str, body: &str) -> std::io::Result<String> {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr)?;
    write!(
        s,
        "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = String::new();
    s.read_to_string(&mut raw)?;
    raw.split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .ok_or_else(|| std::io::Error::other("no body"))
}
