mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};

use common::scenario_file;
use serde_json::{json, Value};

fn embserve() -> Command {
    Command::new(env!("CARGO_BIN_EXE_embserve"))
}

#[test]
fn run_then_replay_gives_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("run.trace");
    let report = dir.path().join("run.json");
    let status = embserve()
        .args(["run", "--scenario"])
        .arg(scenario_file("quickstart.json"))
        .args(["--seed", "9", "--trace"])
        .arg(&trace)
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let written = std::fs::read(&report).unwrap();
    let parsed: Value = serde_json::from_slice(&written).unwrap();
    assert_eq!(parsed["pass"], json!(true));
    assert_eq!(parsed["seed"], json!(9));
    assert!(written.ends_with(b"}\n"));

    let replayed = embserve().arg("replay").arg("--trace").arg(&trace).output().unwrap();
    assert!(replayed.status.success());
    assert_eq!(replayed.stdout, written);
}

#[test]
fn report_keys_are_sorted() {
    let out = embserve().args(["run", "--scenario"]).arg(scenario_file("quickstart.json")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let top: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = top.clone();
    sorted.sort();
    assert_eq!(top, sorted);
    assert!(top.contains(&"invariants") && top.contains(&"counters"));
}

#[test]
fn sweep_and_oracle_check() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sweep.json");
    let status = embserve()
        .args(["sweep", "--scenario"])
        .arg(scenario_file("quickstart.json"))
        .args(["--seeds", "0..=4", "--report"])
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let parsed: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["runs"], json!(5));
    assert_eq!(parsed["seeds"], json!({"start": 0, "end": 5}));

    let out = embserve()
        .args(["oracle-check", "--instances", "40", "--scenario"])
        .arg(scenario_file("shadow.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let parsed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((parsed["instances"].clone(), parsed["mismatches"].clone()), (json!(40), json!(0)));
}

#[test]
fn bad_inputs_fail() {
    let missing = embserve().args(["run", "--scenario", "/nonexistent.json"]).output().unwrap();
    assert!(!missing.status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "unexpected": 1}"#).unwrap();
    assert!(!embserve().arg("run").arg("--scenario").arg(&bad).output().unwrap().status.success());
    let range = embserve()
        .args(["sweep", "--seeds", "5", "--scenario"])
        .arg(scenario_file("quickstart.json"))
        .output()
        .unwrap();
    assert!(!range.status.success());
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(subcommand: &str) -> (Server, String) {
    let mut child = embserve()
        .args([subcommand, "--port", "0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    (Server(child), addr)
}

fn ask(addr: &str, req: Value) -> Value {
    let mut stream = TcpStream::connect(addr).unwrap();
    writeln!(stream, "{req}").unwrap();
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line).unwrap();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn serve_eo_answers_over_tcp() {
    let (_server, addr) = start("serve-eo");
    let t = json!({"algo": "mf", "config": "base"});
    assert_eq!(ask(&addr, json!({"op": "get_states", "type": t})), json!({"ok": true, "latest": 2, "in_use": 2}));
    assert_eq!(
        ask(&addr, json!({"op": "get_user_embedding", "type": t, "user_id": "u1"})),
        json!({"ok": true, "tf": 2, "vec": [0.5, 0.5], "misses": []})
    );
}

#[test]
fn serve_recs_answers_over_tcp() {
    let (_server, addr) = start("serve-recs");
    let resp = ask(
        &addr,
        json!({"op": "recommend", "user_id": "u1", "geo": "FR", "k": 5, "type": {"algo": "mf", "config": "base"}}),
    );
    let items: Vec<&str> = resp["results"].as_array().unwrap().iter().map(|r| r["item"].as_str().unwrap()).collect();
    assert_eq!(items, vec!["i1", "i2"]);
}
