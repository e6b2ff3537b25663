mod common;

use common::*;
use embserve::scenario::Scenario;
use embserve::sim::trace::Trace;
use embserve::sim::{self, replay, run_scenario, SimError};
use serde_json::json;

fn scenario(json: serde_json::Value) -> Scenario {
    serde_json::from_value(json).unwrap()
}

#[test]
fn without_training_everything_falls_back() {
    let mut json = quickstart_json();
    json["trainer"]["cycles"] = json!(0);
    let out = run_scenario(&scenario(json), 3).unwrap();
    assert!(out.summary.passed, "{}", out.report);
    let c = &out.summary.counters;
    assert_eq!(c["requests"], 20);
    assert_eq!(c["results_embedding"], 0);
    assert!(c["results_fallback"] > 0);
    assert_eq!(c["records_written"], 0);
}

#[test]
fn one_training_cycle_then_one_shadow_cycle_then_requests() {
    let mut json = quickstart_json();
    json["trainer"] = json!({"source": "fixture", "cadence": 1, "cycles": 1, "coverage": 1.0, "seed": 1});
    json["eo"]["poll_cadence"] = json!(1);
    json["indexer"] = json!({"cadence": 1, "cycles": 1, "start": 100});
    json["requests"] = json!({"count": 10, "k": 2, "start": 1000});
    for seed in 0..20 {
        let out = run_scenario(&scenario(json.clone()), seed).unwrap();
        assert!(out.summary.passed, "{}", out.report);
        assert_eq!(out.summary.violations["version_match"], 0);
        assert!(out.summary.counters["results_embedding"] > 0);
        let served: Vec<_> = out.trace.events.iter().filter(|e| e.actor == "serving").collect();
        let last_index = out.trace.events.iter().rfind(|e| e.actor == "indexer").unwrap();
        assert!(served.iter().all(|e| e.step > last_index.step));
    }
}

#[test]
fn runs_are_deterministic_and_replay_identically() {
    let sc = load("shadow.json");
    let a = run_scenario(&sc, 11).unwrap();
    let b = run_scenario(&sc, 11).unwrap();
    assert_eq!(a.report_bytes(), b.report_bytes());
    assert_eq!(a.trace, b.trace);
    let read = Trace::read(a.trace.to_bytes().as_slice()).unwrap();
    assert_eq!(read, a.trace);
    assert_eq!(replay(&read).unwrap().report_bytes(), a.report_bytes());
    assert_ne!(run_scenario(&sc, 12).unwrap().trace, a.trace);
}

#[test]
fn tampered_trace_diverges() {
    let out = run_scenario(&load("quickstart.json"), 5).unwrap();
    let mut trace = out.trace.clone();
    let n = trace.events.len() / 2;
    trace.events[n].digest = "0000000000000000".into();
    match replay(&trace) {
        Err(SimError::ReplayDivergence { step, .. }) => assert_eq!(step, trace.events[n].step),
        other => panic!("expected divergence, got {other:?}"),
    }
    let mut trace = out.trace.clone();
    trace.events.truncate(n);
    assert!(matches!(replay(&trace), Err(SimError::ReplayDivergence { .. })));
    let mut trace = out.trace;
    trace.header.seed += 1;
    assert!(matches!(replay(&trace), Err(SimError::ReplayDivergence { .. })));
}

#[test]
fn malformed_traces_are_rejected() {
    assert!(matches!(Trace::read(&b""[..]), Err(SimError::TraceFormat(_))));
    assert!(matches!(Trace::read(&b"{\"format\":\"other\"}\n"[..]), Err(SimError::TraceFormat(_))));
    let out = run_scenario(&load("quickstart.json"), 0).unwrap();
    let mut trace = out.trace;
    trace.events.swap(0, 1);
    assert!(matches!(Trace::read(trace.to_bytes().as_slice()), Err(SimError::TraceFormat(_))));
}

#[test]
fn empty_seed_range_gives_empty_aggregate() {
    let out = sim::sweep(&load("quickstart.json"), sim::parse_seed_range("7..7").unwrap()).unwrap();
    assert!(out.runs.is_empty());
    assert_eq!(out.report["runs"], json!(0));
    assert_eq!(out.report["failed_seeds"], json!([]));
    assert!(out.total_violations().values().all(|&v| v == 0));
}

#[test]
fn sweep_aggregates_runs() {
    let sc = load("quickstart.json");
    let out = sim::sweep(&sc, 0..8).unwrap();
    assert_eq!(out.runs.len(), 8);
    assert!(out.passed());
    let requests: u64 = out.runs.iter().map(|r| r.counters["requests"]).sum();
    assert_eq!(out.total_counters()["requests"], requests);
    assert_eq!(out.runs[3].counters, run_scenario(&sc, 3).unwrap().summary.counters);
}

#[test]
fn injected_faults_abort_cycles_without_violations() {
    let cases = [("shadow", "eo", 0), ("shadow", "engine", 4), ("incremental", "eo", 0), ("incremental", "engine", 1)];
    for (mode, target, position) in cases {
        let mut json = quickstart_json();
        json["index_mode"] = json!(mode);
        json["faults"] = json!([{"cycle": 1, "step": position, "target": target}]);
        let out = run_scenario(&scenario(json), 2).unwrap();
        assert!(out.summary.passed, "{}", out.report);
        assert_eq!(out.summary.counters["faults_injected"], 1, "{mode} {target}");
        assert_eq!(out.summary.counters["index_aborts"], 1);
        assert_eq!(out.summary.counters["index_cycles"], 3);
    }
}

#[test]
fn faults_on_steps_that_do_not_reach_the_target_are_inert() {
    let mut json = quickstart_json();
    json["faults"] = json!([{"cycle": 0, "step": 4, "target": "eo"}]);
    let out = run_scenario(&scenario(json), 2).unwrap();
    assert!(out.summary.passed);
    assert_eq!(out.summary.counters["faults_injected"], 0);
    assert_eq!(out.summary.counters["index_aborts"], 0);
}

#[test]
fn bundled_scenarios_pass() {
    for name in ["quickstart.json", "shadow.json", "incremental.json", "indirect.json", "sparse_incremental.json"] {
        let out = sim::sweep(&load(name), 0..3).unwrap();
        assert!(out.passed(), "{name}: {}", out.report);
    }
}

#[test]
fn oracle_check_passes() {
    let report = sim::oracle_check(&load("shadow.json"), 50).unwrap();
    assert!(report.passed(), "{:?}", report.first_mismatch);
    assert!(report.embedding_results > 0 && report.fallback_results > 0);
}
