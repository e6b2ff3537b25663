//! Deterministic discrete-event simulation of a full deployment.
//!
//! One scheduler opportunity ("tick") runs at most one actor step: a
//! trainer cycle, an EO poll, a single indexer step or one serving request.
//! The actor is drawn from the enabled ones with a SplitMix64 stream, so an
//! interleaving is a pure function of `(scenario, seed)`. The invariant
//! suite runs after every step.

pub mod check;
pub mod oracle_check;
pub mod trace;

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use embserve_core::hash::{splitmix64, SplitMix64};
use embserve_core::{Aggregate, EmbeddingTypeId, EmbeddingVersion, EntityId, IndexGeneration, IndexedDocument, ModelKind, ScoreMode, WeightedAttributes};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::engine::{IndexMode, IndexTarget, SearchEngine};
use crate::error::{EngineError, EoError};
use crate::indexer::{ChangeRequest, CycleStep, IndexCycle, Indexer};
use crate::orchestrator::{EoApi, Orchestrator, ResolvedUser, UserRef, VersionPair};
use crate::scenario::{FaultTarget, Scenario, ScenarioError, World};
use crate::serving::{Serving, UserRequest};
use crate::store::EmbeddingStore;
use crate::trainer::Trainer;
use crate::wire::result_json;

use check::{CheckConfig, Checker, WindowStats, TRIGGER_ORDERING};
pub use oracle_check::{oracle_check, OracleCheckReport};
use trace::{event_line, Trace, TraceEvent};

/// Upper bound on scheduler opportunities in one run.
const MAX_TICKS: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("deployment setup failed: {0}")]
    Setup(String),
    #[error("replay diverged at step {step}: expected {expected}, got {actual}")]
    ReplayDivergence { step: u64, expected: String, actual: String },
    #[error("scenario did not terminate within {0} scheduler opportunities")]
    NonTerminating(u64),
    #[error("malformed trace: {0}")]
    TraceFormat(String),
    #[error("malformed seed range {0:?}; expected a..b or a..=b")]
    SeedRange(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The components of one deployment, wired as in service mode.
pub struct Deployment {
    pub store: Arc<EmbeddingStore>,
    pub eo: Arc<Orchestrator>,
    pub engine: Arc<SearchEngine>,
    pub indexer: Indexer,
    pub serving: Serving,
}

impl Deployment {
    pub fn new(world: &World) -> Result<Self, SimError> {
        let store = Arc::new(EmbeddingStore::new());
        let eo = Arc::new(Orchestrator::new(Arc::clone(&store), world.scenario.eo.cache_capacity));
        for t in &world.types {
            eo.register_type(t.type_id.clone(), t.model_kind)
                .map_err(|e| SimError::Setup(e.to_string()))?;
        }
        let engine = Arc::new(SearchEngine::new(world.mode, world.scenario.fallback_weight));
        let indexer = Indexer::new(world.types.clone(), world.scenario.indexer.shadow_index_both_versions);
        let kinds: BTreeMap<EmbeddingTypeId, ModelKind> =
            world.types.iter().map(|t| (t.type_id.clone(), t.model_kind)).collect();
        let serving = Serving::new(
            Arc::clone(&eo) as Arc<dyn EoApi>,
            Arc::clone(&engine),
            kinds,
            world.publishers.clone(),
        );
        Ok(Self {
            store,
            eo,
            engine,
            indexer,
            serving,
        })
    }

    pub fn states(&self) -> BTreeMap<EmbeddingTypeId, VersionPair> {
        self.eo
            .type_ids()
            .into_iter()
            .map(|t| {
                let pair = self.eo.states(&t).unwrap_or_default();
                (t, pair)
            })
            .collect()
    }
}

/// An orchestrator that is down.
struct DownEo;

impl EoApi for DownEo {
    fn poll(&self, _: &EmbeddingTypeId) -> Result<VersionPair, EoError> {
        Err(EoError::Unavailable)
    }
    fn states(&self, _: &EmbeddingTypeId) -> Result<VersionPair, EoError> {
        Err(EoError::Unavailable)
    }
    fn set_version_in_use(&self, _: &EmbeddingVersion) -> Result<VersionPair, EoError> {
        Err(EoError::Unavailable)
    }
    fn get_entity_embedding(&self, _: &EmbeddingVersion, _: &EntityId) -> Result<Option<Vec<f64>>, EoError> {
        Err(EoError::Unavailable)
    }
    fn aggregate_embedding(&self, _: &EmbeddingVersion, _: &WeightedAttributes) -> Result<Aggregate, EoError> {
        Err(EoError::Unavailable)
    }
    fn get_user_embedding(&self, _: &EmbeddingTypeId, _: &UserRef) -> Result<Option<ResolvedUser>, EoError> {
        Err(EoError::Unavailable)
    }
}

/// A search engine that is down.
struct DownEngine;

impl IndexTarget for DownEngine {
    fn build_generation(&self, _: Vec<IndexedDocument>) -> Result<Arc<IndexGeneration>, EngineError> {
        Err(EngineError::Unavailable)
    }
    fn swap_generation(&self, _: Arc<IndexGeneration>) -> Result<Arc<IndexGeneration>, EngineError> {
        Err(EngineError::Unavailable)
    }
    fn upsert_document(&self, _: IndexedDocument) -> Result<(), EngineError> {
        Err(EngineError::Unavailable)
    }
    fn delete_document(&self, _: &str) -> Result<IndexedDocument, EngineError> {
        Err(EngineError::Unavailable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Train(usize),
    Poll(usize),
    Index,
    Serve,
}

/// Where scheduling choices come from.
enum Choices<'t> {
    Seeded(SplitMix64),
    Replay(std::slice::Iter<'t, TraceEvent>),
}

/// Per-step counters reported with every run.
pub const COUNTERS: [&str; 17] = [
    "cross_version",
    "faults_injected",
    "gc_dropped",
    "idle_ticks",
    "index_aborts",
    "index_attempts",
    "index_cycles",
    "polls",
    "records_written",
    "requests",
    "requests_failed",
    "results_embedding",
    "results_fallback",
    "steps",
    "trainer_cycles",
    "trainer_errors",
    "version_miss_fallback",
];

/// Machine-readable outcome of one run, alongside its JSON report.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub passed: bool,
    pub violations: BTreeMap<&'static str, u64>,
    pub counters: BTreeMap<&'static str, u64>,
    pub window: WindowStats,
    pub final_states: BTreeMap<EmbeddingTypeId, VersionPair>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub report: Value,
    pub trace: Trace,
}

impl RunOutput {
    /// The canonical report bytes: sorted keys, shortest round-trip floats.
    pub fn report_bytes(&self) -> Vec<u8> {
        report_bytes(&self.report)
    }
}

pub fn report_bytes(report: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("serializable report");
    out.push(b'\n');
    out
}

struct Sim<'w> {
    world: &'w World,
    dep: Deployment,
    trainers: Vec<Trainer>,
    universe: Vec<EntityId>,
    type_ids: Vec<EmbeddingTypeId>,
    seed: u64,
    tick: u64,
    step: u64,
    next_train: Vec<u64>,
    trained: Vec<u64>,
    next_poll: Vec<u64>,
    next_index: u64,
    cycle: Option<IndexCycle>,
    attempt: u64,
    attempt_step: u64,
    attempt_log: Vec<String>,
    completed: u64,
    max_attempts: u64,
    indexed_through: BTreeMap<EmbeddingTypeId, u64>,
    served: u64,
    checker: Checker,
    events: Vec<TraceEvent>,
    index_reports: Vec<Value>,
    counters: BTreeMap<&'static str, u64>,
}

impl<'w> Sim<'w> {
    fn new(world: &'w World, seed: u64) -> Result<Self, SimError> {
        let dep = Deployment::new(world)?;
        let trainers: Vec<Trainer> = world
            .types
            .iter()
            .map(|t| Trainer::new(world.trainer_config(&t.type_id), Arc::clone(&dep.store)))
            .collect();
        let type_ids: Vec<EmbeddingTypeId> = world.types.iter().map(|t| t.type_id.clone()).collect();
        let item_attrs = world
            .items
            .iter()
            .map(|i| (i.catalog.item_id.clone(), i.catalog.attributes.clone()))
            .collect();
        let checker = Checker::new(
            CheckConfig {
                mode: world.mode,
                items_direct: world.model_kind.items_direct(),
                shadow_index_both_versions: world.scenario.indexer.shadow_index_both_versions,
                literal_two_version: world.full_coverage(),
                fallback_weight: world.scenario.fallback_weight,
            },
            item_attrs,
            &type_ids,
        );
        let n = type_ids.len();
        Ok(Self {
            world,
            dep,
            trainers,
            universe: world.entities(),
            type_ids,
            seed,
            tick: 0,
            step: 0,
            next_train: vec![world.scenario.trainer.start; n],
            trained: vec![0; n],
            next_poll: vec![0; n],
            next_index: world.scenario.indexer.start,
            cycle: None,
            attempt: 0,
            attempt_step: 0,
            attempt_log: Vec::new(),
            completed: 0,
            max_attempts: world.scenario.indexer.cycles + world.scenario.faults.len() as u64,
            indexed_through: BTreeMap::new(),
            served: 0,
            checker,
            events: Vec::new(),
            index_reports: Vec::new(),
            counters: COUNTERS.iter().map(|c| (*c, 0)).collect(),
        })
    }

    fn bump(&mut self, counter: &'static str, by: u64) {
        *self.counters.entry(counter).or_default() += by;
    }

    fn finished(&self) -> bool {
        let sc = &self.world.scenario;
        self.trained.iter().all(|&c| c >= sc.trainer.cycles)
            && self.cycle.is_none()
            && (self.completed >= sc.indexer.cycles || self.attempt >= self.max_attempts)
            && self.served >= sc.requests.count
    }

    fn enabled(&self) -> Vec<Slot> {
        let sc = &self.world.scenario;
        let mut out = Vec::new();
        for i in 0..self.type_ids.len() {
            if self.trained[i] < sc.trainer.cycles && self.tick >= self.next_train[i] {
                out.push(Slot::Train(i));
            }
        }
        for i in 0..self.type_ids.len() {
            if self.tick >= self.next_poll[i] {
                out.push(Slot::Poll(i));
            }
        }
        let can_start = self.completed < sc.indexer.cycles && self.attempt < self.max_attempts && self.tick >= self.next_index;
        if self.cycle.is_some() || can_start {
            out.push(Slot::Index);
        }
        if self.served < sc.requests.count && self.tick >= sc.requests.start {
            out.push(Slot::Serve);
        }
        out
    }

    fn slot_of(&self, e: &TraceEvent) -> Option<Slot> {
        let type_index = |prefix: &str| {
            let name = e.action.strip_prefix(prefix)?;
            self.type_ids.iter().position(|t| t.to_string() == name)
        };
        match e.actor.as_str() {
            "trainer" => type_index("train:").map(Slot::Train),
            "eo" => type_index("poll:").map(Slot::Poll),
            "indexer" => Some(Slot::Index),
            "serving" => Some(Slot::Serve),
            _ => None,
        }
    }

    fn run(&mut self, mut choices: Choices<'_>) -> Result<(), SimError> {
        while !self.finished() {
            if self.tick >= MAX_TICKS {
                return Err(SimError::NonTerminating(MAX_TICKS));
            }
            let enabled = self.enabled();
            if enabled.is_empty() {
                self.bump("idle_ticks", 1);
                self.tick += 1;
                continue;
            }
            let slot = match &mut choices {
                Choices::Seeded(rng) => enabled[rng.below(enabled.len() as u64) as usize],
                Choices::Replay(events) => {
                    let expected = events.next().ok_or_else(|| SimError::ReplayDivergence {
                        step: self.step + 1,
                        expected: "end of trace".into(),
                        actual: "further enabled steps".into(),
                    })?;
                    let slot = self.slot_of(expected).filter(|s| expected.tick == self.tick && enabled.contains(s));
                    let Some(slot) = slot else {
                        return Err(SimError::ReplayDivergence {
                            step: self.step + 1,
                            expected: format!("{} {} at tick {}", expected.actor, expected.action, expected.tick),
                            actual: format!("tick {} with {} enabled actors", self.tick, enabled.len()),
                        });
                    };
                    self.execute(slot);
                    let actual = self.events.last().expect("event recorded");
                    if actual != expected {
                        return Err(SimError::ReplayDivergence {
                            step: actual.step,
                            expected: serde_json::to_string(expected).unwrap_or_default(),
                            actual: serde_json::to_string(actual).unwrap_or_default(),
                        });
                    }
                    self.tick += 1;
                    continue;
                }
            };
            self.execute(slot);
            self.tick += 1;
        }
        if let Choices::Replay(mut events) = choices {
            if let Some(extra) = events.next() {
                return Err(SimError::ReplayDivergence {
                    step: extra.step,
                    expected: format!("{} {}", extra.actor, extra.action),
                    actual: "scenario finished".into(),
                });
            }
        }
        Ok(())
    }

    fn record(&mut self, actor: &str, action: String, payload: &str) {
        self.step += 1;
        self.bump("steps", 1);
        self.events.push(TraceEvent::new(self.step, self.tick, actor, action, payload));
    }

    fn execute(&mut self, slot: Slot) {
        let mut trigger = None;
        let mut failed_indexer_step = false;
        let mut index_touched = false;
        match slot {
            Slot::Train(i) => self.train(i),
            Slot::Poll(i) => self.poll(i),
            Slot::Serve => self.serve(),
            Slot::Index => {
                index_touched = true;
                (trigger, failed_indexer_step) = self.index_step();
            }
        }
        let states = self.dep.states();
        self.checker.check_states(self.step, &states, trigger.as_ref(), failed_indexer_step);
        if index_touched {
            let live = self.dep.engine.snapshot();
            self.checker.check_index(self.step, &self.dep.store, &live);
        }
    }

    fn train(&mut self, i: usize) {
        let tf = self.trained[i] + 1;
        let result = self.trainers[i].run_cycle(&self.universe, tf);
        let payload = match &result {
            Ok(n) => {
                self.bump("trainer_cycles", 1);
                self.bump("records_written", *n as u64);
                format!("tf={tf} records={n}")
            }
            Err(e) => {
                self.bump("trainer_errors", 1);
                format!("tf={tf} error={e}")
            }
        };
        self.trained[i] += 1;
        self.next_train[i] = self.tick + self.world.scenario.trainer.cadence;
        let action = format!("train:{}", self.type_ids[i]);
        self.record("trainer", action, &payload);
    }

    fn poll(&mut self, i: usize) {
        let type_id = self.type_ids[i].clone();
        let payload = match self.dep.eo.poll(&type_id) {
            Ok(pair) => pair_json(&pair).to_string(),
            Err(e) => format!("error={}", e.code()),
        };
        self.bump("polls", 1);
        self.next_poll[i] = self.tick + self.world.scenario.eo.poll_cadence;
        self.record("eo", format!("poll:{type_id}"), &payload);
    }

    fn begin_cycle(&self) -> Result<IndexCycle, crate::error::IndexerError> {
        let catalog = self.world.catalog_at(self.completed);
        match self.world.mode {
            IndexMode::Shadow => self.dep.indexer.begin_shadow_cycle(catalog),
            IndexMode::Incremental => {
                let live = self.dep.engine.snapshot();
                let wanted: std::collections::BTreeSet<&str> = catalog.iter().map(|c| c.item_id.as_str()).collect();
                let additions = catalog.iter().filter(|c| live.get(&c.item_id).is_none()).cloned().collect();
                let deletions = live
                    .documents()
                    .filter(|d| !wanted.contains(d.item_id.as_str()))
                    .map(|d| d.item_id.clone())
                    .collect();
                let request = ChangeRequest {
                    additions,
                    deletions,
                    live_catalog: catalog,
                    indexed_through: self.indexed_through.clone(),
                };
                let feed = Arc::clone(&self.dep.store) as Arc<dyn crate::indexer::ChangeFeed>;
                self.dep.indexer.begin_incremental_batch(request, feed)
            }
        }
    }

    /// Runs one indexer step. Returns the type whose trigger succeeded, if
    /// any, and whether the step failed.
    fn index_step(&mut self) -> (Option<EmbeddingTypeId>, bool) {
        if self.cycle.is_none() {
            match self.begin_cycle() {
                Ok(c) => {
                    self.cycle = Some(c);
                    self.attempt_step = 0;
                    self.attempt_log.clear();
                    self.bump("index_attempts", 1);
                }
                Err(e) => {
                    self.bump("index_aborts", 1);
                    self.end_attempt();
                    self.record("indexer", "begin".into(), &format!("error={e}"));
                    return (None, true);
                }
            }
        }
        let cycle = self.cycle.as_mut().expect("cycle started");
        let step = cycle.next_step().expect("unfinished cycle");
        let fault = self
            .world
            .scenario
            .faults
            .iter()
            .find(|f| f.cycle == self.attempt && f.step == self.attempt_step)
            .map(|f| f.target);
        let eo: &dyn EoApi = if fault == Some(FaultTarget::Eo) { &DownEo } else { &*self.dep.eo };
        let engine: &dyn IndexTarget = if fault == Some(FaultTarget::Engine) { &DownEngine } else { &*self.dep.engine };
        let result = cycle.step(eo, engine);
        let pending = cycle.trigger_targets();
        self.attempt_step += 1;
        let action = step.to_string();
        let mut trigger = None;
        let (payload, failed) = match result {
            Ok(outcome) => {
                match &step {
                    CycleStep::Swap => self.checker.on_swap(pending.into_iter().map(|v| v.type_id)),
                    CycleStep::Trigger(t) => {
                        self.checker.on_trigger(t);
                        trigger = Some(t.clone());
                    }
                    _ => {}
                }
                let live = self.dep.engine.snapshot();
                let mut payload = format!("{step} ok generation={} docs={}", live.id(), live.len());
                if let Some(report) = outcome.report {
                    let value = report.to_json();
                    payload = format!("{step} {value}");
                    if report.mode == IndexMode::Incremental {
                        for t in &report.types {
                            if let Some(v) = t.versions_indexed.iter().map(|v| v.time_frame).max() {
                                self.indexed_through.insert(t.type_id.clone(), v);
                            }
                        }
                    }
                    let live = self.dep.engine.snapshot();
                    check::check_report(&mut self.checker, self.step + 1, &report, &live);
                    self.index_reports.push(value);
                    self.completed += 1;
                    self.bump("index_cycles", 1);
                    self.end_attempt();
                }
                (payload, false)
            }
            Err(e) => {
                if fault.is_some() {
                    self.bump("faults_injected", 1);
                }
                self.bump("index_aborts", 1);
                self.end_attempt();
                (format!("{step} error={e}"), true)
            }
        };
        self.check_trigger_order(&step, failed);
        self.record("indexer", action, &payload);
        (trigger, failed)
    }

    /// Shadow triggers follow the swap of the same cycle; incremental
    /// triggers follow every upsert and delete of the batch.
    fn check_trigger_order(&mut self, step: &CycleStep, failed: bool) {
        let at = self.step + 1;
        match step {
            CycleStep::Trigger(_)
                if !failed && self.world.mode == IndexMode::Shadow && !self.attempt_log.iter().any(|s| s == "swap") =>
            {
                self.checker.violate(at, TRIGGER_ORDERING, "trigger before the generation swap".into());
            }
            CycleStep::Upsert(_) | CycleStep::Delete(_) if self.attempt_log.iter().any(|s| s.starts_with("trigger:")) => {
                self.checker.violate(at, TRIGGER_ORDERING, "batch modified after its trigger".into());
            }
            _ => {}
        }
        if !failed {
            self.attempt_log.push(step.to_string());
        }
    }

    fn end_attempt(&mut self) {
        self.cycle = None;
        self.attempt += 1;
        self.next_index = self.tick + self.world.scenario.indexer.cadence;
    }

    fn request(&self, n: u64) -> (UserRequest, EmbeddingTypeId) {
        let mut rng = SplitMix64::new(splitmix64(self.seed ^ 0x5EED_0000_0000_0000) ^ n);
        let user = &self.world.users[rng.below(self.world.users.len() as u64) as usize];
        let publisher_id = if self.world.publishers.is_empty() {
            String::new()
        } else {
            self.world.publishers[rng.below(self.world.publishers.len() as u64) as usize].publisher_id.clone()
        };
        let type_id = self.type_ids[(n % self.type_ids.len() as u64) as usize].clone();
        let req = UserRequest {
            user_id: user.id.clone(),
            user_attributes: user.attributes.clone(),
            user_geo: user.geo.clone(),
            publisher_id,
            k: self.world.scenario.requests.k,
        };
        (req, type_id)
    }

    fn serve(&mut self) {
        let n = self.served;
        let (req, type_id) = self.request(n);
        self.served += 1;
        self.bump("requests", 1);
        let result = self.dep.serving.recommend_traced(&req, &type_id);
        let payload = match &result {
            Ok(served) => {
                let results: Vec<Value> = served.outcome.results.iter().map(result_json).collect();
                let embedding = served.outcome.results.iter().filter(|r| r.mode == ScoreMode::Embedding).count() as u64;
                self.bump("results_embedding", embedding);
                self.bump("results_fallback", served.outcome.results.len() as u64 - embedding);
                self.bump("version_miss_fallback", served.outcome.audit.version_miss_fallback);
                self.bump("cross_version", served.outcome.audit.cross_version);
                json!({
                    "user": req.user_id,
                    "publisher": req.publisher_id,
                    "tf": served.query.user_version().map(|v| v.time_frame),
                    "generation": served.generation.id(),
                    "results": results,
                })
                .to_string()
            }
            Err(e) => {
                self.bump("requests_failed", 1);
                format!("error={}", e.code())
            }
        };
        self.record("serving", format!("recommend:{n}"), &payload);
        if let Ok(served) = &result {
            self.checker.check_request(self.step, &self.dep.store, served);
        }
    }

    /// Drops versions older than `in_use - 1` once the run is over.
    fn collect_garbage(&mut self) {
        let mut dropped = 0;
        for (type_id, pair) in self.dep.states() {
            if let Some(in_use) = pair.in_use {
                if in_use.time_frame >= 2 {
                    dropped += self.dep.store.drop_versions_before(&type_id, in_use.time_frame - 1);
                }
            }
        }
        self.bump("gc_dropped", dropped as u64);
    }

    fn finish(mut self) -> RunOutput {
        self.collect_garbage();
        let final_states = self.dep.states();
        let passed = self.checker.passed();
        let states_json: Map<String, Value> = final_states.iter().map(|(t, p)| (t.to_string(), pair_json(p))).collect();
        let counters: Map<String, Value> = self.counters.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let mut report = json!({
            "scenario": self.world.scenario.name,
            "seed": self.seed,
            "mode": self.world.mode.as_str(),
            "pass": passed,
            "invariants": self.checker.verdicts(),
            "counters": counters,
            "window": self.checker.window().to_json(),
            "final_states": states_json,
            "index_cycles": self.index_reports,
        });
        if let Some(step) = self.checker.first_violation_step() {
            let prefix: Vec<Value> = self.events.iter().take_while(|e| e.step <= step).map(event_line).collect();
            report["offending_trace"] = Value::Array(prefix);
        }
        let summary = RunSummary {
            seed: self.seed,
            passed,
            violations: self.checker.violation_counts(),
            counters: self.counters.clone(),
            window: self.checker.window().clone(),
            final_states,
        };
        RunOutput {
            summary,
            report,
            trace: Trace::new(self.world.scenario.clone(), self.seed, self.events),
        }
    }
}

fn pair_json(p: &VersionPair) -> Value {
    json!({
        "latest": p.latest.as_ref().map(|v| v.time_frame),
        "in_use": p.in_use.as_ref().map(|v| v.time_frame),
    })
}

fn scheduler_rng(scenario: &Scenario, seed: u64) -> SplitMix64 {
    SplitMix64::new(seed ^ splitmix64(scenario.interleaving_seed))
}

/// Executes one seeded interleaving of `world`.
pub fn run_world(world: &World, seed: u64) -> Result<RunOutput, SimError> {
    let mut sim = Sim::new(world, seed)?;
    sim.run(Choices::Seeded(scheduler_rng(&world.scenario, seed)))?;
    Ok(sim.finish())
}

pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunOutput, SimError> {
    run_world(&World::new(scenario.clone())?, seed)
}

/// Re-executes a recorded trace, following its scheduling choices, and
/// fails with `ReplayDivergence` as soon as any step's outcome differs.
pub fn replay(trace: &Trace) -> Result<RunOutput, SimError> {
    let world = World::new(trace.header.scenario.clone())?;
    let mut sim = Sim::new(&world, trace.header.seed)?;
    sim.run(Choices::Replay(trace.events.iter()))?;
    Ok(sim.finish())
}

/// Parses `a..b` (half-open) or `a..=b` (inclusive).
pub fn parse_seed_range(text: &str) -> Result<Range<u64>, SimError> {
    let bad = || SimError::SeedRange(text.to_string());
    let (a, rest) = text.split_once("..").ok_or_else(bad)?;
    let start: u64 = a.trim().parse().map_err(|_| bad())?;
    let end = match rest.strip_prefix('=') {
        Some(b) => b.trim().parse::<u64>().map_err(|_| bad())?.checked_add(1).ok_or_else(bad)?,
        None => rest.trim().parse().map_err(|_| bad())?,
    };
    Ok(start..end.max(start))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub runs: Vec<RunSummary>,
    pub report: Value,
}

impl SweepOutput {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.passed)
    }

    pub fn total_violations(&self) -> BTreeMap<&'static str, u64> {
        let mut out: BTreeMap<&'static str, u64> = check::INVARIANTS.iter().map(|n| (*n, 0)).collect();
        for r in &self.runs {
            for (k, v) in &r.violations {
                *out.entry(k).or_default() += v;
            }
        }
        out
    }

    pub fn total_counters(&self) -> BTreeMap<&'static str, u64> {
        let mut out: BTreeMap<&'static str, u64> = COUNTERS.iter().map(|n| (*n, 0)).collect();
        for r in &self.runs {
            for (k, v) in &r.counters {
                *out.entry(k).or_default() += v;
            }
        }
        out
    }
}

/// Runs every seed in `seeds` and aggregates the verdicts. Seeds are
/// spread over threads; the aggregate is assembled in seed order.
pub fn sweep(scenario: &Scenario, seeds: Range<u64>) -> Result<SweepOutput, SimError> {
    let world = World::new(scenario.clone())?;
    let all: Vec<u64> = seeds.clone().collect();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(all.len().max(1));
    let chunk = all.len().div_ceil(threads.max(1)).max(1);
    let results: Vec<Result<Vec<RunSummary>, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = all
            .chunks(chunk)
            .map(|part| {
                let world = &world;
                scope.spawn(move || {
                    part.iter()
                        .map(|&seed| run_world(world, seed).map(|o| o.summary))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut runs = Vec::with_capacity(all.len());
    for r in results {
        runs.extend(r?);
    }
    let mut out = SweepOutput { runs, report: Value::Null };
    let mut window = WindowStats::default();
    for r in &out.runs {
        window.fallback_results += r.window.fallback_results;
        window.fallback_requests += r.window.fallback_requests;
        window.outside_fallback_results += r.window.outside_fallback_results;
        window.requests_in_window += r.window.requests_in_window;
    }
    let failed: Vec<u64> = out.runs.iter().filter(|r| !r.passed).map(|r| r.seed).collect();
    let violations: Map<String, Value> = out.total_violations().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let counters: Map<String, Value> = out.total_counters().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    out.report = json!({
        "scenario": scenario.name,
        "seeds": {"start": seeds.start, "end": seeds.end},
        "runs": out.runs.len(),
        "passed": out.runs.len() - failed.len(),
        "pass": failed.is_empty(),
        "failed_seeds": failed,
        "violations": violations,
        "counters": counters,
        "window": {
            "fallback_results": window.fallback_results,
            "fallback_requests": window.fallback_requests,
            "outside_fallback_results": window.outside_fallback_results,
            "requests_in_window": window.requests_in_window,
        },
    });
    Ok(out)
}
