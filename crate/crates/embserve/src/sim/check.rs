//! The invariant suite. Every check reads observable state only: the EO's
//! version states, the live index generation, the store and the responses
//! serving returned.

use std::collections::{BTreeMap, BTreeSet};

use embserve_core::oracle::brute_force;
use embserve_core::{
    weighted_sum, EmbeddingTypeId, EmbeddingVersion, EntityId, IndexGeneration, ScoreMode, WeightedAttributes,
};
use serde_json::{json, Value};

use crate::engine::IndexMode;
use crate::indexer::IndexCycleReport;
use crate::orchestrator::VersionPair;
use crate::serving::ServedResponse;
use crate::store::EmbeddingStore;

pub const ABORT_SAFETY: &str = "abort_safety";
pub const FILTER_SOUNDNESS: &str = "filter_soundness";
pub const GENERATION_ISOLATION: &str = "generation_isolation";
pub const MONOTONICITY: &str = "monotonicity";
pub const RANKING_ORACLE: &str = "ranking_oracle";
pub const REPORT_CONSISTENCY: &str = "report_consistency";
pub const SHADOW_WINDOW: &str = "shadow_window";
pub const TRIGGER_EXCLUSIVITY: &str = "trigger_exclusivity";
pub const TRIGGER_ORDERING: &str = "trigger_ordering";
pub const TWO_VERSION_SAFETY: &str = "two_version_safety";
pub const VERSION_MATCH: &str = "version_match";

pub const INVARIANTS: [&str; 11] = [
    ABORT_SAFETY,
    FILTER_SOUNDNESS,
    GENERATION_ISOLATION,
    MONOTONICITY,
    RANKING_ORACLE,
    REPORT_CONSISTENCY,
    SHADOW_WINDOW,
    TRIGGER_EXCLUSIVITY,
    TRIGGER_ORDERING,
    TWO_VERSION_SAFETY,
    VERSION_MATCH,
];

#[derive(Debug, Clone, Default)]
struct Tally {
    count: u64,
    first: Option<(u64, String)>,
}

/// How the checker decides which documents must carry the in-use vector.
#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub mode: IndexMode,
    pub items_direct: bool,
    pub shadow_index_both_versions: bool,
    /// Every item that ever had an embedding must carry the in-use vector,
    /// not only those the store can resolve at the in-use version.
    pub literal_two_version: bool,
    pub fallback_weight: f64,
}

/// Statistics about fallback scoring of items that could have been scored
/// by embedding.
#[derive(Debug, Clone, Default)]
pub struct WindowStats {
    pub fallback_results: u64,
    pub fallback_requests: u64,
    pub outside_fallback_results: u64,
    pub requests_in_window: u64,
    /// Steps of requests that received at least one window fallback.
    pub fallback_steps: Vec<u64>,
}

impl WindowStats {
    pub fn to_json(&self) -> Value {
        json!({
            "fallback_results": self.fallback_results,
            "fallback_requests": self.fallback_requests,
            "outside_fallback_results": self.outside_fallback_results,
            "requests_in_window": self.requests_in_window,
            "fallback_steps": self.fallback_steps,
        })
    }
}

pub struct Checker {
    config: CheckConfig,
    item_attrs: BTreeMap<String, WeightedAttributes>,
    tallies: BTreeMap<&'static str, Tally>,
    first_violation_step: Option<u64>,
    states: BTreeMap<EmbeddingTypeId, VersionPair>,
    resolved: BTreeMap<(EmbeddingVersion, String), Option<Vec<f64>>>,
    ever_embedded: BTreeSet<(EmbeddingTypeId, String)>,
    window_open: BTreeSet<EmbeddingTypeId>,
    window: WindowStats,
    cross_version: u64,
}

impl Checker {
    pub fn new(config: CheckConfig, item_attrs: BTreeMap<String, WeightedAttributes>, types: &[EmbeddingTypeId]) -> Self {
        Self {
            config,
            item_attrs,
            tallies: INVARIANTS.iter().map(|n| (*n, Tally::default())).collect(),
            first_violation_step: None,
            states: types.iter().map(|t| (t.clone(), VersionPair::default())).collect(),
            resolved: BTreeMap::new(),
            ever_embedded: BTreeSet::new(),
            window_open: BTreeSet::new(),
            window: WindowStats::default(),
            cross_version: 0,
        }
    }

    pub fn violate(&mut self, step: u64, invariant: &'static str, message: String) {
        let tally = self.tallies.entry(invariant).or_default();
        tally.count += 1;
        if tally.first.is_none() {
            tally.first = Some((step, message));
        }
        if self.first_violation_step.is_none() {
            self.first_violation_step = Some(step);
        }
    }

    pub fn passed(&self) -> bool {
        self.first_violation_step.is_none()
    }

    pub fn first_violation_step(&self) -> Option<u64> {
        self.first_violation_step
    }

    pub fn window(&self) -> &WindowStats {
        &self.window
    }

    pub fn cross_version(&self) -> u64 {
        self.cross_version
    }

    pub fn is_window_open(&self, type_id: &EmbeddingTypeId) -> bool {
        self.window_open.contains(type_id)
    }

    pub fn verdicts(&self) -> Value {
        let map: serde_json::Map<String, Value> = self
            .tallies
            .iter()
            .map(|(name, t)| {
                let mut v = json!({"pass": t.count == 0, "violations": t.count});
                if let Some((step, msg)) = &t.first {
                    v["first"] = json!({"step": step, "message": msg});
                }
                (name.to_string(), v)
            })
            .collect();
        Value::Object(map)
    }

    pub fn violation_counts(&self) -> BTreeMap<&'static str, u64> {
        self.tallies.iter().map(|(n, t)| (*n, t.count)).collect()
    }

    /// A generation has been swapped in; until each listed type is
    /// triggered, queries may carry a version the index no longer holds.
    pub fn on_swap(&mut self, pending_triggers: impl IntoIterator<Item = EmbeddingTypeId>) {
        self.window_open.extend(pending_triggers);
    }

    pub fn on_trigger(&mut self, type_id: &EmbeddingTypeId) {
        self.window_open.remove(type_id);
    }

    /// Monotonicity, `in_use <= latest`, and that only `trigger` (the
    /// indexer's trigger step for that type) moved `in_use`.
    pub fn check_states(
        &mut self,
        step: u64,
        now: &BTreeMap<EmbeddingTypeId, VersionPair>,
        trigger: Option<&EmbeddingTypeId>,
        failed_indexer_step: bool,
    ) {
        let tf = |v: &Option<EmbeddingVersion>| v.as_ref().map(|v| v.time_frame);
        for (type_id, pair) in now {
            let before = self.states.get(type_id).cloned().unwrap_or_default();
            if tf(&pair.latest) < tf(&before.latest) {
                self.violate(step, MONOTONICITY, format!("{type_id}: latest regressed {:?} -> {:?}", tf(&before.latest), tf(&pair.latest)));
            }
            if tf(&pair.in_use) < tf(&before.in_use) {
                self.violate(step, MONOTONICITY, format!("{type_id}: in_use regressed {:?} -> {:?}", tf(&before.in_use), tf(&pair.in_use)));
            }
            if tf(&pair.in_use) > tf(&pair.latest) {
                self.violate(step, MONOTONICITY, format!("{type_id}: in_use {:?} ahead of latest {:?}", tf(&pair.in_use), tf(&pair.latest)));
            }
            if pair.in_use != before.in_use {
                if failed_indexer_step {
                    self.violate(step, ABORT_SAFETY, format!("{type_id}: failed step changed in_use"));
                } else if trigger != Some(type_id) {
                    self.violate(step, TRIGGER_EXCLUSIVITY, format!("{type_id}: in_use changed outside its trigger step"));
                }
            }
            self.states.insert(type_id.clone(), pair.clone());
        }
    }

    /// The store's vector for `item` at `version`, or `None` when the item
    /// has no embedding there.
    fn resolve(&mut self, store: &EmbeddingStore, version: &EmbeddingVersion, item: &str) -> Option<Vec<f64>> {
        let key = (version.clone(), item.to_string());
        if let Some(hit) = self.resolved.get(&key) {
            return hit.clone();
        }
        let value = if self.config.items_direct {
            EntityId::item(item).ok().and_then(|e| store.get(version, &e))
        } else {
            match self.item_attrs.get(item) {
                Some(attrs) if !attrs.is_empty() => {
                    weighted_sum(version.type_id.dimension(), attrs, |e| store.get(version, e))
                        .ok()
                        .and_then(|a| a.vector)
                }
                _ => None,
            }
        };
        // A version is written in one batch, so a resolved vector is final.
        // Unresolved answers are only cached once the version exists.
        if value.is_some() || store.contains_version(version) {
            self.resolved.insert(key, value.clone());
        }
        value
    }

    /// Every live document must carry the in-use vector of each type,
    /// bit-equal to the store's, whenever the item has one. In shadow mode a
    /// gap is tolerated only inside the swap-to-trigger window with the
    /// both-versions option off.
    pub fn check_index(&mut self, step: u64, store: &EmbeddingStore, generation: &IndexGeneration) {
        let states: Vec<(EmbeddingTypeId, Option<EmbeddingVersion>)> =
            self.states.iter().map(|(t, p)| (t.clone(), p.in_use.clone())).collect();
        for doc in generation.documents() {
            for (type_id, in_use) in &states {
                if doc.versions_of(type_id).next().is_some() {
                    self.ever_embedded.insert((type_id.clone(), doc.item_id.clone()));
                }
                let Some(version) = in_use else { continue };
                let expected = self.resolve(store, version, &doc.item_id);
                let indexed = doc.vectors.get(version);
                if let (Some(expected), Some(indexed)) = (&expected, indexed) {
                    if !bit_equal(expected, indexed) {
                        self.violate(step, VERSION_MATCH, format!("{}: vector under {version} differs from the store", doc.item_id));
                    }
                    continue;
                }
                if indexed.is_some() {
                    self.violate(step, VERSION_MATCH, format!("{}: vector under {version} the store does not have", doc.item_id));
                    continue;
                }
                let required = expected.is_some()
                    || (self.config.literal_two_version
                        && self.ever_embedded.contains(&(type_id.clone(), doc.item_id.clone())));
                if !required {
                    continue;
                }
                match self.config.mode {
                    IndexMode::Incremental => self.violate(
                        step,
                        TWO_VERSION_SAFETY,
                        format!("{}: live document lacks in-use version {version}", doc.item_id),
                    ),
                    IndexMode::Shadow => {
                        if self.config.shadow_index_both_versions || !self.window_open.contains(type_id) {
                            self.violate(
                                step,
                                SHADOW_WINDOW,
                                format!("{}: document lacks in-use version {version} outside the swap-to-trigger window", doc.item_id),
                            );
                        }
                    }
                }
            }
        }
    }

    /// Checks one served response against the generation it ran on and the
    /// EO states at the moment of the request.
    pub fn check_request(&mut self, step: u64, store: &EmbeddingStore, served: &ServedResponse) {
        let q = &served.query;
        let generation = &served.generation;
        let type_id = &q.type_id;
        let in_use = self.states.get(type_id).and_then(|p| p.in_use.clone());
        if q.user_version() != in_use.as_ref() && q.user.is_some() {
            self.violate(step, VERSION_MATCH, format!("query version {:?} is not the in-use version", q.user_version().map(|v| v.time_frame)));
        }
        self.cross_version += served.outcome.audit.cross_version;
        if served.outcome.audit.cross_version > 0 {
            self.violate(step, VERSION_MATCH, format!("{} cross-version inner products", served.outcome.audit.cross_version));
        }
        if served.outcome.generation != generation.id() {
            self.violate(step, GENERATION_ISOLATION, "results report a different generation".into());
        }
        let in_window = q.user.is_some() && self.window_open.contains(type_id);
        if in_window {
            self.window.requests_in_window += 1;
        }
        let mut window_hits = 0;
        let mut outside_hits = 0;
        for r in &served.outcome.results {
            let Some(doc) = generation.get(&r.item_id) else {
                self.violate(step, GENERATION_ISOLATION, format!("{} is not in the generation queried", r.item_id));
                continue;
            };
            if !doc.is_eligible(&q.user_geo, &q.blocked_providers) {
                self.violate(step, FILTER_SOUNDNESS, format!("{} violates the request filters", r.item_id));
            }
            match (r.mode, &q.user) {
                (ScoreMode::Embedding, Some(user)) => {
                    if r.version_used.as_ref() != Some(&user.version) {
                        self.violate(step, VERSION_MATCH, format!("{} scored under a different version", r.item_id));
                    } else if let Some(v) = doc.vectors.get(&user.version) {
                        let expected = user.vector.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b);
                        if expected.to_bits() != r.score.to_bits() {
                            self.violate(step, VERSION_MATCH, format!("{} embedding score differs from recomputation", r.item_id));
                        }
                    }
                }
                (ScoreMode::Embedding, None) => {
                    self.violate(step, VERSION_MATCH, format!("{} embedding-scored without a user vector", r.item_id));
                }
                (ScoreMode::Fallback, Some(user)) => {
                    if doc.vectors.contains_key(&user.version) {
                        self.violate(step, VERSION_MATCH, format!("{} fallback-scored despite a matching vector", r.item_id));
                    } else if self.resolve(store, &user.version, &r.item_id).is_some() {
                        if in_window {
                            window_hits += 1;
                        } else {
                            outside_hits += 1;
                        }
                    }
                }
                (ScoreMode::Fallback, None) => {}
            }
        }
        if window_hits > 0 {
            self.window.fallback_results += window_hits;
            self.window.fallback_requests += 1;
            self.window.fallback_steps.push(step);
            if self.config.mode == IndexMode::Incremental {
                self.violate(step, TWO_VERSION_SAFETY, format!("{window_hits} spurious fallbacks"));
            } else if self.config.shadow_index_both_versions {
                self.violate(step, SHADOW_WINDOW, format!("{window_hits} window fallbacks with both versions indexed"));
            }
        }
        if outside_hits > 0 {
            self.window.outside_fallback_results += outside_hits;
            let name = match self.config.mode {
                IndexMode::Incremental => TWO_VERSION_SAFETY,
                IndexMode::Shadow => SHADOW_WINDOW,
            };
            self.violate(step, name, format!("{outside_hits} embeddable items fallback-scored outside the swap-to-trigger window"));
        }
        let expected = brute_force(q, generation.documents(), self.config.fallback_weight);
        let same = expected.len() == served.outcome.results.len()
            && expected.iter().zip(&served.outcome.results).all(|(a, b)| {
                a.item_id == b.item_id
                    && a.mode == b.mode
                    && a.version_used == b.version_used
                    && a.score.to_bits() == b.score.to_bits()
            });
        if !same {
            self.violate(step, RANKING_ORACLE, "results differ from the linear-scan reference".into());
        }
    }
}

/// Per-type counts must add up, and a shadow report must match a recount
/// of the generation it published.
pub fn check_report(checker: &mut Checker, step: u64, report: &IndexCycleReport, live: &IndexGeneration) {
    for t in &report.types {
        if t.items_with_embedding + t.items_fallback_only != t.items_total {
            checker.violate(step, REPORT_CONSISTENCY, format!("{}: counts do not add up", t.type_id));
        }
        if report.mode == IndexMode::Shadow && report.generation == Some(live.id()) {
            let with = live.documents().filter(|d| d.versions_of(&t.type_id).next().is_some()).count();
            if t.items_total != live.len() || t.items_with_embedding != with {
                checker.violate(step, REPORT_CONSISTENCY, format!("{}: report disagrees with the index dump", t.type_id));
            }
        }
    }
}

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
