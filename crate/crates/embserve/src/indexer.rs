//! The indexing layer.
//!
//! A shadow cycle reads each type's latest version, builds a fresh
//! generation with every catalog item, swaps it in and only then advances
//! the version in use. An incremental batch reads latest and in-use
//! together, upserts each changed item carrying both vectors, and advances
//! the version in use after the whole batch. Cycles are step machines so a
//! scheduler can interleave other actors between any two steps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use embserve_core::{
    EmbeddingTypeId, EmbeddingVersion, EntityId, IndexGeneration, IndexedDocument, ModelKind, WeightedAttributes,
};
use serde_json::{json, Value};

use crate::engine::{IndexMode, IndexTarget};
use crate::error::{EngineError, EoError, IndexerError};
use crate::orchestrator::EoApi;
use crate::store::EmbeddingStore;
use crate::trainer::changed_entities;

/// Item data indexed alongside the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogItem {
    pub item_id: String,
    pub provider_id: String,
    pub geo_targets: BTreeSet<String>,
    pub attributes: WeightedAttributes,
}

impl CatalogItem {
    fn document(&self) -> IndexedDocument {
        IndexedDocument {
            item_id: self.item_id.clone(),
            provider_id: self.provider_id.clone(),
            geo_targets: self.geo_targets.clone(),
            attributes: self.attributes.clone(),
            vectors: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedType {
    pub type_id: EmbeddingTypeId,
    pub model_kind: ModelKind,
}

/// Source of "a new embedding was computed for this entity" events.
pub trait ChangeFeed: Send + Sync {
    fn changed_entities(&self, type_id: &EmbeddingTypeId, since: Option<u64>, now: u64) -> BTreeSet<EntityId>;
}

impl ChangeFeed for EmbeddingStore {
    fn changed_entities(&self, type_id: &EmbeddingTypeId, since: Option<u64>, now: u64) -> BTreeSet<EntityId> {
        changed_entities(self, type_id, since, now)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeCounts {
    pub type_id: EmbeddingTypeId,
    pub versions_indexed: Vec<EmbeddingVersion>,
    pub items_total: usize,
    pub items_with_embedding: usize,
    pub items_fallback_only: usize,
    pub triggered_in_use: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexCycleReport {
    pub mode: IndexMode,
    pub types: Vec<TypeCounts>,
    pub upserts: usize,
    pub deletions: usize,
    pub unknown_deletions: usize,
    pub generation: Option<u64>,
}

impl IndexCycleReport {
    pub fn to_json(&self) -> Value {
        let types: Vec<Value> = self
            .types
            .iter()
            .map(|t| {
                json!({
                    "type": t.type_id.to_string(),
                    "versions_indexed": t.versions_indexed.iter().map(|v| v.time_frame).collect::<Vec<_>>(),
                    "items_total": t.items_total,
                    "items_with_embedding": t.items_with_embedding,
                    "items_fallback_only": t.items_fallback_only,
                    "triggered_in_use": t.triggered_in_use,
                })
            })
            .collect();
        json!({
            "mode": self.mode.as_str(),
            "types": types,
            "upserts": self.upserts,
            "deletions": self.deletions,
            "unknown_deletions": self.unknown_deletions,
            "generation": self.generation,
        })
    }

    pub fn counts(&self, type_id: &EmbeddingTypeId) -> Option<&TypeCounts> {
        self.types.iter().find(|t| &t.type_id == type_id)
    }
}

/// One schedulable unit of an indexing cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CycleStep {
    ReadStates,
    IndexItem(String),
    Build,
    Swap,
    Upsert(String),
    Delete(String),
    Trigger(EmbeddingTypeId),
}

impl fmt::Display for CycleStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CycleStep::ReadStates => f.write_str("read_states"),
            CycleStep::IndexItem(id) => write!(f, "index_item:{id}"),
            CycleStep::Build => f.write_str("build"),
            CycleStep::Swap => f.write_str("swap"),
            CycleStep::Upsert(id) => write!(f, "upsert:{id}"),
            CycleStep::Delete(id) => write!(f, "delete:{id}"),
            CycleStep::Trigger(t) => write!(f, "trigger:{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: CycleStep,
    /// Set when this step completed the cycle.
    pub report: Option<IndexCycleReport>,
}

/// Marks the engine's single indexing slot as taken until dropped.
#[derive(Debug)]
struct CycleSlot(Arc<AtomicBool>);

impl Drop for CycleSlot {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub struct Indexer {
    types: Vec<IndexedType>,
    shadow_index_both_versions: bool,
    busy: Arc<AtomicBool>,
}

/// What an incremental batch must apply besides the change feed.
#[derive(Debug, Clone, Default)]
pub struct ChangeRequest {
    /// Items entering the catalog in this batch.
    pub additions: Vec<CatalogItem>,
    /// Items leaving the catalog in this batch.
    pub deletions: Vec<String>,
    /// Every item that stays live after the batch, used to resolve changed
    /// entities to catalog items.
    pub live_catalog: Vec<CatalogItem>,
    /// Time frame each type was last fully indexed through.
    pub indexed_through: BTreeMap<EmbeddingTypeId, u64>,
}

impl Indexer {
    pub fn new(types: Vec<IndexedType>, shadow_index_both_versions: bool) -> Self {
        Self {
            types,
            shadow_index_both_versions,
            busy: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn types(&self) -> &[IndexedType] {
        &self.types
    }

    fn claim(&self) -> Result<CycleSlot, IndexerError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| IndexerError::CycleInProgress)?;
        Ok(CycleSlot(Arc::clone(&self.busy)))
    }

    pub fn begin_shadow_cycle(&self, mut catalog: Vec<CatalogItem>) -> Result<IndexCycle, IndexerError> {
        let slot = self.claim()?;
        catalog.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        Ok(IndexCycle::Shadow(ShadowCycle {
            _slot: slot,
            types: self.types.clone(),
            both_versions: self.shadow_index_both_versions,
            catalog,
            plans: Vec::new(),
            docs: Vec::new(),
            generation: None,
            triggered: BTreeSet::new(),
            phase: ShadowPhase::ReadStates,
        }))
    }

    pub fn begin_incremental_batch(
        &self,
        request: ChangeRequest,
        feed: Arc<dyn ChangeFeed>,
    ) -> Result<IndexCycle, IndexerError> {
        let slot = self.claim()?;
        Ok(IndexCycle::Incremental(IncrementalBatch {
            _slot: slot,
            types: self.types.clone(),
            request,
            feed,
            plans: Vec::new(),
            upserts: Vec::new(),
            counts: BTreeMap::new(),
            unknown_deletions: 0,
            triggered: BTreeSet::new(),
            phase: IncrementalPhase::ReadStates,
        }))
    }

    pub fn run_shadow_cycle(
        &self,
        catalog: Vec<CatalogItem>,
        eo: &dyn EoApi,
        engine: &dyn IndexTarget,
    ) -> Result<IndexCycleReport, IndexerError> {
        self.begin_shadow_cycle(catalog)?.run(eo, engine)
    }

    pub fn run_incremental_batch(
        &self,
        request: ChangeRequest,
        feed: Arc<dyn ChangeFeed>,
        eo: &dyn EoApi,
        engine: &dyn IndexTarget,
    ) -> Result<IndexCycleReport, IndexerError> {
        self.begin_incremental_batch(request, feed)?.run(eo, engine)
    }
}

/// Versions a cycle indexes for one type.
#[derive(Debug, Clone)]
struct TypePlan {
    indexed: IndexedType,
    latest: Option<EmbeddingVersion>,
    /// Indexed in addition to `latest`: the in-use version.
    also: Option<EmbeddingVersion>,
}

impl TypePlan {
    fn versions(&self) -> Vec<EmbeddingVersion> {
        let mut out: Vec<EmbeddingVersion> = self.also.iter().chain(self.latest.iter()).cloned().collect();
        out.dedup();
        out
    }
}

fn fetch(
    eo: &dyn EoApi,
    indexed: &IndexedType,
    version: &EmbeddingVersion,
    item: &CatalogItem,
) -> Result<Option<Vec<f64>>, EoError> {
    if indexed.model_kind.items_direct() {
        let entity = EntityId::item(item.item_id.as_str()).map_err(EoError::Core)?;
        eo.get_entity_embedding(version, &entity)
    } else if item.attributes.is_empty() {
        Ok(None)
    } else {
        Ok(eo.aggregate_embedding(version, &item.attributes)?.vector)
    }
}

/// Builds `item`'s document with every planned version that resolves.
fn assemble(eo: &dyn EoApi, plans: &[TypePlan], item: &CatalogItem) -> Result<IndexedDocument, EoError> {
    let mut doc = item.document();
    for plan in plans {
        for version in plan.versions() {
            if let Some(v) = fetch(eo, &plan.indexed, &version, item)? {
                doc.vectors.insert(version, v);
            }
        }
    }
    Ok(doc)
}

fn tally(counts: &mut BTreeMap<EmbeddingTypeId, (usize, usize)>, plans: &[TypePlan], doc: &IndexedDocument) {
    for plan in plans {
        let entry = counts.entry(plan.indexed.type_id.clone()).or_default();
        entry.0 += 1;
        if doc.versions_of(&plan.indexed.type_id).next().is_some() {
            entry.1 += 1;
        }
    }
}

fn type_counts(
    plans: &[TypePlan],
    counts: &BTreeMap<EmbeddingTypeId, (usize, usize)>,
    triggered: &BTreeSet<EmbeddingTypeId>,
) -> Vec<TypeCounts> {
    plans
        .iter()
        .map(|p| {
            let (total, with) = counts.get(&p.indexed.type_id).copied().unwrap_or_default();
            TypeCounts {
                type_id: p.indexed.type_id.clone(),
                versions_indexed: p.versions(),
                items_total: total,
                items_with_embedding: with,
                items_fallback_only: total - with,
                triggered_in_use: triggered.contains(&p.indexed.type_id),
            }
        })
        .collect()
}

fn trigger_targets(plans: &[TypePlan]) -> Vec<EmbeddingVersion> {
    plans.iter().filter_map(|p| p.latest.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShadowPhase {
    ReadStates,
    Item(usize),
    Build,
    Swap,
    Trigger(usize),
    Done,
    Aborted,
}

pub struct ShadowCycle {
    _slot: CycleSlot,
    types: Vec<IndexedType>,
    both_versions: bool,
    catalog: Vec<CatalogItem>,
    plans: Vec<TypePlan>,
    docs: Vec<IndexedDocument>,
    generation: Option<Arc<IndexGeneration>>,
    triggered: BTreeSet<EmbeddingTypeId>,
    phase: ShadowPhase,
}

impl ShadowCycle {
    fn after_items(&self, next: usize) -> ShadowPhase {
        if next < self.catalog.len() {
            ShadowPhase::Item(next)
        } else {
            ShadowPhase::Build
        }
    }

    fn after_trigger(&self, next: usize) -> ShadowPhase {
        if next < trigger_targets(&self.plans).len() {
            ShadowPhase::Trigger(next)
        } else {
            ShadowPhase::Done
        }
    }

    fn next_step(&self) -> Option<CycleStep> {
        Some(match self.phase {
            ShadowPhase::ReadStates => CycleStep::ReadStates,
            ShadowPhase::Item(i) => CycleStep::IndexItem(self.catalog[i].item_id.clone()),
            ShadowPhase::Build => CycleStep::Build,
            ShadowPhase::Swap => CycleStep::Swap,
            ShadowPhase::Trigger(i) => CycleStep::Trigger(trigger_targets(&self.plans)[i].type_id.clone()),
            ShadowPhase::Done | ShadowPhase::Aborted => return None,
        })
    }

    fn step(&mut self, eo: &dyn EoApi, engine: &dyn IndexTarget) -> Result<Option<IndexCycleReport>, IndexerError> {
        match self.phase {
            ShadowPhase::ReadStates => {
                let mut plans = Vec::with_capacity(self.types.len());
                for t in &self.types {
                    let pair = eo.states(&t.type_id)?;
                    let also = if self.both_versions { pair.in_use } else { None };
                    plans.push(TypePlan {
                        indexed: t.clone(),
                        latest: pair.latest,
                        also,
                    });
                }
                self.plans = plans;
                self.phase = self.after_items(0);
            }
            ShadowPhase::Item(i) => {
                let doc = assemble(eo, &self.plans, &self.catalog[i])?;
                self.docs.push(doc);
                self.phase = self.after_items(i + 1);
            }
            ShadowPhase::Build => {
                self.generation = Some(engine.build_generation(self.docs.clone())?);
                self.phase = ShadowPhase::Swap;
            }
            ShadowPhase::Swap => {
                let generation = self.generation.clone().expect("built before swap");
                engine.swap_generation(generation)?;
                self.phase = self.after_trigger(0);
            }
            ShadowPhase::Trigger(i) => {
                let target = trigger_targets(&self.plans)[i].clone();
                eo.set_version_in_use(&target)?;
                self.triggered.insert(target.type_id);
                self.phase = self.after_trigger(i + 1);
            }
            ShadowPhase::Done | ShadowPhase::Aborted => return Err(IndexerError::Finished),
        }
        if self.phase != ShadowPhase::Done {
            return Ok(None);
        }
        let mut counts = BTreeMap::new();
        for doc in &self.docs {
            tally(&mut counts, &self.plans, doc);
        }
        Ok(Some(IndexCycleReport {
            mode: IndexMode::Shadow,
            types: type_counts(&self.plans, &counts, &self.triggered),
            upserts: 0,
            deletions: 0,
            unknown_deletions: 0,
            generation: self.generation.as_ref().map(|g| g.id()),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IncrementalPhase {
    ReadStates,
    Upsert(usize),
    Delete(usize),
    Trigger(usize),
    Done,
    Aborted,
}

pub struct IncrementalBatch {
    _slot: CycleSlot,
    types: Vec<IndexedType>,
    request: ChangeRequest,
    feed: Arc<dyn ChangeFeed>,
    plans: Vec<TypePlan>,
    upserts: Vec<CatalogItem>,
    counts: BTreeMap<EmbeddingTypeId, (usize, usize)>,
    unknown_deletions: usize,
    triggered: BTreeSet<EmbeddingTypeId>,
    phase: IncrementalPhase,
}

impl IncrementalBatch {
    /// Items to (re)index: additions plus live items with a new embedding
    /// for any type since it was last indexed through.
    fn plan_upserts(&self) -> Vec<CatalogItem> {
        let deleted: BTreeSet<&str> = self.request.deletions.iter().map(String::as_str).collect();
        let mut chosen: BTreeMap<String, CatalogItem> = self
            .request
            .additions
            .iter()
            .filter(|i| !deleted.contains(i.item_id.as_str()))
            .map(|i| (i.item_id.clone(), i.clone()))
            .collect();
        for plan in &self.plans {
            let Some(latest) = &plan.latest else { continue };
            let since = self.request.indexed_through.get(&plan.indexed.type_id).copied();
            let changed = self.feed.changed_entities(&plan.indexed.type_id, since, latest.time_frame);
            if changed.is_empty() {
                continue;
            }
            for item in &self.request.live_catalog {
                if deleted.contains(item.item_id.as_str()) || chosen.contains_key(&item.item_id) {
                    continue;
                }
                let hit = if plan.indexed.model_kind.items_direct() {
                    EntityId::item(item.item_id.as_str()).is_ok_and(|e| changed.contains(&e))
                } else {
                    item.attributes.iter().any(|(a, _)| changed.contains(a))
                };
                if hit {
                    chosen.insert(item.item_id.clone(), item.clone());
                }
            }
        }
        chosen.into_values().collect()
    }

    fn after_upsert(&self, next: usize) -> IncrementalPhase {
        if next < self.upserts.len() {
            IncrementalPhase::Upsert(next)
        } else {
            self.after_delete(0)
        }
    }

    fn after_delete(&self, next: usize) -> IncrementalPhase {
        if next < self.request.deletions.len() {
            IncrementalPhase::Delete(next)
        } else {
            self.after_trigger(0)
        }
    }

    fn after_trigger(&self, next: usize) -> IncrementalPhase {
        if next < trigger_targets(&self.plans).len() {
            IncrementalPhase::Trigger(next)
        } else {
            IncrementalPhase::Done
        }
    }

    fn next_step(&self) -> Option<CycleStep> {
        Some(match self.phase {
            IncrementalPhase::ReadStates => CycleStep::ReadStates,
            IncrementalPhase::Upsert(i) => CycleStep::Upsert(self.upserts[i].item_id.clone()),
            IncrementalPhase::Delete(i) => CycleStep::Delete(self.request.deletions[i].clone()),
            IncrementalPhase::Trigger(i) => CycleStep::Trigger(trigger_targets(&self.plans)[i].type_id.clone()),
            IncrementalPhase::Done | IncrementalPhase::Aborted => return None,
        })
    }

    fn step(&mut self, eo: &dyn EoApi, engine: &dyn IndexTarget) -> Result<Option<IndexCycleReport>, IndexerError> {
        match self.phase {
            IncrementalPhase::ReadStates => {
                let mut plans = Vec::with_capacity(self.types.len());
                for t in &self.types {
                    let pair = eo.states(&t.type_id)?;
                    plans.push(TypePlan {
                        indexed: t.clone(),
                        latest: pair.latest,
                        also: pair.in_use,
                    });
                }
                self.plans = plans;
                self.upserts = self.plan_upserts();
                self.phase = self.after_upsert(0);
            }
            IncrementalPhase::Upsert(i) => {
                let doc = assemble(eo, &self.plans, &self.upserts[i])?;
                tally(&mut self.counts, &self.plans, &doc);
                engine.upsert_document(doc)?;
                self.phase = self.after_upsert(i + 1);
            }
            IncrementalPhase::Delete(i) => {
                match engine.delete_document(&self.request.deletions[i]) {
                    Ok(_) => {}
                    Err(EngineError::Core(embserve_core::CoreError::UnknownItem(_))) => self.unknown_deletions += 1,
                    Err(e) => return Err(e.into()),
                }
                self.phase = self.after_delete(i + 1);
            }
            IncrementalPhase::Trigger(i) => {
                let target = trigger_targets(&self.plans)[i].clone();
                eo.set_version_in_use(&target)?;
                self.triggered.insert(target.type_id);
                self.phase = self.after_trigger(i + 1);
            }
            IncrementalPhase::Done | IncrementalPhase::Aborted => return Err(IndexerError::Finished),
        }
        if self.phase != IncrementalPhase::Done {
            return Ok(None);
        }
        Ok(Some(IndexCycleReport {
            mode: IndexMode::Incremental,
            types: type_counts(&self.plans, &self.counts, &self.triggered),
            upserts: self.upserts.len(),
            deletions: self.request.deletions.len() - self.unknown_deletions,
            unknown_deletions: self.unknown_deletions,
            generation: None,
        }))
    }
}

/// A running indexing cycle of either mode.
pub enum IndexCycle {
    Shadow(ShadowCycle),
    Incremental(IncrementalBatch),
}

impl IndexCycle {
    pub fn mode(&self) -> IndexMode {
        match self {
            IndexCycle::Shadow(_) => IndexMode::Shadow,
            IndexCycle::Incremental(_) => IndexMode::Incremental,
        }
    }

    /// The step the next call to [`IndexCycle::step`] will perform.
    pub fn next_step(&self) -> Option<CycleStep> {
        match self {
            IndexCycle::Shadow(c) => c.next_step(),
            IndexCycle::Incremental(c) => c.next_step(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.next_step().is_none()
    }

    /// Versions the trigger steps will set in use. Empty until the states
    /// have been read.
    pub fn trigger_targets(&self) -> Vec<EmbeddingVersion> {
        match self {
            IndexCycle::Shadow(c) => trigger_targets(&c.plans),
            IndexCycle::Incremental(c) => trigger_targets(&c.plans),
        }
    }

    /// Runs one step. Any error aborts the cycle: completed steps stay
    /// applied, remaining steps (including the trigger) never run.
    pub fn step(&mut self, eo: &dyn EoApi, engine: &dyn IndexTarget) -> Result<StepOutcome, IndexerError> {
        let step = self.next_step().ok_or(IndexerError::Finished)?;
        let result = match self {
            IndexCycle::Shadow(c) => c.step(eo, engine),
            IndexCycle::Incremental(c) => c.step(eo, engine),
        };
        match result {
            Ok(report) => Ok(StepOutcome { step, report }),
            Err(e) => {
                match self {
                    IndexCycle::Shadow(c) => c.phase = ShadowPhase::Aborted,
                    IndexCycle::Incremental(c) => c.phase = IncrementalPhase::Aborted,
                }
                Err(e)
            }
        }
    }

    pub fn run(mut self, eo: &dyn EoApi, engine: &dyn IndexTarget) -> Result<IndexCycleReport, IndexerError> {
        loop {
            if let Some(report) = self.step(eo, engine)?.report {
                return Ok(report);
            }
        }
    }
}
