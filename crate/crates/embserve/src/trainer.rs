//! Deterministic stand-in for the offline training component.
//!
//! Each cycle writes one fresh time frame of records for the configured
//! model kind straight into the store. It never talks to the orchestrator.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use embserve_core::hash::{hashed_vector, is_covered};
use embserve_core::{EmbeddingRecord, EmbeddingTypeId, EntityId, ModelKind};

use crate::error::TrainerError;
use crate::store::EmbeddingStore;

/// Fixed vectors supplied by a scenario. A vector pinned to a time frame
/// takes precedence over one that applies to every time frame.
#[derive(Debug, Clone, Default)]
pub struct Fixtures {
    any_frame: BTreeMap<EntityId, Vec<f64>>,
    per_frame: BTreeMap<(u64, EntityId), Vec<f64>>,
}

impl Fixtures {
    pub fn insert(&mut self, entity: EntityId, time_frame: Option<u64>, vector: Vec<f64>) {
        match time_frame {
            Some(tf) => {
                self.per_frame.insert((tf, entity), vector);
            }
            None => {
                self.any_frame.insert(entity, vector);
            }
        }
    }

    pub fn lookup(&self, entity: &EntityId, time_frame: u64) -> Option<&Vec<f64>> {
        self.per_frame
            .get(&(time_frame, entity.clone()))
            .or_else(|| self.any_frame.get(entity))
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Fixture(Fixtures),
    Hashed,
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub model_kind: ModelKind,
    pub type_id: EmbeddingTypeId,
    pub source: EmbeddingSource,
    /// Fraction of eligible entities receiving a vector per cycle, in [0, 1].
    pub coverage_fraction: f64,
    pub seed: u64,
}

pub struct Trainer {
    config: TrainerConfig,
    store: Arc<EmbeddingStore>,
    last_time_frame: Option<u64>,
}

impl Trainer {
    pub fn new(config: TrainerConfig, store: Arc<EmbeddingStore>) -> Self {
        Self {
            config,
            store,
            last_time_frame: None,
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn last_time_frame(&self) -> Option<u64> {
        self.last_time_frame
    }

    /// The records a cycle at `time_frame` would write. Pure in
    /// `(config, universe, time_frame)`.
    pub fn plan_cycle(&self, universe: &[EntityId], time_frame: u64) -> Vec<EmbeddingRecord> {
        let c = &self.config;
        let version = c.type_id.at(time_frame);
        let eligible: BTreeSet<&EntityId> = universe.iter().filter(|e| c.model_kind.emits(e.kind())).collect();
        eligible
            .into_iter()
            .filter(|e| is_covered(c.seed, &version, e, c.coverage_fraction))
            .filter_map(|e| {
                let vector = match &c.source {
                    EmbeddingSource::Hashed => hashed_vector(c.seed, &version, e),
                    EmbeddingSource::Fixture(f) => f.lookup(e, time_frame)?.clone(),
                };
                Some(EmbeddingRecord {
                    version: version.clone(),
                    entity: e.clone(),
                    vector,
                })
            })
            .collect()
    }

    /// Writes one time frame. `time_frame` must be newer than anything this
    /// trainer, or anyone else, has written for the type.
    pub fn run_cycle(&mut self, universe: &[EntityId], time_frame: u64) -> Result<usize, TrainerError> {
        let previous = self.last_time_frame.max(self.store.max_time_frame(&self.config.type_id));
        if let Some(previous) = previous {
            if time_frame <= previous {
                return Err(TrainerError::NonMonotoneTimeFrame {
                    previous,
                    requested: time_frame,
                });
            }
        }
        let records = self.plan_cycle(universe, time_frame);
        for r in &records {
            r.validate()?;
        }
        let written = self.store.put_batch(records)?;
        self.last_time_frame = Some(time_frame);
        Ok(written)
    }

    /// Entities that received a record in any time frame in `(since, now]`.
    /// `since = None` means from the beginning.
    pub fn changed_entities(&self, since: Option<u64>, now: u64) -> BTreeSet<EntityId> {
        changed_entities(&self.store, &self.config.type_id, since, now)
    }
}

/// Change feed read from the store.
pub fn changed_entities(
    store: &EmbeddingStore,
    type_id: &EmbeddingTypeId,
    since: Option<u64>,
    now: u64,
) -> BTreeSet<EntityId> {
    store
        .time_frames(type_id)
        .into_iter()
        .filter(|tf| since.is_none_or(|s| *tf > s) && *tf <= now)
        .flat_map(|tf| store.entities_at(&type_id.at(tf)))
        .collect()
}
