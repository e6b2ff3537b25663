//! Versioned key-value store of embedding vectors, one record per
//! `(version, entity)`, with a newline-delimited JSON snapshot format.
//!
//! Snapshot lines carry keys in the fixed order
//! `algo, config, tf, kind, id, vec` and are sorted by the canonical key
//! string `algo|config|tf|kind|id`. Floats use shortest round-trip form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use embserve_core::key::canonical_key;
use embserve_core::types::check_vector;
use embserve_core::{CoreError, EmbeddingRecord, EmbeddingTypeId, EmbeddingVersion, EntityId, EntityKind};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::StoreError;

type TypeName = (String, String);

#[derive(Debug, Default)]
struct StoreInner {
    types: BTreeMap<TypeName, EmbeddingTypeId>,
    versions: BTreeMap<EmbeddingVersion, BTreeMap<EntityId, Vec<f64>>>,
}

impl StoreInner {
    fn check_type(&self, pending: &BTreeMap<TypeName, EmbeddingTypeId>, t: &EmbeddingTypeId) -> Result<(), StoreError> {
        let name = (t.algorithm_name().to_string(), t.config_tag().to_string());
        match self.types.get(&name).or_else(|| pending.get(&name)) {
            Some(existing) if existing.dimension() != t.dimension() => Err(StoreError::TypeConflict {
                type_name: t.to_string(),
                existing: existing.dimension(),
                requested: t.dimension(),
            }),
            _ => Ok(()),
        }
    }
}

/// Shared handle; many readers, one writer per batch.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    inner: RwLock<StoreInner>,
    epoch: AtomicU64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotLine {
    algo: String,
    config: String,
    tf: u64,
    kind: String,
    id: String,
    vec: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a type ahead of any records. Re-registering with the same
    /// dimension is a no-op.
    pub fn register_type(&self, type_id: &EmbeddingTypeId) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        inner.check_type(&BTreeMap::new(), type_id)?;
        inner
            .types
            .entry((type_id.algorithm_name().into(), type_id.config_tag().into()))
            .or_insert_with(|| type_id.clone());
        Ok(())
    }

    pub fn type_by_name(&self, algo: &str, config: &str) -> Option<EmbeddingTypeId> {
        self.inner.read().types.get(&(algo.to_string(), config.to_string())).cloned()
    }

    /// Writes every record or none. Later records win over earlier ones with
    /// the same key.
    pub fn put_batch(&self, records: Vec<EmbeddingRecord>) -> Result<usize, StoreError> {
        let mut inner = self.inner.write();
        let mut pending = BTreeMap::new();
        for r in &records {
            inner.check_type(&pending, &r.version.type_id)?;
            pending
                .entry((r.version.type_id.algorithm_name().into(), r.version.type_id.config_tag().into()))
                .or_insert_with(|| r.version.type_id.clone());
            check_vector(r.version.type_id.dimension(), &r.vector).map_err(|e| match e {
                CoreError::DimensionMismatch { expected, actual } => StoreError::DimensionMismatch {
                    type_name: r.version.type_id.to_string(),
                    expected,
                    actual,
                    line: None,
                },
                other => other.into(),
            })?;
        }
        let count = records.len();
        inner.types.append(&mut pending);
        for r in records {
            inner.versions.entry(r.version).or_default().insert(r.entity, r.vector);
        }
        if count > 0 {
            self.epoch.fetch_add(1, Ordering::Release);
        }
        Ok(count)
    }

    pub fn get(&self, version: &EmbeddingVersion, entity: &EntityId) -> Option<Vec<f64>> {
        self.inner.read().versions.get(version)?.get(entity).cloned()
    }

    pub fn contains_version(&self, version: &EmbeddingVersion) -> bool {
        self.inner.read().versions.get(version).is_some_and(|m| !m.is_empty())
    }

    /// Largest time frame with at least one record of `type_id`.
    pub fn max_time_frame(&self, type_id: &EmbeddingTypeId) -> Option<u64> {
        let inner = self.inner.read();
        inner
            .versions
            .range(type_id.at(0)..=type_id.at(u64::MAX))
            .rev()
            .find(|(_, m)| !m.is_empty())
            .map(|(v, _)| v.time_frame)
    }

    /// Time frames of `type_id` in ascending order.
    pub fn time_frames(&self, type_id: &EmbeddingTypeId) -> Vec<u64> {
        let inner = self.inner.read();
        inner
            .versions
            .range(type_id.at(0)..=type_id.at(u64::MAX))
            .filter(|(_, m)| !m.is_empty())
            .map(|(v, _)| v.time_frame)
            .collect()
    }

    pub fn entities_at(&self, version: &EmbeddingVersion) -> Vec<EntityId> {
        self.inner
            .read()
            .versions
            .get(version)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.read().versions.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Counts successful non-empty writes; changes whenever contents change.
    pub fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::Acquire)
    }

    /// Drops every version of `type_id` older than `keep_from`. Returns the
    /// number of records removed.
    pub fn drop_versions_before(&self, type_id: &EmbeddingTypeId, keep_from: u64) -> usize {
        let mut inner = self.inner.write();
        let doomed: Vec<EmbeddingVersion> = inner
            .versions
            .range(type_id.at(0)..type_id.at(keep_from))
            .map(|(v, _)| v.clone())
            .collect();
        let removed = doomed
            .iter()
            .filter_map(|v| inner.versions.remove(v))
            .map(|m| m.len())
            .sum();
        if removed > 0 {
            self.epoch.fetch_add(1, Ordering::Release);
        }
        removed
    }

    /// All records in canonical key order.
    pub fn records(&self) -> Vec<EmbeddingRecord> {
        let inner = self.inner.read();
        let mut out: Vec<(String, EmbeddingRecord)> = inner
            .versions
            .iter()
            .flat_map(|(version, m)| {
                m.iter().map(move |(entity, vector)| {
                    (
                        canonical_key(version, entity),
                        EmbeddingRecord {
                            version: version.clone(),
                            entity: entity.clone(),
                            vector: vector.clone(),
                        },
                    )
                })
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out.into_iter().map(|(_, r)| r).collect()
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<usize, StoreError> {
        let records = self.records();
        for r in &records {
            let line = SnapshotLine {
                algo: r.version.type_id.algorithm_name().to_string(),
                config: r.version.type_id.config_tag().to_string(),
                tf: r.version.time_frame,
                kind: r.entity.kind().as_str().to_string(),
                id: r.entity.id().to_string(),
                vec: r.vector.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(records.len())
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<usize, StoreError> {
        self.write_snapshot(BufWriter::new(File::create(path)?))
    }

    /// Replaces the store contents with the snapshot. Dimensions come from
    /// registered types, or from the first line of each type otherwise.
    pub fn read_snapshot<R: BufRead>(&self, input: R) -> Result<usize, StoreError> {
        let mut types = self.inner.read().types.clone();
        let mut versions: BTreeMap<EmbeddingVersion, BTreeMap<EntityId, Vec<f64>>> = BTreeMap::new();
        let mut count = 0;
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| StoreError::MalformedLine { line: line_no, reason };
            let parsed: SnapshotLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            let kind: EntityKind = parsed.kind.parse().map_err(|e: CoreError| malformed(e.to_string()))?;
            let entity = EntityId::new(kind, parsed.id).map_err(|e| malformed(e.to_string()))?;
            let name = (parsed.algo.clone(), parsed.config.clone());
            let type_id = match types.get(&name) {
                Some(t) => t.clone(),
                None => {
                    let t = EmbeddingTypeId::new(parsed.algo, parsed.config, parsed.vec.len())
                        .map_err(|e| malformed(e.to_string()))?;
                    types.insert(name, t.clone());
                    t
                }
            };
            if parsed.vec.len() != type_id.dimension() {
                return Err(StoreError::DimensionMismatch {
                    type_name: type_id.to_string(),
                    expected: type_id.dimension(),
                    actual: parsed.vec.len(),
                    line: Some(line_no),
                });
            }
            check_vector(type_id.dimension(), &parsed.vec).map_err(|e| malformed(e.to_string()))?;
            versions.entry(type_id.at(parsed.tf)).or_default().insert(entity, parsed.vec);
            count += 1;
        }
        let mut inner = self.inner.write();
        inner.types = types;
        inner.versions = versions;
        self.epoch.fetch_add(1, Ordering::Release);
        Ok(count)
    }

    pub fn load_snapshot(&self, path: impl AsRef<Path>) -> Result<usize, StoreError> {
        self.read_snapshot(BufReader::new(File::open(path)?))
    }
}
