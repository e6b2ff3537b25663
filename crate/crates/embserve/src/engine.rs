//! Single-node search engine serving one live index generation.
//!
//! Shadow mode publishes sealed generations by swapping an `Arc`. In
//! incremental mode documents are replaced in place, copy-on-write, so a
//! query always runs against one consistent snapshot.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use embserve_core::key::version_key;
use embserve_core::{IndexBuilder, IndexGeneration, IndexedDocument, RecommendationQuery, ScoredResult, SearchOutcome};
use parking_lot::RwLock;
use serde_json::{json, Map, Value};

use crate::error::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexMode {
    Shadow,
    Incremental,
}

impl IndexMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexMode::Shadow => "shadow",
            IndexMode::Incremental => "incremental",
        }
    }
}

/// Index-side calls made by the indexing layer.
pub trait IndexTarget {
    fn build_generation(&self, docs: Vec<IndexedDocument>) -> Result<Arc<IndexGeneration>, EngineError>;
    fn swap_generation(&self, generation: Arc<IndexGeneration>) -> Result<Arc<IndexGeneration>, EngineError>;
    fn upsert_document(&self, doc: IndexedDocument) -> Result<(), EngineError>;
    fn delete_document(&self, item_id: &str) -> Result<IndexedDocument, EngineError>;
}

pub struct SearchEngine {
    mode: IndexMode,
    fallback_weight: f64,
    live: RwLock<Arc<IndexGeneration>>,
    next_generation: AtomicU64,
}

impl SearchEngine {
    pub fn new(mode: IndexMode, fallback_weight: f64) -> Self {
        Self {
            mode,
            fallback_weight,
            live: RwLock::new(Arc::new(IndexGeneration::empty(0))),
            next_generation: AtomicU64::new(1),
        }
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn fallback_weight(&self) -> f64 {
        self.fallback_weight
    }

    /// The generation currently serving queries.
    pub fn snapshot(&self) -> Arc<IndexGeneration> {
        Arc::clone(&self.live.read())
    }

    pub fn execute_query(&self, q: &RecommendationQuery) -> Result<Vec<ScoredResult>, EngineError> {
        Ok(self.execute_query_traced(q)?.results)
    }

    pub fn execute_query_traced(&self, q: &RecommendationQuery) -> Result<SearchOutcome, EngineError> {
        self.execute_on(&self.snapshot(), q)
    }

    pub fn execute_on(&self, generation: &IndexGeneration, q: &RecommendationQuery) -> Result<SearchOutcome, EngineError> {
        Ok(generation.search(q, self.fallback_weight)?)
    }

    fn require(&self, mode: IndexMode) -> Result<(), EngineError> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(EngineError::WrongMode { expected: mode.as_str() })
        }
    }

    /// Writes the live generation as one JSON document per line, sorted by
    /// item id, vectors keyed by `algo|config|tf`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<usize> {
        let generation = self.snapshot();
        for doc in generation.documents() {
            serde_json::to_writer(&mut out, &dump_document(doc))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(generation.len())
    }
}

pub fn dump_document(doc: &IndexedDocument) -> Value {
    let attrs: Map<String, Value> = doc
        .attributes
        .iter()
        .map(|(e, w)| (e.short_form(), json!(w)))
        .collect();
    let vectors: Map<String, Value> = doc
        .vectors
        .iter()
        .map(|(v, vec)| (version_key(v), json!(vec)))
        .collect();
    json!({
        "item": doc.item_id,
        "provider": doc.provider_id,
        "geo": doc.geo_targets,
        "attrs": attrs,
        "vectors": vectors,
    })
}

impl IndexTarget for SearchEngine {
    fn build_generation(&self, docs: Vec<IndexedDocument>) -> Result<Arc<IndexGeneration>, EngineError> {
        self.require(IndexMode::Shadow)?;
        let mut builder = IndexBuilder::new();
        docs.into_iter().for_each(|d| builder.add(d));
        let id = self.next_generation.fetch_add(1, Ordering::Relaxed);
        Ok(Arc::new(builder.build(id)?))
    }

    fn swap_generation(&self, generation: Arc<IndexGeneration>) -> Result<Arc<IndexGeneration>, EngineError> {
        self.require(IndexMode::Shadow)?;
        Ok(std::mem::replace(&mut *self.live.write(), generation))
    }

    fn upsert_document(&self, doc: IndexedDocument) -> Result<(), EngineError> {
        self.require(IndexMode::Incremental)?;
        let mut live = self.live.write();
        Arc::make_mut(&mut live).upsert(doc)?;
        Ok(())
    }

    fn delete_document(&self, item_id: &str) -> Result<IndexedDocument, EngineError> {
        self.require(IndexMode::Incremental)?;
        let mut live = self.live.write();
        Ok(Arc::make_mut(&mut live).delete(item_id)?)
    }
}
