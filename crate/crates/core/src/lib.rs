//! Allocation-only core of the embeddings serving stack.
//!
//! Everything in this crate is a pure function of its inputs: embedding
//! identities and their canonical key encoding, the deterministic hash
//! generator used by the synthetic trainer, weighted aggregation of
//! attribute embeddings, the per-type `latest` / `in-use` version state
//! machine, and the index generation that executes filtered, version-scoped
//! inner-product top-k queries. IO, locking and services live in the
//! `embserve` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod document;
mod error;
pub mod hash;
pub mod index;
pub mod key;
pub mod oracle;
pub mod types;
pub mod versions;

pub use aggregate::{weighted_sum, Aggregate};
pub use document::{
    IndexedDocument, RecommendationQuery, ScoreAudit, ScoreMode, ScoredResult, UserEmbedding,
};
pub use error::CoreError;
pub use index::{IndexBuilder, IndexGeneration, SearchOutcome};
pub use types::{
    EmbeddingRecord, EmbeddingTypeId, EmbeddingVersion, EntityId, EntityKind, ModelKind,
    WeightedAttributes,
};
pub use versions::VersionState;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;
