//! Search-based serving of embeddings-based recommendations.
//!
//! The offline [`trainer`] writes versioned vectors into the
//! [`store`]; the [`orchestrator`] exposes them to the [`indexer`] and the
//! [`serving`] layer and owns the `latest` / `in-use` version states; the
//! [`engine`] executes filtered inner-product top-k queries over one live
//! index generation. [`sim`] drives all of them under seeded interleavings
//! and checks the synchronization invariants after every step.

pub mod engine;
pub mod error;
pub mod indexer;
pub mod orchestrator;
pub mod scenario;
pub mod service;
pub mod serving;
pub mod sim;
pub mod store;
pub mod trainer;
pub mod wire;

pub use engine::{IndexMode, IndexTarget, SearchEngine};
pub use error::{EngineError, EoError, IndexerError, ServingError, StoreError, TrainerError};
pub use indexer::{CatalogItem, ChangeFeed, ChangeRequest, IndexCycle, IndexCycleReport, IndexedType, Indexer};
pub use orchestrator::{EoApi, Orchestrator, ResolvedUser, UserRef, VersionPair};
pub use serving::{build_query, PublisherRules, Serving, UserRequest};
pub use store::EmbeddingStore;
pub use trainer::{EmbeddingSource, Fixtures, Trainer, TrainerConfig};
