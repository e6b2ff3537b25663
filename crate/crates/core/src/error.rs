use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("identifier {0:?} is empty or contains a reserved character")]
    InvalidIdentifier(String),
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("vector has {actual} components but the type declares {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector component {index} is not finite")]
    NonFiniteComponent { index: usize },
    #[error("weight for {0} is not finite")]
    NonFiniteWeight(String),
    #[error("aggregation requires at least one attribute")]
    EmptyAttributeSet,
    #[error("item {0} appears more than once")]
    DuplicateItemId(String),
    #[error("item {0} is not indexed")]
    UnknownItem(String),
    #[error("version in use cannot move from time frame {current} back to {requested}")]
    RegressingVersion { current: u64, requested: u64 },
    #[error("version at time frame {0} has not been observed as latest")]
    UnknownVersion(u64),
    #[error("version belongs to a different embedding type")]
    TypeMismatch,
    #[error("query result budget k must be at least 1")]
    ZeroBudget,
}
