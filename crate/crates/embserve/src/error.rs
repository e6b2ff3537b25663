use std::io;

use embserve_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector has {actual} components but {type_name} declares {expected}{}", line_suffix(*.line))]
    DimensionMismatch {
        type_name: String,
        expected: usize,
        actual: usize,
        line: Option<usize>,
    },
    #[error("type {type_name} already registered with dimension {existing}, got {requested}")]
    TypeConflict {
        type_name: String,
        existing: usize,
        requested: usize,
    },
    #[error("snapshot line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (snapshot line {l})")).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("time frame {requested} is not after {previous}")]
    NonMonotoneTimeFrame { previous: u64, requested: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EoError {
    #[error("orchestrator unavailable")]
    Unavailable,
    #[error("unknown embedding type {0}")]
    UnknownType(String),
    #[error("version in use cannot move from time frame {current} back to {requested}")]
    RegressingVersion { current: u64, requested: u64 },
    #[error("no records exist for time frame {0}")]
    UnknownVersion(u64),
    #[error("aggregation requires at least one attribute")]
    EmptyAttributeSet,
    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for EoError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::RegressingVersion { current, requested } => {
                EoError::RegressingVersion { current, requested }
            }
            CoreError::UnknownVersion(tf) => EoError::UnknownVersion(tf),
            CoreError::EmptyAttributeSet => EoError::EmptyAttributeSet,
            other => EoError::Core(other),
        }
    }
}

impl EoError {
    /// Stable name used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            EoError::Unavailable => "EOUnavailable",
            EoError::UnknownType(_) => "UnknownType",
            EoError::RegressingVersion { .. } => "RegressingVersion",
            EoError::UnknownVersion(_) => "UnknownVersion",
            EoError::EmptyAttributeSet => "EmptyAttributeSet",
            EoError::Core(CoreError::DimensionMismatch { .. }) => "DimensionMismatch",
            EoError::Core(_) => "InvalidRequest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("search engine unavailable")]
    Unavailable,
    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Unavailable => "EngineUnavailable",
            EngineError::WrongMode { .. } => "WrongMode",
            EngineError::Core(CoreError::DuplicateItemId(_)) => "DuplicateItemId",
            EngineError::Core(CoreError::UnknownItem(_)) => "UnknownItem",
            EngineError::Core(CoreError::DimensionMismatch { .. }) => "DimensionMismatch",
            EngineError::Core(_) => "InvalidRequest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexerError {
    #[error("an indexing cycle is already running")]
    CycleInProgress,
    #[error("cycle aborted: {0}")]
    Eo(#[from] EoError),
    #[error("cycle aborted: {0}")]
    Engine(#[from] EngineError),
    #[error("cycle already finished")]
    Finished,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServingError {
    #[error(transparent)]
    Eo(#[from] EoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ServingError {
    pub fn code(&self) -> &'static str {
        match self {
            ServingError::Eo(e) => e.code(),
            ServingError::Engine(e) => e.code(),
        }
    }

    /// Unavailability is transient; everything else is a bad request.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ServingError::Eo(EoError::Unavailable) | ServingError::Engine(EngineError::Unavailable)
        )
    }
}
