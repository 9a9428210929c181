use std::fmt;

use serde::{Deserialize, Serialize};

use crate::budget::ChargeKind;

/// Failure reported by a model or scoring backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendErrorKind {
    /// Retries exhausted or the endpoint is unreachable.
    Unavailable,
    /// The backend answered with something we cannot interpret.
    Protocol,
}

impl BackendError {
    pub fn unavailable(message: impl Into<String>) -> Self {
        Self {
            kind: BackendErrorKind::Unavailable,
            message: message.into(),
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self {
            kind: BackendErrorKind::Protocol,
            message: message.into(),
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BackendErrorKind::Unavailable => write!(f, "backend unavailable: {}", self.message),
            BackendErrorKind::Protocol => write!(f, "backend protocol error: {}", self.message),
        }
    }
}

impl std::error::Error for BackendError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("budget exceeded for {kind}: cap {cap}, attempted {attempted}")]
    BudgetExceeded {
        kind: ChargeKind,
        cap: u64,
        attempted: u64,
    },
    #[error("invalid count {0}: must be at least 1")]
    InvalidCount(usize),
    #[error("goal/reward shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown objective `{0}`")]
    UnknownObjective(String),
    #[error("duplicate objective `{0}`")]
    DuplicateObjective(String),
    #[error("value {value} for objective `{objective}` outside [{lo}, {hi}]")]
    OutOfRange {
        objective: String,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("requested {requested} objectives from a catalog of {available}")]
    ObjectiveCount { requested: usize, available: usize },
    #[error("k = {k} outside 1..={available}")]
    InvalidK { k: usize, available: usize },
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("record parse error on line {line}: {message}")]
    RecordParse { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
