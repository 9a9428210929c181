//! Budgeted, goal-conditioned inference-time alignment.
//!
//! A prompt optimizer rewrites a user prompt toward a per-objective goal
//! vector; candidates are filtered (randomly or by a cheap heuristic scorer)
//! before the expensive response model sees them, and responses are ranked
//! by reference scorers. Search strategies (MF-BoN, BoN, beam and greedy
//! search) run under a hard ledger of optimizer and response calls.
//!
//! The [`policies::SyntheticWorld`] backend makes every strategy runnable
//! and testable without a model server.

pub mod budget;
pub mod config;
pub mod error;
pub mod exec;
pub mod filtering;
pub mod harness;
pub mod policies;
pub mod rewards;
pub mod rng;
pub mod search;
pub mod types;

pub use budget::{BudgetLedger, ChargeKind, LedgerSnapshot};
pub use config::{ensure_valid, validate_config, BackendKind, RunConfig, SyntheticParams};
pub use error::{BackendError, BackendErrorKind, Error, Result};
pub use rewards::{evaluate, quantize_score, sample_goal, RewardFunctionKind};
pub use search::{run_episode, EpisodeId, SearchContext};
pub use types::{
    BeamState, Candidate, Catalog, EpisodeRecord, FilterKind, GoalVector, HistoryEntry, Method, ObjectiveSpec,
    RewardVector, ScoreRange,
};
