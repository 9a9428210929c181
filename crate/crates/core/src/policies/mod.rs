//! Backends for the four model roles and the budget-checked calls the
//! search strategies make through them.
//!
//! * prompt optimizer: rewrites the prompt toward the goal
//! * response model: the expensive black box being steered
//! * reference scorers: one score per (prompt, response, objective)
//! * heuristic scorers: one score per (prompt, response-model id, objective)
//!
//! Every optimizer or response call is charged to the ledger before the
//! backend is touched. Scorer outputs are raw reals; the wrappers here
//! quantize them into the objective's range.

mod synthetic;
mod template;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use synthetic::{SyntheticWorld, SyntheticWorldConfig, INTENT_PREFIX};
pub use template::{
    parse_modified_prompt, render_history, render_optimizer_messages, system_prompt, ParseFailure,
};

use crate::budget::{BudgetLedger, ChargeKind};
use crate::error::{BackendError, Error, Result};
use crate::rewards::quantize_score;
use crate::types::{BeamState, ObjectiveSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Where in a search a backend call happens. Deterministic backends key
/// their randomness on this, never on call timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CallSite {
    pub episode: u64,
    pub step: usize,
    pub beam: usize,
}

pub trait PromptOptimizer: Send + Sync {
    /// Returns exactly `n` raw completions for the rendered `messages`.
    /// `state` is the structured form of the same request.
    fn complete(
        &self,
        state: &BeamState,
        messages: &[ChatMessage],
        n: usize,
        site: CallSite,
    ) -> Result<Vec<String>, BackendError>;
}

pub trait ResponseModel: Send + Sync {
    fn respond(&self, prompt: &str, site: CallSite) -> Result<String, BackendError>;
}

pub trait ReferenceScorer: Send + Sync {
    fn score(&self, prompt: &str, response: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError>;
}

/// Scores a prompt without its response; the response model is known only
/// by its id.
pub trait HeuristicScorer: Send + Sync {
    fn score(&self, prompt: &str, response_model_id: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError>;
}

/// The four roles a search needs, plus the response model's id.
#[derive(Clone)]
pub struct Backends {
    pub optimizer: Arc<dyn PromptOptimizer>,
    pub response: Arc<dyn ResponseModel>,
    pub reference: Arc<dyn ReferenceScorer>,
    pub heuristic: Arc<dyn HeuristicScorer>,
    pub response_model_id: String,
}

pub fn optimize_prompts(
    optimizer: &dyn PromptOptimizer,
    state: &BeamState,
    messages: &[ChatMessage],
    n: usize,
    site: CallSite,
    ledger: &BudgetLedger,
) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidCount(0));
    }
    ledger.charge(ChargeKind::Optimizer, n as u64)?;
    let out = optimizer.complete(state, messages, n, site)?;
    if out.len() != n {
        return Err(BackendError::protocol(format!("asked for {n} completions, got {}", out.len())).into());
    }
    Ok(out)
}

pub fn generate_response(model: &dyn ResponseModel, prompt: &str, site: CallSite, ledger: &BudgetLedger) -> Result<String> {
    ledger.charge(ChargeKind::Response, 1)?;
    Ok(model.respond(prompt, site)?)
}

pub fn score_reference(
    scorer: &dyn ReferenceScorer,
    prompt: &str,
    response: &str,
    objective: &ObjectiveSpec,
    ledger: &BudgetLedger,
) -> Result<i64> {
    let raw = scorer.score(prompt, response, objective)?;
    ledger.charge(ChargeKind::Reward, 1)?;
    quantize_score(raw, objective.range)
}

pub fn score_heuristic(
    scorer: &dyn HeuristicScorer,
    prompt: &str,
    response_model_id: &str,
    objective: &ObjectiveSpec,
    ledger: &BudgetLedger,
) -> Result<i64> {
    let raw = scorer.score(prompt, response_model_id, objective)?;
    ledger.charge(ChargeKind::Heuristic, 1)?;
    quantize_score(raw, objective.range)
}
