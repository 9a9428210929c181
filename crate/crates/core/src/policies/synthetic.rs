//! A small deterministic world standing in for real models.
//!
//! The optimizer appends `[intent:<objective>=<score>]` markers to the
//! prompt, aimed at the goal with Gaussian spread. The response model
//! realizes each marked intent with probability `response_fidelity`, and
//! otherwise lands on the objective's baseline (range midpoint); realized
//! values appear as `[realized:<objective>=<score>]` in the response.
//! Reference scoring reads the realized markers. Heuristic scoring reads
//! the prompt's intents and adds `N(0, heuristic_noise_sigma)` noise.
//!
//! Optimizer randomness is keyed on (seed, episode, step, beam, index).
//! Responses and heuristic noise are keyed on content, so identical prompts
//! always get identical responses and heuristic scores.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::SyntheticParams;
use crate::error::BackendError;
use crate::rewards::quantize_score;
use crate::rng::StreamKey;
use crate::types::{BeamState, Catalog, ObjectiveSpec};

use super::{Backends, CallSite, ChatMessage, HeuristicScorer, PromptOptimizer, ReferenceScorer, ResponseModel};

pub const INTENT_PREFIX: &str = "[intent:";
const REALIZED_PREFIX: &str = "[realized:";
const MALFORMED: &str = "I'm sorry, but I can't rewrite that prompt.";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    pub catalog: Catalog,
    pub heuristic_noise_sigma: f64,
    pub response_fidelity: f64,
    pub optimizer_spread: f64,
    pub malformed_rate: f64,
}

impl SyntheticWorldConfig {
    pub fn new(catalog: Catalog) -> Self {
        Self::from_params(&SyntheticParams::default(), catalog)
    }

    pub fn from_params(p: &SyntheticParams, catalog: Catalog) -> Self {
        Self {
            seed: p.seed,
            catalog,
            heuristic_noise_sigma: p.heuristic_noise_sigma,
            response_fidelity: p.response_fidelity,
            optimizer_spread: p.optimizer_spread,
            malformed_rate: p.malformed_rate,
        }
    }

    /// Heuristic scores equal reference scores and responses always follow
    /// the prompt.
    pub fn zero_gap(mut self) -> Self {
        self.heuristic_noise_sigma = 0.0;
        self.response_fidelity = 1.0;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    cfg: SyntheticWorldConfig,
}

fn markers(text: &str, prefix: &str) -> HashMap<String, i64> {
    let mut out = HashMap::new();
    let mut rest = text;
    while let Some(start) = rest.find(prefix) {
        rest = &rest[start + prefix.len()..];
        let Some(end) = rest.find(']') else { break };
        if let Some((id, v)) = rest[..end].split_once('=') {
            if let Ok(v) = v.trim().parse::<i64>() {
                out.entry(id.trim().to_string()).or_insert(v);
            }
        }
        rest = &rest[end..];
    }
    out
}

impl SyntheticWorld {
    pub fn new(cfg: SyntheticWorldConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &SyntheticWorldConfig {
        &self.cfg
    }

    /// Bundles this world into all four roles.
    pub fn backends(self, response_model_id: impl Into<String>) -> Backends {
        let world = Arc::new(self);
        Backends {
            optimizer: world.clone(),
            response: world.clone(),
            reference: world.clone(),
            heuristic: world,
            response_model_id: response_model_id.into(),
        }
    }

    pub fn baseline(&self, objective: &ObjectiveSpec) -> i64 {
        objective.range.midpoint()
    }

    /// Intent markers carried by a prompt.
    pub fn intents(prompt: &str) -> HashMap<String, i64> {
        markers(prompt, INTENT_PREFIX)
    }

    fn completion(&self, state: &BeamState, site: CallSite, index: usize) -> String {
        let mut rng = StreamKey::new("optimizer")
            .u64(self.cfg.seed)
            .u64(site.episode)
            .u64(site.step as u64)
            .u64(site.beam as u64)
            .u64(index as u64)
            .rng();
        if rng.random::<f64>() < self.cfg.malformed_rate {
            return MALFORMED.to_string();
        }
        let spread = self.cfg.optimizer_spread / (1.0 + 0.5 * state.history.len() as f64);
        let mut prompt = state.original_prompt.clone();
        for entry in state.goal.entries() {
            let z: f64 = rng.sample(StandardNormal);
            let Some(spec) = self.cfg.catalog.get(&entry.objective) else {
                continue;
            };
            let aim = quantize_score(entry.target as f64 + spread * z, spec.range).unwrap_or(entry.target);
            prompt.push_str(&format!(" {INTENT_PREFIX}{}={aim}]", entry.objective));
        }
        format!("<modified_prompt>\n{prompt}\n</modified_prompt>")
    }
}

impl PromptOptimizer for SyntheticWorld {
    fn complete(&self, state: &BeamState, _: &[ChatMessage], n: usize, site: CallSite) -> Result<Vec<String>, BackendError> {
        Ok((0..n).map(|i| self.completion(state, site, i)).collect())
    }
}

impl ResponseModel for SyntheticWorld {
    fn respond(&self, prompt: &str, _: CallSite) -> Result<String, BackendError> {
        let intents = Self::intents(prompt);
        let mut text = String::from("Synthetic response.");
        for spec in &self.cfg.catalog.objectives {
            let realized = match intents.get(&spec.id) {
                Some(&aim)
                    if StreamKey::new("response")
                        .u64(self.cfg.seed)
                        .str(prompt)
                        .str(&spec.id)
                        .unit()
                        < self.cfg.response_fidelity =>
                {
                    aim
                }
                _ => self.baseline(spec),
            };
            text.push_str(&format!(" {REALIZED_PREFIX}{}={realized}]", spec.id));
        }
        Ok(text)
    }
}

impl ReferenceScorer for SyntheticWorld {
    fn score(&self, _prompt: &str, response: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError> {
        let realized = markers(response, REALIZED_PREFIX);
        Ok(realized.get(&objective.id).copied().unwrap_or_else(|| self.baseline(objective)) as f64)
    }
}

impl HeuristicScorer for SyntheticWorld {
    fn score(&self, prompt: &str, response_model_id: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError> {
        let expected = Self::intents(prompt)
            .get(&objective.id)
            .copied()
            .unwrap_or_else(|| self.baseline(objective)) as f64;
        if self.cfg.heuristic_noise_sigma == 0.0 {
            return Ok(expected);
        }
        let z: f64 = StreamKey::new("heuristic")
            .u64(self.cfg.seed)
            .str(response_model_id)
            .str(prompt)
            .str(&objective.id)
            .rng()
            .sample(StandardNormal);
        Ok(expected + self.cfg.heuristic_noise_sigma * z)
    }
}
