//! Run configuration.
//!
//! Configs are flat TOML files using dotted keys for nesting
//! (`backend.optimizer.temperature = 0.7`). Any key can be overridden from
//! the command line with the same dotted path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::RewardFunctionKind;
use crate::types::{Catalog, FilterKind, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    /// Sent to the backend; also the response-model feature the heuristic
    /// scorers condition on.
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    /// Ask for all completions of a batch in one request via `n`.
    pub use_n_param: bool,
}

impl ModelEndpoint {
    pub fn optimizer_default() -> Self {
        Self {
            max_tokens: 256,
            ..Self::default()
        }
    }

    pub fn response_default() -> Self {
        Self {
            max_tokens: 512,
            ..Self::default()
        }
    }
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model_id: "meta-llama/Llama-3.3-70B-Instruct".into(),
            temperature: 0.7,
            max_tokens: 256,
            request_timeout_secs: 120.0,
            max_retries: 3,
            use_n_param: true,
        }
    }
}

/// Reward-model scoring service used by the HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringEndpoint {
    pub base_url: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for ScoringEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8001".into(),
            request_timeout_secs: 30.0,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub seed: u64,
    pub heuristic_noise_sigma: f64,
    pub response_fidelity: f64,
    /// Std-dev of the optimizer's aim around each target, before history.
    pub optimizer_spread: f64,
    /// Probability an optimizer completion carries no usable block.
    pub malformed_rate: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            heuristic_noise_sigma: 0.7,
            response_fidelity: 0.9,
            optimizer_spread: 1.5,
            malformed_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub optimizer: ModelEndpoint,
    pub response: ModelEndpoint,
    pub scoring: ScoringEndpoint,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub synthetic: SyntheticParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Synthetic,
            optimizer: ModelEndpoint::optimizer_default(),
            response: ModelEndpoint::response_default(),
            scoring: ScoringEndpoint::default(),
            api_key_env: "OPENAI_API_KEY".into(),
            synthetic: SyntheticParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub filter: FilterKind,
    /// Total optimizer completions.
    pub n: u64,
    /// Total response-model calls.
    pub k: u64,
    pub width: u64,
    pub depth: u64,
    /// Optimizer completions per beam per step.
    pub branch_n: u64,
    /// Response calls per beam per step.
    pub per_step_k: u64,
    pub reward_function: RewardFunctionKind,
    /// Scalarization used to rank heuristic vectors; defaults to
    /// `reward_function`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_reward: Option<RewardFunctionKind>,
    pub n_objectives: usize,
    /// Builtin catalog id or path to a catalog file.
    pub catalog: String,
    pub seeds: Vec<u64>,
    pub backend: BackendConfig,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Bon,
            filter: FilterKind::Heuristic,
            n: 128,
            k: 16,
            width: 2,
            depth: 2,
            branch_n: 32,
            per_step_k: 4,
            reward_function: RewardFunctionKind::L2,
            filter_reward: None,
            n_objectives: 1,
            catalog: "helpsteer".into(),
            seeds: vec![888, 89, 12],
            backend: BackendConfig::default(),
            parallelism: 4,
        }
    }
}

impl RunConfig {
    /// Equal-budget presets: N=128, K=16 for every method; BS uses W=2,
    /// D=2 and GS uses W=1, D=4, both with 32 completions and 4 responses
    /// per beam per step.
    pub fn preset(method: Method, filter: FilterKind) -> Self {
        let (width, depth) = match method {
            Method::Greedy => (1, 4),
            _ => (2, 2),
        };
        Self {
            method,
            filter: if method == Method::MfBon { FilterKind::Random } else { filter },
            width,
            depth,
            ..Self::default()
        }
    }

    pub fn filter_reward(&self) -> RewardFunctionKind {
        self.filter_reward.unwrap_or(self.reward_function)
    }

    /// Optimizer calls an episode will make.
    pub fn optimizer_budget(&self) -> u64 {
        match self.method {
            Method::MfBon => 0,
            _ => self.n,
        }
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let table: toml::Table = src.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        Self::from_table(table)
    }

    /// Parses `table` laid over the defaults, so a partial nested table
    /// keeps the remaining defaults of that section.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        Self::from_table_over(&Self::default(), table)
    }

    /// Parses `table` laid over `base`.
    pub fn from_table_over(base: &RunConfig, table: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(base).expect("config serializes");
        overlay(&mut base, table);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))
    }

    /// Loads `path` (if any), applies `key=value` overrides, and parses.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::load_over(&Self::default(), path, overrides)
    }

    /// Like [`RunConfig::load`] with `base` supplying unset values.
    pub fn load_over(base: &RunConfig, path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::ConfigParse(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        Self::from_table_over(base, table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Sets a dotted key in a TOML table. `value` is read as a TOML literal
/// when it parses as one (numbers, booleans, arrays), otherwise as a string.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigParse(format!("bad key `{key}`")));
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));

    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::ConfigParse(format!("`{part}` in `{key}` is not a table")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Every violated invariant of `cfg`; empty means valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();

    if cfg.k == 0 {
        v.push("K must be at least 1".to_string());
    }
    if cfg.method != Method::MfBon {
        if cfg.n == 0 {
            v.push("N must be at least 1".to_string());
        }
        if cfg.k > cfg.n {
            v.push(format!("K ≤ N violated (K={}, N={})", cfg.k, cfg.n));
        }
    }
    if cfg.method.is_multi_step() {
        if cfg.method == Method::Greedy && cfg.width != 1 {
            v.push(format!("GS requires W=1 (got W={})", cfg.width));
        }
        if cfg.width == 0 || cfg.depth == 0 || cfg.branch_n == 0 || cfg.per_step_k == 0 {
            v.push("W, D, branch_n and per_step_k must all be at least 1".to_string());
        }
        let wd = cfg.width * cfg.depth;
        if wd * cfg.branch_n != cfg.n {
            v.push(format!(
                "W·D·branch_n = {}·{}·{} = {} must equal N = {}",
                cfg.width,
                cfg.depth,
                cfg.branch_n,
                wd * cfg.branch_n,
                cfg.n
            ));
        }
        if wd * cfg.per_step_k != cfg.k {
            v.push(format!(
                "W·D·per_step_k = {}·{}·{} = {} must equal K = {}",
                cfg.width,
                cfg.depth,
                cfg.per_step_k,
                wd * cfg.per_step_k,
                cfg.k
            ));
        }
        if cfg.per_step_k > cfg.branch_n {
            v.push(format!(
                "per_step_k ({}) must not exceed branch_n ({})",
                cfg.per_step_k, cfg.branch_n
            ));
        }
    }

    match Catalog::resolve(&cfg.catalog) {
        Ok(catalog) => {
            if cfg.n_objectives == 0 || cfg.n_objectives > catalog.len() {
                v.push(format!(
                    "n_objectives = {} outside 1..={} for catalog `{}`",
                    cfg.n_objectives,
                    catalog.len(),
                    catalog.id
                ));
            }
        }
        Err(e) => v.push(format!("catalog: {e}")),
    }
    if cfg.seeds.is_empty() {
        v.push("at least one seed is required".to_string());
    }
    if cfg.parallelism == 0 {
        v.push("parallelism must be at least 1".to_string());
    }

    for (role, ep) in [("optimizer", &cfg.backend.optimizer), ("response", &cfg.backend.response)] {
        if !(ep.temperature >= 0.0) {
            v.push(format!("backend.{role}.temperature must be ≥ 0"));
        }
        if ep.max_tokens == 0 {
            v.push(format!("backend.{role}.max_tokens must be ≥ 1"));
        }
        if !(ep.request_timeout_secs > 0.0) {
            v.push(format!("backend.{role}.request_timeout_secs must be > 0"));
        }
    }
    let syn = &cfg.backend.synthetic;
    if !(syn.heuristic_noise_sigma >= 0.0) {
        v.push("backend.synthetic.heuristic_noise_sigma must be ≥ 0".to_string());
    }
    if !(0.0..=1.0).contains(&syn.response_fidelity) {
        v.push("backend.synthetic.response_fidelity must lie in [0, 1]".to_string());
    }
    if !(syn.optimizer_spread >= 0.0) {
        v.push("backend.synthetic.optimizer_spread must be ≥ 0".to_string());
    }
    if !(0.0..=1.0).contains(&syn.malformed_rate) {
        v.push("backend.synthetic.malformed_rate must lie in [0, 1]".to_string());
    }
    v
}

pub fn ensure_valid(cfg: &RunConfig) -> Result<()> {
    let violations = validate_config(cfg);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beam_search_preset_is_valid() {
        let cfg = RunConfig {
            method: Method::BeamSearch,
            width: 2,
            depth: 2,
            branch_n: 32,
            per_step_k: 4,
            n: 128,
            k: 16,
            ..RunConfig::default()
        };
        assert_eq!(validate_config(&cfg), Vec::<String>::new());
    }

    #[test]
    fn greedy_needs_unit_width() {
        let cfg = RunConfig {
            method: Method::Greedy,
            width: 2,
            ..RunConfig::default()
        };
        let v = validate_config(&cfg);
        assert!(v.iter().any(|m| m.contains("GS requires W=1")), "{v:?}");
    }

    #[test]
    fn k_above_n_rejected() {
        let cfg = RunConfig {
            method: Method::Bon,
            n: 16,
            k: 17,
            ..RunConfig::default()
        };
        let v = validate_config(&cfg);
        assert!(v.iter().any(|m| m.contains("K ≤ N")), "{v:?}");
    }

    #[test]
    fn all_presets_valid() {
        for method in [Method::MfBon, Method::Bon, Method::BeamSearch, Method::Greedy] {
            for filter in [FilterKind::Random, FilterKind::Heuristic] {
                let cfg = RunConfig::preset(method, filter);
                assert!(validate_config(&cfg).is_empty(), "{method} {filter}: {:?}", validate_config(&cfg));
            }
        }
        assert_eq!(RunConfig::preset(Method::MfBon, FilterKind::Heuristic).filter, FilterKind::Random);
    }

    #[test]
    fn reports_every_violation() {
        let cfg = RunConfig {
            method: Method::BeamSearch,
            n: 100,
            k: 10,
            n_objectives: 9,
            seeds: vec![],
            parallelism: 0,
            ..RunConfig::default()
        };
        assert_eq!(validate_config(&cfg).len(), 5, "{:?}", validate_config(&cfg));
    }

    #[test]
    fn dotted_overrides_and_roundtrip() {
        let src = r#"
method = "BS"
filter = "RANDOM"
backend.optimizer.temperature = 0.5
seeds = [1, 2]
"#;
        let mut table: toml::Table = src.parse().unwrap();
        apply_override(&mut table, "backend.response.model_id", "my-model").unwrap();
        apply_override(&mut table, "k", "16").unwrap();
        apply_override(&mut table, "backend.synthetic.heuristic_noise_sigma", "1.25").unwrap();
        let cfg = RunConfig::from_table(table).unwrap();
        assert_eq!(cfg.method, Method::BeamSearch);
        assert_eq!(cfg.filter, FilterKind::Random);
        assert_eq!(cfg.backend.optimizer.temperature, 0.5);
        assert_eq!(cfg.backend.optimizer.max_tokens, 256);
        assert_eq!(cfg.backend.response.max_tokens, 512);
        assert_eq!(cfg.backend.response.model_id, "my-model");
        assert_eq!(cfg.backend.synthetic.heuristic_noise_sigma, 1.25);
        assert_eq!(cfg.seeds, vec![1, 2]);

        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("nonsense = 3").is_err());
    }
}
