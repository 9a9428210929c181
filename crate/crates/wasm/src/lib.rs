//! Browser bindings for the demo page. Everything runs against the synthetic
//! world on a single thread; the plain functions in [`demo`] carry the logic
//! so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod demo {
    use goalsteer_core::harness::{desk_prompts, emit_sweep, run_experiment, sweep_csv};
    use goalsteer_core::policies::{Backends, SyntheticWorld, SyntheticWorldConfig};
    use goalsteer_core::{ensure_valid, Catalog, GoalVector, RewardFunctionKind, RewardVector, RunConfig};
    use serde_json::{json, Map, Value};

    fn pairs(json: &str, what: &str) -> Result<Vec<(String, i64)>, String> {
        let map: Map<String, Value> = serde_json::from_str(json).map_err(|e| format!("{what}: {e}"))?;
        map.into_iter()
            .map(|(k, v)| {
                v.as_i64()
                    .map(|n| (k.clone(), n))
                    .ok_or_else(|| format!("{what}: `{k}` must be an integer"))
            })
            .collect()
    }

    /// Scores a reward vector against a goal, both given as
    /// `{"objective": value}` objects.
    pub fn score(goal_json: &str, reward_json: &str) -> Result<String, String> {
        let goal = GoalVector::new(pairs(goal_json, "goal")?).map_err(|e| e.to_string())?;
        let reward = RewardVector::new(pairs(reward_json, "reward")?);
        let mut out = Map::new();
        for kind in RewardFunctionKind::ALL {
            let v = kind.evaluate(&goal, &reward).map_err(|e| e.to_string())?;
            out.insert(kind.as_str().to_string(), json!(v));
        }
        Ok(Value::Object(out).to_string())
    }

    fn config(toml_src: &str) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::from_toml_str(toml_src).map_err(|e| e.to_string())?;
        // no threads in the browser
        cfg.parallelism = 1;
        ensure_valid(&cfg).map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn backends(cfg: &RunConfig) -> Result<Backends, String> {
        let catalog = Catalog::resolve(&cfg.catalog).map_err(|e| e.to_string())?;
        let world = SyntheticWorld::new(SyntheticWorldConfig::from_params(&cfg.backend.synthetic, catalog));
        Ok(world.backends(cfg.backend.response.model_id.clone()))
    }

    /// Runs one episode on `prompt` and returns its record as JSON.
    pub fn episode(config_toml: &str, prompt: &str, seed: u64) -> Result<String, String> {
        let mut cfg = config(config_toml)?;
        cfg.seeds = vec![seed];
        let backends = backends(&cfg)?;
        let artifact =
            run_experiment(&cfg, &[prompt.to_string()], &backends, None).map_err(|e| e.to_string())?;
        if let Some(f) = artifact.failures.first() {
            return Err(f.error.clone());
        }
        let record = artifact.records.first().ok_or("no record produced")?;
        serde_json::to_string_pretty(record).map_err(|e| e.to_string())
    }

    /// Sweeps K for both filters over the first `n_prompts` bundled prompts
    /// and returns the sweep CSV.
    pub fn sweep(config_toml: &str, k_values: &[u64], n_prompts: usize) -> Result<String, String> {
        let cfg = config(config_toml)?;
        let mut prompts = desk_prompts();
        prompts.truncate(n_prompts.max(1));
        let backends = backends(&cfg)?;
        let result = emit_sweep(&cfg, k_values, &prompts, &backends).map_err(|e| e.to_string())?;
        Ok(sweep_csv(&result.rows))
    }
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// `{"L2": .., "COMPLETION": .., "MAX_ERROR": ..}` for a goal and reward.
#[wasm_bindgen]
pub fn score(goal_json: &str, reward_json: &str) -> Result<String, JsValue> {
    js(demo::score(goal_json, reward_json))
}

/// One synthetic episode; returns the record JSON.
#[wasm_bindgen]
pub fn run_episode(config_toml: &str, prompt: &str, seed: u64) -> Result<String, JsValue> {
    js(demo::episode(config_toml, prompt, seed))
}

/// Random vs heuristic filter at each K; returns CSV.
#[wasm_bindgen]
pub fn sweep(config_toml: &str, k_values: Vec<u64>, n_prompts: usize) -> Result<String, JsValue> {
    js(demo::sweep(config_toml, &k_values, n_prompts))
}
