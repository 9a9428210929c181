//! Search strategies: MF-BoN, BoN, beam search and greedy search.
//!
//! Every strategy is built from one step: ask the optimizer for a batch of
//! modified prompts, filter the batch down (randomly or by heuristic score),
//! send the survivors to the response model, and reference-score the
//! responses. Beam search repeats the step `D` times, feeding each beam's
//! reference-scored winners back to the optimizer as history.
//!
//! Randomness: each episode draws one `u64` key from the caller's generator;
//! optimizer call sites and random-filter streams are derived from that key
//! and `(step, beam)`, so Random and Heuristic runs over the same episode
//! see identical optimizer batches.

use rand::Rng;

use crate::budget::BudgetLedger;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::map_bounded;
use crate::filtering::{filter_heuristic, filter_random, ranked, select_best, RankKey};
use crate::policies::{
    generate_response, optimize_prompts, parse_modified_prompt, render_optimizer_messages, score_reference, Backends,
    CallSite,
};
use crate::rewards::{evaluate, r_l2, RewardFunctionKind};
use crate::rng::StreamKey;
use crate::types::{
    BeamState, Candidate, Catalog, EpisodeRecord, FilterKind, GoalVector, HistoryEntry, Method, RewardVector,
    TraceStep, RECORD_SCHEMA_VERSION,
};

/// Everything a strategy needs besides the episode inputs.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub cfg: &'a RunConfig,
    pub catalog: &'a Catalog,
    pub backends: &'a Backends,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeId {
    pub seed: u64,
    pub prompt_index: usize,
}

impl SearchContext<'_> {
    fn parallelism(&self) -> usize {
        self.cfg.parallelism.max(1)
    }

    /// Optimizer batch → parsed candidates → filter. Returns the survivors.
    fn generate_and_filter(
        &self,
        state: &BeamState,
        n: usize,
        k: usize,
        site: CallSite,
        ledger: &BudgetLedger,
    ) -> Result<Vec<Candidate>> {
        let messages = render_optimizer_messages(state, self.catalog, self.cfg.method.is_multi_step())?;
        let raws = optimize_prompts(self.backends.optimizer.as_ref(), state, &messages, n, site, ledger)?;
        let mut candidates = parse_candidates(&raws, &state.original_prompt, site.beam);
        let k = k.min(candidates.len());
        match self.cfg.filter {
            FilterKind::Random => {
                let mut rng = StreamKey::new("filter")
                    .u64(site.episode)
                    .u64(site.step as u64)
                    .u64(site.beam as u64)
                    .rng();
                filter_random(&candidates, k, &mut rng)
            }
            FilterKind::Heuristic => filter_heuristic(
                &mut candidates,
                &state.goal,
                k,
                self.cfg.filter_reward(),
                &self.backends.response_model_id,
                self.backends.heuristic.as_ref(),
                self.catalog,
                ledger,
                self.parallelism(),
            ),
        }
    }

    /// One response and one reference vector per candidate.
    fn respond_and_score(
        &self,
        selected: Vec<Candidate>,
        goal: &GoalVector,
        site: CallSite,
        ledger: &BudgetLedger,
    ) -> Result<Vec<Candidate>> {
        let specs = goal.ids().map(|id| self.catalog.require(id)).collect::<Result<Vec<_>>>()?;
        let reward_kind = self.cfg.reward_function;
        map_bounded(self.parallelism(), &selected, |_, c| {
            let response = generate_response(self.backends.response.as_ref(), &c.prompt_text, site, ledger)?;
            let scores = specs
                .iter()
                .map(|spec| score_reference(self.backends.reference.as_ref(), &c.prompt_text, &response, spec, ledger))
                .collect::<Result<Vec<_>>>()?;
            let vector = RewardVector::for_goal(goal, &scores)?;
            let mut scored = c.clone();
            scored.reference_score = Some(evaluate(reward_kind, goal, &vector)?);
            scored.reference_vector = Some(vector);
            scored.response_text = Some(response);
            Ok(scored)
        })
    }

    fn step(&self, state: &BeamState, n: usize, k: usize, site: CallSite, ledger: &BudgetLedger) -> Result<Vec<Candidate>> {
        let selected = self.generate_and_filter(state, n, k, site, ledger)?;
        self.respond_and_score(selected, &state.goal, site, ledger)
    }
}

/// Parses a batch. Unparseable completions keep their slot but carry the
/// original prompt and `parse_failed`; if nothing parses, the batch
/// collapses to the original prompt alone.
pub fn parse_candidates(raws: &[String], original_prompt: &str, beam: usize) -> Vec<Candidate> {
    let mut any_ok = false;
    let candidates: Vec<Candidate> = raws
        .iter()
        .enumerate()
        .map(|(i, raw)| match parse_modified_prompt(raw) {
            Ok(text) => {
                any_ok = true;
                Candidate::new(i, text).with_beam(beam)
            }
            Err(_) => {
                let mut c = Candidate::new(i, original_prompt).with_beam(beam);
                c.parse_failed = true;
                c
            }
        })
        .collect();
    if any_ok {
        candidates
    } else {
        vec![Candidate::new(0, original_prompt).with_beam(beam)]
    }
}

fn history_entry(c: &Candidate) -> HistoryEntry {
    HistoryEntry {
        prompt_text: c.prompt_text.clone(),
        reward_vector: c.reference_vector.clone().expect("scored candidate"),
        scalar_reward: c.reference_score.expect("scored candidate"),
    }
}

fn finish(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    best: Candidate,
    trace: Vec<TraceStep>,
    ledger: &BudgetLedger,
) -> Result<EpisodeRecord> {
    let vector = best
        .reference_vector
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("best candidate has no reference vector".into()))?;
    let all_reward_scores = RewardFunctionKind::ALL
        .iter()
        .map(|&kind| Ok((kind, evaluate(kind, goal, vector)?)))
        .collect::<Result<_>>()?;
    let method = ctx.cfg.method;
    Ok(EpisodeRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        seed: id.seed,
        prompt_index: id.prompt_index,
        original_prompt: prompt.to_string(),
        goal: goal.clone(),
        method,
        filter: if method == Method::MfBon { FilterKind::Random } else { ctx.cfg.filter },
        reward_function: ctx.cfg.reward_function,
        k: ctx.cfg.k,
        best_candidate: best,
        all_reward_scores,
        budget_receipt: ledger.snapshot(),
        per_step_trace: trace,
    })
}

fn site(episode: u64, step: usize, beam: usize) -> CallSite {
    CallSite { episode, step, beam }
}

/// K responses to the unmodified prompt; the optimizer is never called.
pub fn run_mf_bon<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    ledger: &BudgetLedger,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let episode = rng.next_u64();
    let k = ctx.cfg.k as usize;
    if k == 0 {
        return Err(Error::InvalidCount(0));
    }
    let candidates = (0..k).map(|i| Candidate::new(i, prompt)).collect();
    let scored = ctx.respond_and_score(candidates, goal, site(episode, 1, 0), ledger)?;
    let best = select_best(&scored, goal)?;
    let trace = vec![TraceStep {
        step: 1,
        selected: history_entry(&best),
    }];
    finish(ctx, id, prompt, goal, best, trace, ledger)
}

/// N optimizer completions, filtered to K, responded to and scored.
pub fn run_bon<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    ledger: &BudgetLedger,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let episode = rng.next_u64();
    let root = BeamState::root(prompt, goal.clone());
    let scored = ctx.step(&root, ctx.cfg.n as usize, ctx.cfg.k as usize, site(episode, 1, 0), ledger)?;
    let best = select_best(&scored, goal)?;
    let trace = vec![TraceStep {
        step: 1,
        selected: history_entry(&best),
    }];
    finish(ctx, id, prompt, goal, best, trace, ledger)
}

/// Beam states alive after the last step, best first.
pub type Survivors = Vec<BeamState>;

fn reference_keys(pool: &[Candidate], goal: &GoalVector) -> Result<Vec<RankKey>> {
    pool.iter()
        .map(|c| {
            Ok(RankKey {
                score: c.reference_score,
                l2: c.reference_vector.as_ref().map(|v| r_l2(goal, v)).transpose()?,
            })
        })
        .collect()
}

/// Beam search returning the record and the surviving beams.
pub fn beam_search_with_survivors<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    ledger: &BudgetLedger,
    rng: &mut R,
) -> Result<(EpisodeRecord, Survivors)> {
    let cfg = ctx.cfg;
    let (width, depth) = (cfg.width as usize, cfg.depth as usize);
    let (branch_n, per_step_k) = (cfg.branch_n as usize, cfg.per_step_k as usize);
    if width == 0 || depth == 0 || branch_n == 0 || per_step_k == 0 {
        return Err(Error::InvalidConfig(vec!["W, D, branch_n and per_step_k must be ≥ 1".into()]));
    }

    let episode = rng.next_u64();
    let root = BeamState::root(prompt, goal.clone());
    let mut beams: Vec<BeamState> = vec![root.clone()];
    let mut trace = Vec::with_capacity(depth);
    let mut pool = Vec::new();

    for step in 1..=depth {
        pool = if step == 1 {
            // one root, so the first step draws every beam's share from it
            ctx.step(&root, width * branch_n, width * per_step_k, site(episode, 1, 0), ledger)?
        } else {
            let mut pooled = Vec::with_capacity(beams.len() * per_step_k);
            for (b, state) in beams.iter().enumerate() {
                pooled.extend(ctx.step(state, branch_n, per_step_k, site(episode, step, b), ledger)?);
            }
            pooled
        };

        let best = select_best(&pool, goal)?;
        trace.push(TraceStep {
            step,
            selected: history_entry(&best),
        });

        let keys = reference_keys(&pool, goal)?;
        beams = ranked(&pool, &keys)
            .into_iter()
            .take(width)
            .map(|i| {
                let c = &pool[i];
                let parent = if step == 1 { &root } else { &beams[c.beam] };
                parent.extended(history_entry(c))
            })
            .collect();
    }

    let best = select_best(&pool, goal)?;
    let record = finish(ctx, id, prompt, goal, best, trace, ledger)?;
    Ok((record, beams))
}

pub fn run_beam_search<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    ledger: &BudgetLedger,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    beam_search_with_survivors(ctx, id, prompt, goal, ledger, rng).map(|(r, _)| r)
}

/// Beam search with a single beam.
pub fn run_greedy<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    ledger: &BudgetLedger,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    if ctx.cfg.width != 1 {
        return Err(Error::InvalidConfig(vec![format!("GS requires W=1 (got W={})", ctx.cfg.width)]));
    }
    run_beam_search(ctx, id, prompt, goal, ledger, rng)
}

/// Runs the configured method under a fresh ledger sized from the config.
pub fn run_episode<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    id: EpisodeId,
    prompt: &str,
    goal: &GoalVector,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let ledger = BudgetLedger::new(ctx.cfg.optimizer_budget(), ctx.cfg.k);
    match ctx.cfg.method {
        Method::MfBon => run_mf_bon(ctx, id, prompt, goal, &ledger, rng),
        Method::Bon => run_bon(ctx, id, prompt, goal, &ledger, rng),
        Method::BeamSearch => run_beam_search(ctx, id, prompt, goal, &ledger, rng),
        Method::Greedy => run_greedy(ctx, id, prompt, goal, &ledger, rng),
    }
}
