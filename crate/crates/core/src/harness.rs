//! Multi-seed experiment runs, JSONL episode records, aggregation and K
//! sweeps.
//!
//! Aggregation is a pure fold over records: per group, a per-seed mean over
//! prompts, then the mean and population standard deviation of those
//! per-seed means. Goal completion is reported as a percentage; L2 and
//! max-error as positive distances.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::{ensure_valid, RunConfig};
use crate::error::{Error, Result};
use crate::policies::Backends;
use crate::rewards::{sample_goal, RewardFunctionKind};
use crate::rng::{episode_rng, goal_rng};
use crate::search::{run_episode, EpisodeId, SearchContext};
use crate::types::{Catalog, EpisodeRecord, FilterKind, Method, RECORD_SCHEMA_VERSION};

const DESK_PROMPTS: &str = include_str!("../data/desk_prompts.txt");

/// Non-blank lines, trimmed.
pub fn parse_prompts(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// The bundled desk-scale prompt set.
pub fn desk_prompts() -> Vec<String> {
    parse_prompts(DESK_PROMPTS)
}

pub fn load_prompts(path: &Path) -> Result<Vec<String>> {
    let prompts = parse_prompts(&std::fs::read_to_string(path)?);
    if prompts.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    Ok(prompts)
}

pub fn write_record<W: Write + ?Sized>(out: &mut W, record: &EpisodeRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::RecordParse {
        line: 0,
        message: e.to_string(),
    })?;
    writeln!(out, "{line}")?;
    Ok(())
}

pub fn records_to_jsonl(records: &[EpisodeRecord]) -> Result<String> {
    let mut buf = Vec::new();
    for r in records {
        write_record(&mut buf, r)?;
    }
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

/// Reads JSONL records, skipping blank lines. Line numbers are 1-based.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line).map_err(|e| Error::RecordParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.schema_version != RECORD_SCHEMA_VERSION {
            return Err(Error::RecordParse {
                line: i + 1,
                message: format!("unsupported schema_version {}", rec.schema_version),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub completed: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifact {
    pub config: RunConfig,
    pub records: Vec<EpisodeRecord>,
    pub rows: Vec<AggregateRow>,
    pub failures: Vec<SeedFailure>,
}

/// Runs every (seed, prompt) episode. Records are appended to `sink` as
/// they complete. A backend failure ends its seed but keeps that seed's
/// finished records; any other error aborts the run.
pub fn run_experiment(
    cfg: &RunConfig,
    prompts: &[String],
    backends: &Backends,
    mut sink: Option<&mut dyn Write>,
) -> Result<RunArtifact> {
    ensure_valid(cfg)?;
    if prompts.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    let catalog = Catalog::resolve(&cfg.catalog)?;
    let ctx = SearchContext {
        cfg,
        catalog: &catalog,
        backends,
    };

    let mut records = Vec::with_capacity(cfg.seeds.len() * prompts.len());
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let mut completed = 0;
        for (idx, prompt) in prompts.iter().enumerate() {
            let goal = sample_goal(&catalog, cfg.n_objectives, &mut goal_rng(seed, idx))?;
            let id = EpisodeId { seed, prompt_index: idx };
            match run_episode(&ctx, id, prompt, &goal, &mut episode_rng(seed, idx)) {
                Ok(rec) => {
                    if let Some(out) = sink.as_deref_mut() {
                        write_record(out, &rec)?;
                        out.flush()?;
                    }
                    records.push(rec);
                    completed += 1;
                }
                Err(Error::Backend(e)) => {
                    failures.push(SeedFailure {
                        seed,
                        completed,
                        error: e.to_string(),
                    });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }

    let rows = if records.is_empty() { Vec::new() } else { aggregate(&records)? };
    Ok(RunArtifact {
        config: cfg.clone(),
        records,
        rows,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GroupKey {
    pub method: Method,
    pub filter: FilterKind,
    pub n_objectives: usize,
    pub reward_function: RewardFunctionKind,
    pub k: u64,
}

impl GroupKey {
    pub fn of(r: &EpisodeRecord) -> Self {
        Self {
            method: r.method,
            filter: r.filter,
            n_objectives: r.goal.len(),
            reward_function: r.reward_function,
            k: r.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<Stat> {
    if values.is_empty() {
        return Err(Error::Empty("value list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Stat { mean, std: var.sqrt() })
}

/// Converts a raw reward into the reported unit.
pub fn reported(kind: RewardFunctionKind, raw: f64) -> f64 {
    match kind {
        RewardFunctionKind::Completion => 100.0 * raw,
        RewardFunctionKind::L2 | RewardFunctionKind::MaxError => 0.0 - raw,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    #[serde(flatten)]
    pub key: GroupKey,
    pub n_seeds: usize,
    pub n_episodes: usize,
    pub single_seed: bool,
    /// Goal completion, percent.
    pub completion: Stat,
    pub max_error: Stat,
    pub l2: Stat,
}

impl AggregateRow {
    pub fn metric(&self, kind: RewardFunctionKind) -> Stat {
        match kind {
            RewardFunctionKind::Completion => self.completion,
            RewardFunctionKind::MaxError => self.max_error,
            RewardFunctionKind::L2 => self.l2,
        }
    }
}

/// Groups by (method, filter, objective count, reward function, K).
/// Within a group, records are ordered by (seed, prompt index) so the
/// result does not depend on file order.
pub fn aggregate(records: &[EpisodeRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::Empty("record list"));
    }
    let mut groups: BTreeMap<GroupKey, BTreeMap<u64, BTreeMap<usize, &EpisodeRecord>>> = BTreeMap::new();
    for r in records {
        groups
            .entry(GroupKey::of(r))
            .or_default()
            .entry(r.seed)
            .or_default()
            .insert(r.prompt_index, r);
    }

    groups
        .into_iter()
        .map(|(key, seeds)| {
            let per_seed = |kind: RewardFunctionKind| -> Result<Stat> {
                let means = seeds
                    .values()
                    .map(|eps| {
                        let vals = eps
                            .values()
                            .map(|r| {
                                r.all_reward_scores
                                    .get(&kind)
                                    .map(|&v| reported(kind, v))
                                    .ok_or_else(|| Error::RecordParse {
                                        line: 0,
                                        message: format!("record missing {kind} score"),
                                    })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(mean_std(&vals)?.mean)
                    })
                    .collect::<Result<Vec<_>>>()?;
                mean_std(&means)
            };
            Ok(AggregateRow {
                key,
                n_seeds: seeds.len(),
                n_episodes: seeds.values().map(BTreeMap::len).sum(),
                single_seed: seeds.len() == 1,
                completion: per_seed(RewardFunctionKind::Completion)?,
                max_error: per_seed(RewardFunctionKind::MaxError)?,
                l2: per_seed(RewardFunctionKind::L2)?,
            })
        })
        .collect()
}

pub const AGGREGATE_CSV_HEADER: &str = "method,filter,n_objectives,reward_function,k,n_seeds,n_episodes,single_seed,\
completion_pct_mean,completion_pct_std,max_error_mean,max_error_std,l2_mean,l2_std";

/// Full-precision CSV; floats use shortest round-trip formatting.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let k = &r.key;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            k.method,
            k.filter,
            k.n_objectives,
            k.reward_function,
            k.k,
            r.n_seeds,
            r.n_episodes,
            r.single_seed,
            r.completion.mean,
            r.completion.std,
            r.max_error.mean,
            r.max_error.std,
            r.l2.mean,
            r.l2.std
        );
    }
    out
}

/// Fixed-width table for terminals.
pub fn aggregate_table(rows: &[AggregateRow]) -> String {
    let mut out = format!(
        "{:<7} {:<10} {:>4} {:<10} {:>4} {:>6}  {:>16}  {:>14}  {:>14}\n",
        "method", "filter", "objs", "reward", "K", "seeds", "goal comp. (%)", "max error", "L2 dist."
    );
    for r in rows {
        let k = &r.key;
        let cell = |s: Stat| format!("{:.2} ± {:.2}", s.mean, s.std);
        let _ = writeln!(
            out,
            "{:<7} {:<10} {:>4} {:<10} {:>4} {:>5}{}  {:>16}  {:>14}  {:>14}",
            k.method.as_str(),
            k.filter.as_str(),
            k.n_objectives,
            k.reward_function.as_str(),
            k.k,
            r.n_seeds,
            if r.single_seed { "*" } else { " " },
            cell(r.completion),
            cell(r.max_error),
            cell(r.l2)
        );
    }
    if rows.iter().any(|r| r.single_seed) {
        out.push_str("* single seed: std reported as 0\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub filter: FilterKind,
    pub k: u64,
    pub metric: RewardFunctionKind,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

pub const SWEEP_CSV_HEADER: &str = "method,filter,k,metric,mean,std,n_seeds";

/// The config for one sweep point, with per-step K rescaled for beam
/// methods.
pub fn sweep_point(base: &RunConfig, filter: FilterKind, k: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.k = k;
    cfg.filter = if base.method == Method::MfBon { FilterKind::Random } else { filter };
    if base.method.is_multi_step() {
        let steps = base.width * base.depth;
        if steps == 0 || k % steps != 0 {
            return Err(Error::InvalidConfig(vec![format!(
                "K={k} is not a multiple of W·D={steps}"
            )]));
        }
        cfg.per_step_k = k / steps;
    }
    ensure_valid(&cfg)?;
    Ok(cfg)
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub records: Vec<EpisodeRecord>,
}

/// One experiment per (filter, K). MF-BoN has a single filter. Every K is
/// checked before anything runs.
pub fn emit_sweep(base: &RunConfig, k_values: &[u64], prompts: &[String], backends: &Backends) -> Result<SweepResult> {
    if k_values.is_empty() {
        return Err(Error::Empty("k_values"));
    }
    let filters: &[FilterKind] = if base.method == Method::MfBon {
        &[FilterKind::Random]
    } else {
        &[FilterKind::Random, FilterKind::Heuristic]
    };
    let mut points = Vec::new();
    for &filter in filters {
        for &k in k_values {
            points.push(sweep_point(base, filter, k)?);
        }
    }

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for cfg in points {
        let artifact = run_experiment(&cfg, prompts, backends, None)?;
        if let Some(f) = artifact.failures.first() {
            return Err(Error::Backend(crate::error::BackendError::unavailable(format!(
                "seed {} failed during sweep: {}",
                f.seed, f.error
            ))));
        }
        let row = artifact
            .rows
            .first()
            .ok_or(Error::Empty("sweep point produced no records"))?;
        let stat = row.metric(cfg.reward_function);
        rows.push(SweepRow {
            method: cfg.method,
            filter: cfg.filter,
            k: cfg.k,
            metric: cfg.reward_function,
            mean: stat.mean,
            std: stat.std,
            n_seeds: row.n_seeds,
        });
        records.extend(artifact.records);
    }
    Ok(SweepResult { rows, records })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.filter, r.k, r.metric, r.mean, r.std, r.n_seeds
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SyntheticParams;
    use crate::error::BackendError;
    use crate::policies::{CallSite, ResponseModel, SyntheticWorld, SyntheticWorldConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn backends() -> Backends {
        let catalog = Catalog::builtin("helpsteer").unwrap();
        SyntheticWorld::new(SyntheticWorldConfig::from_params(&SyntheticParams::default(), catalog)).backends("m")
    }

    fn small(method: Method, filter: FilterKind) -> RunConfig {
        let mut cfg = RunConfig::preset(method, filter);
        cfg.n = 16;
        cfg.k = 4;
        cfg.branch_n = 4;
        cfg.per_step_k = 1;
        cfg.parallelism = 1;
        cfg
    }

    fn prompts(n: usize) -> Vec<String> {
        desk_prompts().into_iter().cycle().take(n).collect()
    }

    #[test]
    fn desk_prompts_load() {
        assert_eq!(desk_prompts().len(), 20);
        assert_eq!(parse_prompts("a\n\n  b  \n"), vec!["a", "b"]);
    }

    #[test]
    fn three_seeds_of_100_prompts() {
        let cfg = small(Method::Bon, FilterKind::Heuristic);
        let art = run_experiment(&cfg, &prompts(100), &backends(), None).unwrap();
        assert_eq!(art.records.len(), 300);
        assert_eq!(art.rows.len(), 1);
        assert_eq!(art.rows[0].n_seeds, 3);
        assert!(!art.rows[0].single_seed);
    }

    #[test]
    fn single_seed_flagged() {
        let mut cfg = small(Method::Bon, FilterKind::Random);
        cfg.seeds = vec![5];
        let art = run_experiment(&cfg, &prompts(4), &backends(), None).unwrap();
        let row = &art.rows[0];
        assert!(row.single_seed);
        assert_eq!((row.completion.std, row.l2.std, row.max_error.std), (0.0, 0.0, 0.0));
    }

    #[test]
    fn repeated_runs_write_identical_bytes() {
        for method in [Method::MfBon, Method::Bon, Method::BeamSearch, Method::Greedy] {
            let cfg = small(method, FilterKind::Heuristic);
            let mut a = Vec::new();
            let mut b = Vec::new();
            run_experiment(&cfg, &prompts(5), &backends(), Some(&mut a)).unwrap();
            run_experiment(&cfg, &prompts(5), &backends(), Some(&mut b)).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, b, "{method}");
        }
    }

    #[test]
    fn records_roundtrip_and_reaggregate_exactly() {
        let cfg = small(Method::BeamSearch, FilterKind::Heuristic);
        let mut buf = Vec::new();
        let art = run_experiment(&cfg, &prompts(6), &backends(), Some(&mut buf)).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, art.records);
        let rows = aggregate(&back).unwrap();
        assert_eq!(aggregate_csv(&rows), aggregate_csv(&art.rows));
        let mut reversed = back.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed).unwrap(), rows);
    }

    #[test]
    fn receipts_sum_to_total_spend() {
        let cfg = small(Method::Bon, FilterKind::Random);
        let art = run_experiment(&cfg, &prompts(7), &backends(), None).unwrap();
        let resp: u64 = art.records.iter().map(|r| r.budget_receipt.response_used).sum();
        let opt: u64 = art.records.iter().map(|r| r.budget_receipt.optimizer_used).sum();
        assert_eq!((opt, resp), (16 * 21, 4 * 21));
    }

    #[test]
    fn goals_shared_across_filters() {
        let a = run_experiment(&small(Method::Bon, FilterKind::Random), &prompts(5), &backends(), None).unwrap();
        let b = run_experiment(&small(Method::Bon, FilterKind::Heuristic), &prompts(5), &backends(), None).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.goal, y.goal);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(run_experiment(&small(Method::Bon, FilterKind::Random), &[], &backends(), None).is_err());
        let mut bad = small(Method::Bon, FilterKind::Random);
        bad.k = 17;
        assert!(run_experiment(&bad, &prompts(1), &backends(), None).is_err());
        assert!(aggregate(&[]).is_err());
    }

    struct FailAfter {
        inner: Backends,
        left: AtomicUsize,
    }

    impl ResponseModel for FailAfter {
        fn respond(&self, prompt: &str, site: CallSite) -> std::result::Result<String, BackendError> {
            if self.left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_err() {
                return Err(BackendError::unavailable("gone"));
            }
            self.inner.response.respond(prompt, site)
        }
    }

    #[test]
    fn backend_failure_aborts_seed_and_keeps_records() {
        let inner = backends();
        let mut cfg = small(Method::Bon, FilterKind::Random);
        cfg.seeds = vec![1, 2];
        // three episodes' worth of responses, then failure
        let failing = Backends {
            response: Arc::new(FailAfter {
                inner: inner.clone(),
                left: AtomicUsize::new(3 * 4),
            }),
            ..inner
        };
        let mut sink = Vec::new();
        let art = run_experiment(&cfg, &prompts(5), &failing, Some(&mut sink)).unwrap();
        assert_eq!(art.records.len(), 3);
        assert_eq!(read_records(sink.as_slice()).unwrap().len(), 3);
        assert_eq!(art.failures.len(), 2);
        assert_eq!((art.failures[0].seed, art.failures[0].completed), (1, 3));
        assert_eq!((art.failures[1].seed, art.failures[1].completed), (2, 0));
    }

    #[test]
    fn schema_and_syntax_errors_report_line() {
        let cfg = small(Method::MfBon, FilterKind::Random);
        let art = run_experiment(&cfg, &prompts(1), &backends(), None).unwrap();
        let line = records_to_jsonl(&art.records).unwrap();
        let bumped = line.replace("\"schema_version\":1", "\"schema_version\":99");
        let err = read_records(format!("\n{bumped}").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::RecordParse { line: 2, .. }), "{err}");
        assert!(matches!(read_records("{".as_bytes()), Err(Error::RecordParse { line: 1, .. })));
    }

    #[test]
    fn population_std_example() {
        let per_seed: Vec<f64> = [0.24, 0.20, 0.28].iter().map(|&v| reported(RewardFunctionKind::Completion, v)).collect();
        let s = mean_std(&per_seed).unwrap();
        assert!((s.mean - 24.0).abs() < 1e-9);
        // sqrt(((0)^2 + 4^2 + 4^2) / 3)
        assert!((s.std - (32.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert_eq!(format!("{:.2}", s.std), "3.27");
        assert_eq!(mean_std(&[7.5]).unwrap(), Stat { mean: 7.5, std: 0.0 });
        let l2: Vec<f64> = [-1.0, -2.0].iter().map(|&v| reported(RewardFunctionKind::L2, v)).collect();
        assert_eq!(mean_std(&l2).unwrap().mean, 1.5);
    }

    #[test]
    fn aggregate_from_hand_built_records() {
        let cfg = small(Method::MfBon, FilterKind::Random);
        let mut cfg3 = cfg.clone();
        cfg3.seeds = vec![1, 2, 3];
        let art = run_experiment(&cfg3, &prompts(1), &backends(), None).unwrap();
        let mut records = art.records;
        for (r, v) in records.iter_mut().zip([0.24, 0.20, 0.28]) {
            r.all_reward_scores.insert(RewardFunctionKind::Completion, v);
        }
        let rows = aggregate(&records).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].completion.mean - 24.0).abs() < 1e-9);
        assert!((rows[0].completion.std - 3.265986).abs() < 1e-6);
    }

    #[test]
    fn sweep_rows_per_filter() {
        let mut base = small(Method::Bon, FilterKind::Random);
        base.seeds = vec![1];
        let res = emit_sweep(&base, &[1, 2, 4, 8, 16], &prompts(3), &backends()).unwrap();
        assert_eq!(res.rows.len(), 10);
        assert_eq!(res.rows.iter().filter(|r| r.filter == FilterKind::Heuristic).count(), 5);
        let csv = sweep_csv(&res.rows);
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
        assert_eq!(csv.lines().count(), 11);
        assert!(emit_sweep(&base, &[], &prompts(3), &backends()).is_err());
    }

    #[test]
    fn sweep_rescales_beam_steps() {
        let base = RunConfig::preset(Method::BeamSearch, FilterKind::Heuristic);
        assert_eq!(sweep_point(&base, FilterKind::Random, 8).unwrap().per_step_k, 2);
        assert!(sweep_point(&base, FilterKind::Random, 6).is_err());
        let gs = RunConfig::preset(Method::Greedy, FilterKind::Heuristic);
        assert!(sweep_point(&gs, FilterKind::Heuristic, 2).is_err());
        let mf = RunConfig::preset(Method::MfBon, FilterKind::Random);
        assert_eq!(sweep_point(&mf, FilterKind::Heuristic, 3).unwrap().filter, FilterKind::Random);
    }

    #[test]
    fn tables_render() {
        let art = run_experiment(&small(Method::Bon, FilterKind::Heuristic), &prompts(3), &backends(), None).unwrap();
        let table = aggregate_table(&art.rows);
        assert!(table.contains("BON") && table.contains("HEURISTIC"));
        let csv = aggregate_csv(&art.rows);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), AGGREGATE_CSV_HEADER.split(',').count());
    }
}
