//! Top-K selection of candidates before they reach the response model.
//!
//! Ranking order everywhere: scalar score descending, then L2 score of the
//! same vector descending, then `(beam, index)` ascending. Candidates that
//! were never scored (parse failures) rank below every scored one.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::budget::BudgetLedger;
use crate::error::{Error, Result};
use crate::exec::map_bounded;
use crate::policies::{score_heuristic, HeuristicScorer};
use crate::rewards::{evaluate, r_l2, RewardFunctionKind};
use crate::types::{Candidate, Catalog, GoalVector, RewardVector};

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 || k > available {
        Err(Error::InvalidK { k, available })
    } else {
        Ok(())
    }
}

fn by_position(a: &Candidate, b: &Candidate) -> Ordering {
    (a.beam, a.index).cmp(&(b.beam, b.index))
}

/// Ranking keys for a candidate; `None` ranks last.
#[derive(Debug, Clone, Copy)]
pub struct RankKey {
    pub score: Option<f64>,
    pub l2: Option<f64>,
}

fn cmp_desc(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Positions of `candidates` ordered best-first; `keys[i]` belongs to
/// `candidates[i]`.
pub fn ranked(candidates: &[Candidate], keys: &[RankKey]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        cmp_desc(keys[a].score, keys[b].score)
            .then_with(|| cmp_desc(keys[a].l2, keys[b].l2))
            .then_with(|| by_position(&candidates[a], &candidates[b]))
    });
    order
}

fn vector_key(goal: &GoalVector, score: Option<f64>, vector: Option<&RewardVector>) -> Result<RankKey> {
    let l2 = vector.map(|v| r_l2(goal, v)).transpose()?;
    Ok(RankKey { score, l2 })
}

/// Uniform sample of `k` candidates without replacement, returned in
/// `(beam, index)` order. Never touches a scorer.
pub fn filter_random<R: Rng + ?Sized>(candidates: &[Candidate], k: usize, rng: &mut R) -> Result<Vec<Candidate>> {
    check_k(k, candidates.len())?;
    let mut picked: Vec<Candidate> = index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    picked.sort_by(by_position);
    Ok(picked)
}

/// Fills `heuristic_vector` and `heuristic_score` for every parseable
/// candidate, one scorer call per (candidate, goal objective).
#[allow(clippy::too_many_arguments)]
pub fn score_heuristics(
    candidates: &mut [Candidate],
    goal: &GoalVector,
    reward_kind: RewardFunctionKind,
    response_model_id: &str,
    scorer: &dyn HeuristicScorer,
    catalog: &Catalog,
    ledger: &BudgetLedger,
    parallelism: usize,
) -> Result<()> {
    let specs = goal.ids().map(|id| catalog.require(id)).collect::<Result<Vec<_>>>()?;
    let scored = map_bounded(parallelism, candidates, |_, c| {
        if c.parse_failed {
            return Ok(None);
        }
        let scores = specs
            .iter()
            .map(|spec| score_heuristic(scorer, &c.prompt_text, response_model_id, spec, ledger))
            .collect::<Result<Vec<_>>>()?;
        let vector = RewardVector::for_goal(goal, &scores)?;
        let scalar = evaluate(reward_kind, goal, &vector)?;
        Ok::<_, Error>(Some((vector, scalar)))
    })?;
    for (c, s) in candidates.iter_mut().zip(scored) {
        if let Some((vector, scalar)) = s {
            c.heuristic_vector = Some(vector);
            c.heuristic_score = Some(scalar);
        }
    }
    Ok(())
}

/// The `k` best candidates by heuristic score, in `(beam, index)` order.
/// Candidates must already carry heuristic scores where available.
pub fn top_k_by_heuristic(candidates: &[Candidate], goal: &GoalVector, k: usize) -> Result<Vec<Candidate>> {
    check_k(k, candidates.len())?;
    let keys = candidates
        .iter()
        .map(|c| vector_key(goal, c.heuristic_score, c.heuristic_vector.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut picked: Vec<Candidate> = ranked(candidates, &keys)
        .into_iter()
        .take(k)
        .map(|i| candidates[i].clone())
        .collect();
    picked.sort_by(by_position);
    Ok(picked)
}

/// Heuristic-scores every candidate, then keeps the top `k`.
#[allow(clippy::too_many_arguments)]
pub fn filter_heuristic(
    candidates: &mut [Candidate],
    goal: &GoalVector,
    k: usize,
    reward_kind: RewardFunctionKind,
    response_model_id: &str,
    scorer: &dyn HeuristicScorer,
    catalog: &Catalog,
    ledger: &BudgetLedger,
    parallelism: usize,
) -> Result<Vec<Candidate>> {
    check_k(k, candidates.len())?;
    score_heuristics(candidates, goal, reward_kind, response_model_id, scorer, catalog, ledger, parallelism)?;
    top_k_by_heuristic(candidates, goal, k)
}

/// Best candidate by reference score.
pub fn select_best(scored: &[Candidate], goal: &GoalVector) -> Result<Candidate> {
    if scored.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let mut keys = Vec::with_capacity(scored.len());
    for c in scored {
        if c.reference_score.is_none() || c.reference_vector.is_none() {
            return Err(Error::ShapeMismatch(format!("candidate {} has no reference score", c.index)));
        }
        keys.push(vector_key(goal, c.reference_score, c.reference_vector.as_ref())?);
    }
    Ok(scored[ranked(scored, &keys)[0]].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::BackendError;
    use crate::types::ObjectiveSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

    fn goal() -> GoalVector {
        GoalVector::new([("verbosity", 2)]).unwrap()
    }

    fn with_heuristic(index: usize, score: i64) -> Candidate {
        let mut c = Candidate::new(index, format!("p{index}"));
        let v = RewardVector::new([("verbosity", score)]);
        c.heuristic_score = Some(r_l2(&goal(), &v).unwrap());
        c.heuristic_vector = Some(v);
        c
    }

    fn with_reference(index: usize, scalar: f64, vector: &[(&str, i64)]) -> Candidate {
        let mut c = Candidate::new(index, format!("p{index}"));
        c.response_text = Some("r".into());
        c.reference_vector = Some(RewardVector::new(vector.iter().map(|(a, b)| (*a, *b))));
        c.reference_score = Some(scalar);
        c
    }

    fn scalar_only(scores: &[f64]) -> Vec<Candidate> {
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut c = Candidate::new(i, format!("p{i}"));
                c.heuristic_score = Some(*s);
                c.heuristic_vector = Some(RewardVector::new([("verbosity", 2)]));
                c
            })
            .collect()
    }

    #[test]
    fn top_two_by_score() {
        let cands = scalar_only(&[-1.0, -0.2, -0.6]);
        let picked = top_k_by_heuristic(&cands, &goal(), 2).unwrap();
        assert_eq!(picked.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let cands = scalar_only(&[-0.5, -0.5, -0.9]);
        let picked = top_k_by_heuristic(&cands, &goal(), 1).unwrap();
        assert_eq!(picked[0].index, 0);
    }

    #[test]
    fn completion_ties_break_on_l2() {
        // both miss the goal under COMPLETION; index 1 is closer in L2
        let goal = goal();
        let mut cands = vec![with_heuristic(0, 4), with_heuristic(1, 3)];
        for c in &mut cands {
            c.heuristic_score = Some(evaluate(RewardFunctionKind::Completion, &goal, c.heuristic_vector.as_ref().unwrap()).unwrap());
        }
        let picked = top_k_by_heuristic(&cands, &goal, 1).unwrap();
        assert_eq!(picked[0].index, 1);
    }

    #[test]
    fn unscored_rank_last() {
        let mut cands = vec![Candidate::new(0, "orig"), with_heuristic(1, 0)];
        cands[0].parse_failed = true;
        let picked = top_k_by_heuristic(&cands, &goal(), 1).unwrap();
        assert_eq!(picked[0].index, 1);
        assert_eq!(top_k_by_heuristic(&cands, &goal(), 2).unwrap().len(), 2);
    }

    #[test]
    fn k_out_of_range() {
        let cands = scalar_only(&[0.0, 0.0]);
        assert!(matches!(top_k_by_heuristic(&cands, &goal(), 0), Err(Error::InvalidK { .. })));
        assert!(matches!(top_k_by_heuristic(&cands, &goal(), 3), Err(Error::InvalidK { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(filter_random(&cands, 3, &mut rng).is_err());
        assert!(filter_random(&cands, 0, &mut rng).is_err());
    }

    #[test]
    fn random_full_and_seeded() {
        let cands = scalar_only(&[0.0; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(filter_random(&cands, 6, &mut rng).unwrap(), cands);
        let a = filter_random(&cands, 1, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = filter_random(&cands, 1, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_is_uniform() {
        // 10,000 draws of k=1 from 4; each count within 5 sigma of 2,500
        let cands = scalar_only(&[0.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(888);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[filter_random(&cands, 1, &mut rng).unwrap()[0].index] += 1;
        }
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2_500.0).abs() <= 5.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2_500.0).powi(2) / 2_500.0).sum();
        // 3 dof, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    struct Fixed(AtomicUsize);

    impl HeuristicScorer for Fixed {
        fn score(&self, prompt: &str, _: &str, _: &ObjectiveSpec) -> Result<f64, BackendError> {
            self.0.fetch_add(1, AtomicOrdering::SeqCst);
            Ok(prompt.len() as f64 % 5.0)
        }
    }

    #[test]
    fn heuristic_scores_every_candidate_even_at_full_k() {
        let catalog = Catalog::builtin("helpsteer").unwrap();
        let goal = GoalVector::new([("verbosity", 2), ("coherence", 3)]).unwrap();
        let mut cands: Vec<Candidate> = (0..5).map(|i| Candidate::new(i, "x".repeat(i + 1))).collect();
        let scorer = Fixed(AtomicUsize::new(0));
        let ledger = BudgetLedger::new(0, 0);
        let picked = filter_heuristic(&mut cands, &goal, 5, RewardFunctionKind::L2, "m", &scorer, &catalog, &ledger, 2).unwrap();
        assert_eq!(picked.len(), 5);
        assert_eq!(scorer.0.load(AtomicOrdering::SeqCst), 10);
        assert_eq!(ledger.snapshot().heuristic_calls, 10);
        assert!(cands.iter().all(|c| c.heuristic_vector.is_some()));
    }

    #[test]
    fn random_filter_never_scores() {
        let cands: Vec<Candidate> = (0..5).map(|i| Candidate::new(i, "x")).collect();
        let picked = filter_random(&cands, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(picked.iter().all(|c| c.heuristic_vector.is_none()));
    }

    #[test]
    fn select_best_examples() {
        let g = GoalVector::new([("a", 1)]).unwrap();
        let scored = vec![
            with_reference(0, 0.0, &[("a", 0)]),
            with_reference(1, 1.0, &[("a", 1)]),
            with_reference(2, 0.0, &[("a", 3)]),
        ];
        assert_eq!(select_best(&scored, &g).unwrap().index, 1);

        let tied = vec![with_reference(0, -2.0, &[("a", 3)]), with_reference(1, -2.0, &[("a", 3)])];
        assert_eq!(select_best(&tied, &g).unwrap().index, 0);

        let single = vec![with_reference(4, -1.0, &[("a", 0)])];
        assert_eq!(select_best(&single, &g).unwrap(), single[0]);

        assert!(select_best(&[], &g).is_err());
        assert!(select_best(&[Candidate::new(0, "p")], &g).is_err());
    }

    proptest! {
        #[test]
        fn heuristic_top_k_properties(
            scores in proptest::collection::vec(0i64..=4, 1..24),
            seed in any::<u64>(),
        ) {
            let cands: Vec<Candidate> = scores.iter().enumerate().map(|(i, &s)| with_heuristic(i, s)).collect();
            let mut shuffled = cands.clone();
            rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
            let mut prev: Vec<usize> = Vec::new();
            for k in 1..=cands.len() {
                let picked = top_k_by_heuristic(&cands, &goal(), k).unwrap();
                let idx: Vec<usize> = picked.iter().map(|c| c.index).collect();
                // exactly k, distinct, in index order
                prop_assert_eq!(idx.len(), k);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                // text untouched
                for c in &picked {
                    prop_assert_eq!(&c.prompt_text, &format!("p{}", c.index));
                }
                // input order does not matter
                let from_shuffled: Vec<usize> = top_k_by_heuristic(&shuffled, &goal(), k).unwrap().iter().map(|c| c.index).collect();
                prop_assert_eq!(&from_shuffled, &idx);
                // nested as k grows
                prop_assert!(prev.iter().all(|i| idx.contains(i)));
                prev = idx;
            }
        }

        #[test]
        fn random_returns_distinct_sorted(n in 1usize..40, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let cands: Vec<Candidate> = (0..n).map(|i| Candidate::new(i, format!("p{i}"))).collect();
            let picked = filter_random(&cands, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(picked.len(), k);
            prop_assert!(picked.windows(2).all(|w| w[0].index < w[1].index));
        }
    }
}
