//! Goal-conditioned reward functions, goal sampling and score quantization.
//!
//! All three functions compare a [`RewardVector`] against the
//! [`GoalVector`] it was produced for and are maximized at 0:
//!
//! * `L2`: `-||r - G||_2`
//! * `COMPLETION`: `1` when `r == G` element-wise, else `0`
//! * `MAX_ERROR`: `-||r - G||_inf`
//!
//! Differences are taken over raw integer scores with no per-objective
//! normalization.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{string_enum, Catalog, GoalVector, RewardVector, ScoreRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardFunctionKind {
    #[serde(rename = "L2", alias = "l2")]
    L2,
    #[serde(rename = "COMPLETION", alias = "completion")]
    Completion,
    #[serde(rename = "MAX_ERROR", alias = "max_error", alias = "MAX-ERROR")]
    MaxError,
}

string_enum!(RewardFunctionKind {
    L2 => "L2",
    Completion => "COMPLETION" | "GOAL-COMPLETION",
    MaxError => "MAX_ERROR" | "MAXERROR",
});

impl RewardFunctionKind {
    pub const ALL: [RewardFunctionKind; 3] = [
        RewardFunctionKind::L2,
        RewardFunctionKind::Completion,
        RewardFunctionKind::MaxError,
    ];
}

pub fn r_l2(goal: &GoalVector, reward: &RewardVector) -> Result<f64> {
    let sq: i64 = reward.diffs(goal)?.iter().map(|d| d * d).sum();
    // `0.0 -` keeps a perfect match at +0.0
    Ok(0.0 - (sq as f64).sqrt())
}

pub fn r_completion(goal: &GoalVector, reward: &RewardVector) -> Result<f64> {
    let hit = reward.diffs(goal)?.iter().all(|d| *d == 0);
    Ok(if hit { 1.0 } else { 0.0 })
}

pub fn r_max_error(goal: &GoalVector, reward: &RewardVector) -> Result<f64> {
    let worst = reward.diffs(goal)?.iter().map(|d| d.abs()).max().unwrap_or(0);
    Ok(0.0 - worst as f64)
}

pub fn evaluate(kind: RewardFunctionKind, goal: &GoalVector, reward: &RewardVector) -> Result<f64> {
    match kind {
        RewardFunctionKind::L2 => r_l2(goal, reward),
        RewardFunctionKind::Completion => r_completion(goal, reward),
        RewardFunctionKind::MaxError => r_max_error(goal, reward),
    }
}

/// Picks `n_objectives` distinct objectives (shuffle, then prefix) and a
/// uniform integer target for each.
pub fn sample_goal<R: Rng + ?Sized>(catalog: &Catalog, n_objectives: usize, rng: &mut R) -> Result<GoalVector> {
    if n_objectives == 0 || n_objectives > catalog.len() {
        return Err(Error::ObjectiveCount {
            requested: n_objectives,
            available: catalog.len(),
        });
    }
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.shuffle(rng);
    let pairs: Vec<(String, i64)> = order[..n_objectives]
        .iter()
        .map(|&i| {
            let spec = &catalog.objectives[i];
            (spec.id.clone(), rng.random_range(spec.range.lo..=spec.range.hi))
        })
        .collect();
    GoalVector::new(pairs)
}

/// Round half up, then clamp into `range`.
pub fn quantize_score(raw: f64, range: ScoreRange) -> Result<i64> {
    if !raw.is_finite() {
        return Err(Error::NonFinite(raw));
    }
    let rounded = (raw + 0.5).floor();
    Ok(rounded.clamp(range.lo as f64, range.hi as f64) as i64)
}

impl RewardFunctionKind {
    pub fn evaluate(self, goal: &GoalVector, reward: &RewardVector) -> Result<f64> {
        evaluate(self, goal, reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(g: &[i64], r: &[i64]) -> (GoalVector, RewardVector) {
        let ids: Vec<String> = (0..g.len()).map(|i| format!("o{i}")).collect();
        let goal = GoalVector::new(ids.iter().cloned().zip(g.iter().copied())).unwrap();
        let reward = RewardVector::new(ids.into_iter().zip(r.iter().copied()));
        (goal, reward)
    }

    #[test]
    fn l2_examples() {
        let (g, r) = pair(&[2, 3], &[2, 3]);
        assert_eq!(r_l2(&g, &r).unwrap(), 0.0);
        let (g, r) = pair(&[4], &[1]);
        assert_eq!(r_l2(&g, &r).unwrap(), -3.0);
        let (g, r) = pair(&[3, 0], &[0, 4]);
        assert_eq!(r_l2(&g, &r).unwrap(), -5.0);
    }

    #[test]
    fn completion_examples() {
        let (g, r) = pair(&[2, 2], &[2, 2]);
        assert_eq!(r_completion(&g, &r).unwrap(), 1.0);
        let (g, r) = pair(&[2, 2], &[2, 1]);
        assert_eq!(r_completion(&g, &r).unwrap(), 0.0);
        let (g, r) = pair(&[0], &[4]);
        assert_eq!(r_completion(&g, &r).unwrap(), 0.0);
    }

    #[test]
    fn max_error_examples() {
        let (g, r) = pair(&[3, 1, 0], &[1, 1, 4]);
        assert_eq!(r_max_error(&g, &r).unwrap(), -4.0);
        let (g, r) = pair(&[4], &[2]);
        assert_eq!(r_max_error(&g, &r).unwrap(), -2.0);
        let (g, r) = pair(&[1, 5, 0, 2], &[1, 5, 0, 2]);
        assert_eq!(r_max_error(&g, &r).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_delegates() {
        let (g, r) = pair(&[4], &[1]);
        assert_eq!(evaluate(RewardFunctionKind::L2, &g, &r).unwrap(), -3.0);
        let (g, r) = pair(&[1, 2], &[1, 2]);
        assert_eq!(evaluate(RewardFunctionKind::Completion, &g, &r).unwrap(), 1.0);
        let (g, r) = pair(&[3, 1, 0], &[1, 1, 4]);
        assert_eq!(evaluate(RewardFunctionKind::MaxError, &g, &r).unwrap(), -4.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (g, _) = pair(&[1, 2], &[1, 2]);
        let (_, r) = pair(&[1], &[1]);
        for kind in RewardFunctionKind::ALL {
            assert!(matches!(evaluate(kind, &g, &r), Err(Error::ShapeMismatch(_))));
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_score(2.5, ScoreRange::new(0, 4)).unwrap(), 3);
        assert_eq!(quantize_score(-0.3, ScoreRange::new(0, 4)).unwrap(), 0);
        assert_eq!(quantize_score(5.7, ScoreRange::new(0, 5)).unwrap(), 5);
        assert_eq!(quantize_score(-0.5, ScoreRange::new(-3, 3)).unwrap(), 0);
        assert!(quantize_score(f64::NAN, ScoreRange::new(0, 4)).is_err());
        assert!(quantize_score(f64::INFINITY, ScoreRange::new(0, 4)).is_err());
    }

    #[test]
    fn sample_goal_catalog_examples() {
        let hs = Catalog::builtin("helpsteer").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(888);
        let g = sample_goal(&hs, 1, &mut rng).unwrap();
        assert_eq!(g.len(), 1);
        let e = &g.entries()[0];
        assert!(["complexity", "verbosity", "coherence"].contains(&e.objective.as_str()));
        assert!((0..=4).contains(&e.target));

        let pol = Catalog::builtin("political").unwrap();
        let g = sample_goal(&pol, 3, &mut rng).unwrap();
        let mut ids: Vec<_> = g.ids().collect();
        ids.sort();
        assert_eq!(ids, ["center", "left", "right"]);
        assert!(g.entries().iter().all(|e| (0..=5).contains(&e.target)));
        g.validate(&pol).unwrap();

        assert!(sample_goal(&pol, 0, &mut rng).is_err());
        assert!(sample_goal(&pol, 4, &mut rng).is_err());
    }

    #[test]
    fn sample_goal_seeded_determinism() {
        let pol = Catalog::builtin("political").unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(89);
        let mut b = ChaCha8Rng::seed_from_u64(89);
        let draws_a: Vec<_> = (0..20).map(|_| sample_goal(&pol, 2, &mut a).unwrap()).collect();
        let draws_b: Vec<_> = (0..20).map(|_| sample_goal(&pol, 2, &mut b).unwrap()).collect();
        assert_eq!(draws_a, draws_b);
        assert!(draws_a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn sample_goal_is_uniform() {
        let hs = Catalog::builtin("helpsteer").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 10_000usize;
        let mut by_objective = [0usize; 3];
        let mut by_target = [0usize; 5];
        for _ in 0..draws {
            let g = sample_goal(&hs, 1, &mut rng).unwrap();
            let e = &g.entries()[0];
            let i = hs.objectives.iter().position(|o| o.id == e.objective).unwrap();
            by_objective[i] += 1;
            by_target[e.target as usize] += 1;
        }
        let within_5_sigma = |count: usize, p: f64| {
            let mean = draws as f64 * p;
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            (count as f64 - mean).abs() <= 5.0 * sigma
        };
        assert!(by_objective.iter().all(|&c| within_5_sigma(c, 1.0 / 3.0)), "{by_objective:?}");
        assert!(by_target.iter().all(|&c| within_5_sigma(c, 1.0 / 5.0)), "{by_target:?}");
    }

    fn aligned_pair() -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
        (1usize..=6).prop_flat_map(|n| {
            (
                proptest::collection::vec(0i64..=5, n),
                proptest::collection::vec(0i64..=5, n),
            )
        })
    }

    proptest! {
        #[test]
        fn norm_ordering((g, r) in aligned_pair()) {
            let (goal, reward) = pair(&g, &r);
            let l2 = r_l2(&goal, &reward).unwrap();
            let me = r_max_error(&goal, &reward).unwrap();
            prop_assert!(l2 <= me + 1e-12);
            prop_assert!(me <= 0.0);
            if g.len() == 1 {
                prop_assert_eq!(l2, me);
            }
        }

        #[test]
        fn zero_equivalences((g, r) in aligned_pair()) {
            let (goal, reward) = pair(&g, &r);
            let c = r_completion(&goal, &reward).unwrap() == 1.0;
            let l2 = r_l2(&goal, &reward).unwrap() == 0.0;
            let me = r_max_error(&goal, &reward).unwrap() == 0.0;
            prop_assert_eq!(c, l2);
            prop_assert_eq!(l2, me);
        }

        #[test]
        fn permutation_equivariant((g, r) in aligned_pair(), seed in any::<u64>()) {
            let (goal, reward) = pair(&g, &r);
            let mut perm: Vec<usize> = (0..g.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let ids: Vec<String> = perm.iter().map(|i| format!("o{i}")).collect();
            let pg = GoalVector::new(ids.iter().cloned().zip(perm.iter().map(|&i| g[i]))).unwrap();
            let pr = RewardVector::new(ids.into_iter().zip(perm.iter().map(|&i| r[i])));
            for kind in RewardFunctionKind::ALL {
                prop_assert_eq!(evaluate(kind, &goal, &reward).unwrap(), evaluate(kind, &pg, &pr).unwrap());
            }
        }

        #[test]
        fn quantize_stays_in_range(raw in -100.0f64..100.0, lo in -5i64..5, width in 1i64..10) {
            let range = ScoreRange::new(lo, lo + width);
            let q = quantize_score(raw, range).unwrap();
            prop_assert!(range.contains(q));
        }
    }
}
