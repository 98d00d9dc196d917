//! Distributes exactly N questions per depth across surviving paths: sampling
//! paths when there are more than N, splitting evenly (spread at most one)
//! when there are fewer.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PathId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("no surviving paths to allocate to")]
    EmptyPaths,
    #[error("question budget must be at least 1")]
    ZeroQuestions,
}

/// Question counts per surviving path for one depth. Paths without an entry
/// were not sampled and receive zero questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub depth: u32,
    pub assignments: BTreeMap<PathId, u32>,
    pub total: u32,
}

impl AllocationPlan {
    pub fn quota(&self, path: &PathId) -> u32 {
        self.assignments.get(path).copied().unwrap_or(0)
    }
}

/// Plans the question distribution for one depth.
///
/// With at least `n_total` paths, exactly `n_total` of them are chosen
/// uniformly without replacement and each receives one question. With fewer,
/// every path receives `n_total / paths` and the remainder goes to paths
/// chosen uniformly without replacement. The assigned counts always sum to
/// `n_total` and differ by at most one.
///
/// Paths are canonicalized (sorted, deduplicated) before any random draw, so
/// the plan depends only on the path set, the budget, and the rng state.
pub fn allocate_questions(
    depth: u32,
    n_total: u32,
    surviving_paths: &[PathId],
    rng: &mut ChaCha12Rng,
) -> Result<AllocationPlan, AllocationError> {
    if n_total == 0 {
        return Err(AllocationError::ZeroQuestions);
    }
    let mut paths: Vec<&PathId> = surviving_paths.iter().collect();
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(AllocationError::EmptyPaths);
    }

    let mut assignments = BTreeMap::new();
    let n = n_total as usize;
    if paths.len() >= n {
        for idx in sample(rng, paths.len(), n) {
            assignments.insert(paths[idx].clone(), 1);
        }
    } else {
        let base = n_total / paths.len() as u32;
        let remainder = n_total as usize % paths.len();
        for path in &paths {
            assignments.insert((*path).clone(), base);
        }
        if remainder > 0 {
            for idx in sample(rng, paths.len(), remainder) {
                *assignments.get_mut(paths[idx]).unwrap() += 1;
            }
        }
    }

    Ok(AllocationPlan {
        depth,
        assignments,
        total: n_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn paths(n: usize) -> Vec<PathId> {
        (0..n as u64).map(PathId::numbered).collect()
    }

    #[test]
    fn thirty_over_ten_gives_three_each() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let plan = allocate_questions(2, 30, &paths(10), &mut rng).unwrap();
        assert_eq!(plan.assignments.len(), 10);
        assert!(plan.assignments.values().all(|&c| c == 3));
    }

    #[test]
    fn single_path_takes_the_whole_budget() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let plan = allocate_questions(5, 30, &paths(1), &mut rng).unwrap();
        assert_eq!(plan.assignments.len(), 1);
        assert_eq!(plan.assignments.values().sum::<u32>(), 30);
    }

    #[test]
    fn surplus_paths_are_sampled_one_each() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let plan = allocate_questions(3, 30, &paths(45), &mut rng).unwrap();
        assert_eq!(plan.assignments.len(), 30);
        assert!(plan.assignments.values().all(|&c| c == 1));
    }

    #[test]
    fn remainder_spreads_by_at_most_one() {
        // 30 = 7*4 + 2: five paths get 4, two get 5.
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let plan = allocate_questions(4, 30, &paths(7), &mut rng).unwrap();
        let mut counts: Vec<u32> = plan.assignments.values().copied().collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![4, 4, 4, 4, 4, 5, 5]);
    }

    #[test]
    fn degenerate_inputs_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(
            allocate_questions(1, 30, &[], &mut rng),
            Err(AllocationError::EmptyPaths)
        );
        assert_eq!(
            allocate_questions(1, 0, &paths(3), &mut rng),
            Err(AllocationError::ZeroQuestions)
        );
    }

    #[test]
    fn identical_inputs_give_identical_plans() {
        let ps = paths(11);
        let mut shuffled = ps.clone();
        shuffled.reverse();
        let plan_a = allocate_questions(3, 20, &ps, &mut ChaCha12Rng::seed_from_u64(7)).unwrap();
        // Input order must not matter: the path list is canonicalized.
        let plan_b =
            allocate_questions(3, 20, &shuffled, &mut ChaCha12Rng::seed_from_u64(7)).unwrap();
        assert_eq!(plan_a, plan_b);
    }

    #[test]
    fn sampling_is_uniform_across_seeds() {
        // 30 of 45 paths sampled: each path should be picked with p = 2/3.
        let ps = paths(45);
        let trials = 2000u32;
        let mut hits = [0u32; 45];
        for seed in 0..trials {
            let mut rng = ChaCha12Rng::seed_from_u64(u64::from(seed) + 1000);
            let plan = allocate_questions(1, 30, &ps, &mut rng).unwrap();
            for (i, path) in ps.iter().enumerate() {
                if plan.assignments.contains_key(path) {
                    hits[i] += 1;
                }
            }
        }
        let p = 30.0 / 45.0;
        let sigma = (f64::from(trials) * p * (1.0 - p)).sqrt();
        let expected = f64::from(trials) * p;
        for (i, &h) in hits.iter().enumerate() {
            assert!(
                (f64::from(h) - expected).abs() <= 3.0 * sigma,
                "path {i} selected {h} times, expected {expected:.1} +/- {:.1}",
                3.0 * sigma
            );
        }
    }

    proptest! {
        #[test]
        fn conservation_and_fairness(
            n_total in 1u32..=120,
            path_count in 1usize..=150,
            seed in 0u64..=u64::MAX,
        ) {
            let ps = paths(path_count);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let plan = allocate_questions(1, n_total, &ps, &mut rng).unwrap();
            let sum: u32 = plan.assignments.values().sum();
            prop_assert_eq!(sum, n_total);
            prop_assert!(plan.assignments.values().all(|&c| c >= 1));
            let max = plan.assignments.values().max().copied().unwrap_or(0);
            let min = plan.assignments.values().min().copied().unwrap_or(0);
            prop_assert!(max - min <= 1);
            // Every assigned path must come from the surviving set.
            for path in plan.assignments.keys() {
                prop_assert!(ps.binary_search(path).is_ok());
            }
        }
    }
}
