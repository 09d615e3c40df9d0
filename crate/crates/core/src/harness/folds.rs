use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Gender;
use crate::error::{Error, Result};

/// Assignment of split units (speakers, normally) to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

/// Deals speakers to `k` folds, gender by gender.
///
/// Speakers are sorted by id, shuffled within each gender by a generator
/// seeded with `seed`, and dealt round-robin. The dealing position carries
/// over from one gender to the next, so fold sizes differ by at most one and
/// so do the per-fold counts of each gender.
pub fn build_folds(speakers: &[(String, Gender)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count must be at least 2, got {k}")));
    }
    let mut unique: BTreeMap<&str, Gender> = BTreeMap::new();
    for (id, g) in speakers {
        if let Some(prev) = unique.insert(id, *g) {
            if prev != *g {
                return Err(Error::InvalidParameter(format!(
                    "speaker {id} listed with both genders"
                )));
            }
        }
    }
    if unique.len() < k {
        return Err(Error::TooFewSpeakers {
            needed: k,
            got: unique.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut next = 0;
    for gender in [Gender::Male, Gender::Female] {
        let mut group: Vec<&str> = unique
            .iter()
            .filter(|(_, g)| **g == gender)
            .map(|(id, _)| *id)
            .collect();
        group.shuffle(&mut rng);
        for id in group {
            assignment.insert(id.to_string(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, seed, assignment })
}

impl FoldPlan {
    pub fn fold_of(&self, unit: &str) -> Option<usize> {
        self.assignment.get(unit).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Per-fold count of units of `gender`, looked up through `gender_of`.
    pub fn gender_counts(&self, gender: Gender, gender_of: impl Fn(&str) -> Option<Gender>) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for (id, &f) in &self.assignment {
            if gender_of(id) == Some(gender) {
                counts[f] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cohort(males: usize, females: usize) -> Vec<(String, Gender)> {
        (0..males)
            .map(|i| (format!("m{i:03}"), Gender::Male))
            .chain((0..females).map(|i| (format!("f{i:03}"), Gender::Female)))
            .collect()
    }

    #[test]
    fn cohort_of_74_fold_sizes() {
        let speakers = cohort(36, 38);
        let plan = build_folds(&speakers, 5, 1).unwrap();
        let mut sizes = plan.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![14, 15, 15, 15, 15]);
        let lookup: BTreeMap<_, _> = speakers.iter().cloned().collect();
        let gender_of = |id: &str| lookup.get(id).copied();
        for g in [Gender::Male, Gender::Female] {
            for c in plan.gender_counts(g, gender_of) {
                assert!((7..=8).contains(&c));
            }
        }
    }

    #[test]
    fn one_speaker_per_fold() {
        let plan = build_folds(&cohort(2, 3), 5, 9).unwrap();
        assert_eq!(plan.sizes(), vec![1; 5]);
    }

    #[test]
    fn too_few_speakers() {
        assert!(matches!(
            build_folds(&cohort(2, 2), 5, 0),
            Err(Error::TooFewSpeakers { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn input_order_does_not_matter() {
        let speakers = cohort(10, 13);
        let mut reversed = speakers.clone();
        reversed.reverse();
        assert_eq!(build_folds(&speakers, 4, 3).unwrap(), build_folds(&reversed, 4, 3).unwrap());
    }

    proptest! {
        #[test]
        fn plan_invariants(males in 0usize..40, females in 0usize..40, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(males + females >= k);
            let speakers = cohort(males, females);
            let plan = build_folds(&speakers, k, seed).unwrap();
            prop_assert_eq!(plan.assignment.len(), males + females);
            let sizes = plan.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let lookup: BTreeMap<_, _> = speakers.iter().cloned().collect();
            for (g, total) in [(Gender::Male, males), (Gender::Female, females)] {
                let ideal = total as f64 / k as f64;
                for c in plan.gender_counts(g, |id| lookup.get(id).copied()) {
                    prop_assert!((c as f64 - ideal).abs() < 1.0 + 1e-12);
                }
            }
        }
    }
}
