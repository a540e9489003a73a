//! Subject-level train/test/val assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.64, test: 0.20, val: 0.16 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.test, self.val];
        if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(SvrError::invalid(format!("split ratios must be non-negative, got {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SvrError::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Floors `ratio·n` and hands the remainder out one by one in order of
    /// decreasing fractional part (ties go to train, then test, then val).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.test, self.val].map(|r| r * n as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub val: Vec<String>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Shuffles `ids` with `seed` and assigns consecutive runs to train, test
/// and val.
pub fn split_subjects(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitManifest> {
    ratios.validate()?;
    if ids.is_empty() {
        return Err(SvrError::invalid("no subject ids to split"));
    }
    let mut unique = ids.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != ids.len() {
        return Err(SvrError::invalid("duplicate subject ids"));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = ratios.counts(ids.len());
    let val = shuffled.split_off(a + b);
    let test = shuffled.split_off(a);
    if test.is_empty() || val.is_empty() {
        log::warn!("{} subjects leave the test or validation split empty", ids.len());
    }
    Ok(SplitManifest { train: shuffled, test, val, ratios, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sub-{i:04}")).collect()
    }

    #[test]
    fn cohort_of_138() {
        let m = split_subjects(&ids(138), SplitRatios::default(), 0).unwrap();
        assert_eq!((m.train.len(), m.test.len(), m.val.len()), (88, 28, 22));
        let all: HashSet<_> = m.train.iter().chain(&m.test).chain(&m.val).collect();
        assert_eq!(all.len(), 138);
    }

    #[test]
    fn single_subject_goes_to_train() {
        let m = split_subjects(&ids(1), SplitRatios::default(), 3).unwrap();
        assert_eq!((m.train.len(), m.test.len(), m.val.len()), (1, 0, 0));
    }

    #[test]
    fn deterministic_by_seed() {
        let a = split_subjects(&ids(30), SplitRatios::default(), 9).unwrap();
        assert_eq!(a, split_subjects(&ids(30), SplitRatios::default(), 9).unwrap());
        assert_ne!(a.train, split_subjects(&ids(30), SplitRatios::default(), 10).unwrap().train);
    }

    #[test]
    fn bad_inputs() {
        let r = SplitRatios { train: 0.5, test: 0.2, val: 0.2 };
        assert!(split_subjects(&ids(10), r, 0).is_err());
        assert!(split_subjects(&[], SplitRatios::default(), 0).is_err());
        assert!(split_subjects(&["a".into(), "a".into()], SplitRatios::default(), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 1usize..300, seed in 0u64..1000) {
            let m = split_subjects(&ids(n), SplitRatios::default(), seed).unwrap();
            let counts = SplitRatios::default().counts(n);
            proptest::prop_assert_eq!([m.train.len(), m.test.len(), m.val.len()], counts);
            let mut all: Vec<_> = m.train.iter().chain(&m.test).chain(&m.val).cloned().collect();
            all.sort();
            proptest::prop_assert_eq!(all, ids(n));
            for (c, r) in counts.iter().zip([0.64, 0.2, 0.16]) {
                proptest::prop_assert!((*c as f64 - r * n as f64).abs() < 1.0);
            }
        }
    }
}
