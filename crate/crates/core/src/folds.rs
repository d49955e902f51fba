//! Subject-wise k-fold cross-validation plans.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
    /// Seed used to generate the plan; `None` for externally supplied plans.
    pub seed: Option<u64>,
}

impl FoldPlan {
    /// Wraps externally supplied folds after checking the plan invariants.
    pub fn from_folds(folds: Vec<Fold>) -> Result<Self> {
        let plan = Self {
            k: folds.len(),
            folds,
            seed: None,
        };
        let subjects: Vec<String> = plan
            .folds
            .iter()
            .flat_map(|f| f.train.iter().chain(&f.validation).chain(&f.test).cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        plan.validate(&subjects)?;
        Ok(plan)
    }

    /// Test sets are pairwise disjoint and cover `subjects`; within a fold no
    /// subject has two roles; every fold trains on someone.
    pub fn validate(&self, subjects: &[String]) -> Result<()> {
        let all: BTreeSet<&String> = subjects.iter().collect();
        let mut tested = BTreeSet::new();
        for f in &self.folds {
            let mut seen = BTreeSet::new();
            for s in f.train.iter().chain(&f.validation).chain(&f.test) {
                if !all.contains(s) {
                    return Err(Error::InvalidArgument(format!("fold {}: unknown subject {s}", f.id)));
                }
                if !seen.insert(s) {
                    return Err(Error::InvalidArgument(format!(
                        "fold {}: subject {s} has more than one role",
                        f.id
                    )));
                }
            }
            if f.train.is_empty() || f.test.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "fold {}: empty train or test set",
                    f.id
                )));
            }
            for s in &f.test {
                if !tested.insert(s) {
                    return Err(Error::InvalidArgument(format!("subject {s} tested in two folds")));
                }
            }
        }
        if tested.len() != all.len() {
            return Err(Error::InvalidArgument(format!(
                "{} of {} subjects appear in a test set",
                tested.len(),
                all.len()
            )));
        }
        Ok(())
    }
}

/// Shuffles the subjects with `seed`, cuts them into `k` contiguous test
/// groups (sizes differ by at most one) and, for each fold, takes the
/// `n_validation` subjects that follow the test group (wrapping around) as
/// validation. Everyone else trains.
pub fn split_subjects(subjects: &[String], k: usize, n_validation: usize, seed: u64) -> Result<FoldPlan> {
    let n = subjects.len();
    let unique: BTreeSet<&String> = subjects.iter().collect();
    if unique.len() != n {
        return Err(Error::InvalidArgument("duplicate subject ids".into()));
    }
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, subjects: n });
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let largest_test = n.div_ceil(k);
    if largest_test + n_validation >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} subjects leave no one to train with {largest_test} test and {n_validation} validation subjects"
        )));
    }
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for id in 0..k {
        let size = n / k + usize::from(id < n % k);
        let test: Vec<String> = order[start..start + size].to_vec();
        let validation: Vec<String> = (0..n_validation)
            .map(|j| order[(start + size + j) % n].clone())
            .collect();
        let train: Vec<String> = order
            .iter()
            .filter(|s| !test.contains(s) && !validation.contains(s))
            .cloned()
            .collect();
        folds.push(Fold {
            id,
            train,
            validation,
            test,
        });
        start += size;
    }
    Ok(FoldPlan {
        k,
        folds,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:02}")).collect()
    }

    #[test]
    fn every_subject_is_tested_once() {
        let s = subjects(20);
        let plan = split_subjects(&s, 20, 4, 1).unwrap();
        assert_eq!(plan.folds.len(), 20);
        plan.validate(&s).unwrap();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 1);
            assert_eq!(f.validation.len(), 4);
            assert_eq!(f.train.len(), 15);
        }
    }

    #[test]
    fn degenerate_k_is_rejected() {
        let s = subjects(20);
        assert_eq!(split_subjects(&s, 1, 4, 1), Err(Error::InvalidK { k: 1, subjects: 20 }));
        assert!(matches!(split_subjects(&s, 21, 0, 1), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let s = subjects(78);
        assert_eq!(
            split_subjects(&s, 10, 7, 42).unwrap(),
            split_subjects(&s, 10, 7, 42).unwrap()
        );
        assert_ne!(
            split_subjects(&s, 10, 7, 42).unwrap(),
            split_subjects(&s, 10, 7, 43).unwrap()
        );
    }

    #[test]
    fn supplied_folds_are_checked() {
        let f = |id, train: &[&str], val: &[&str], test: &[&str]| Fold {
            id,
            train: train.iter().map(|s| String::from(*s)).collect(),
            validation: val.iter().map(|s| String::from(*s)).collect(),
            test: test.iter().map(|s| String::from(*s)).collect(),
        };
        assert!(FoldPlan::from_folds(vec![f(0, &["a"], &[], &["b"]), f(1, &["b"], &[], &["a"])]).is_ok());
        // b tested twice, a never
        assert!(FoldPlan::from_folds(vec![f(0, &["a"], &[], &["b"]), f(1, &["a"], &[], &["b"])]).is_err());
        // a in two roles
        assert!(FoldPlan::from_folds(vec![f(0, &["a"], &["a"], &["b"]), f(1, &["b"], &[], &["a"])]).is_err());
    }
}
