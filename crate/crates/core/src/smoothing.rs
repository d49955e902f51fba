//! Training targets: hard one-hot, uniform label smoothing, and smoothing
//! with the stage-transition prior `P(stage(t) | stage(t-1), stage(t+1))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::{SleepStage, NUM_STAGES};

/// Probability vector over the five stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub probs: [f64; NUM_STAGES],
}

impl TargetDistribution {
    pub fn one_hot(label: SleepStage) -> Self {
        let mut probs = [0.0; NUM_STAGES];
        probs[label.index()] = 1.0;
        Self { probs }
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|&p| p >= 0.0) && (self.sum() - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingMode {
    None,
    Uniform,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub mode: SmoothingMode,
    pub alpha: f64,
}

impl SmoothingConfig {
    pub const DEFAULT_UNIFORM_ALPHA: f64 = 0.1;
    pub const DEFAULT_CONDITIONAL_ALPHA: f64 = 0.2;

    pub fn none() -> Self {
        Self {
            mode: SmoothingMode::None,
            alpha: 0.0,
        }
    }

    pub fn uniform() -> Self {
        Self {
            mode: SmoothingMode::Uniform,
            alpha: Self::DEFAULT_UNIFORM_ALPHA,
        }
    }

    pub fn conditional() -> Self {
        Self {
            mode: SmoothingMode::Conditional,
            alpha: Self::DEFAULT_CONDITIONAL_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(Error::InvalidConfig(alloc::format!(
                "smoothing alpha {} outside [0, 0.5]",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self::uniform()
    }
}

fn check_alpha(alpha: f64) {
    debug_assert!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
}

/// `y·(1−α) + α/K`.
pub fn smooth_uniform(label: SleepStage, alpha: f64) -> TargetDistribution {
    check_alpha(alpha);
    let k = NUM_STAGES as f64;
    let mut probs = [alpha / k; NUM_STAGES];
    probs[label.index()] = (1.0 - alpha) + alpha / k;
    TargetDistribution { probs }
}

/// `y·(1−α) + α·M[prev, ·, next]`.
pub fn smooth_conditional(
    label: SleepStage,
    prev: SleepStage,
    next: SleepStage,
    alpha: f64,
    matrix: &ConditionalMatrix,
) -> TargetDistribution {
    check_alpha(alpha);
    let column = matrix.column(prev, next);
    let mut probs = [0.0; NUM_STAGES];
    for (k, p) in probs.iter_mut().enumerate() {
        let y = if k == label.index() { 1.0 } else { 0.0 };
        *p = y * (1.0 - alpha) + alpha * column[k];
    }
    TargetDistribution { probs }
}

/// Transition prior `P(stage(t) | stage(t-1), stage(t+1))` with the raw
/// triple counts it was estimated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatrix {
    /// `probs[prev][t][next]`.
    pub probs: [[[f64; NUM_STAGES]; NUM_STAGES]; NUM_STAGES],
    /// `triples[prev][t][next]`.
    pub triples: [[[u64; NUM_STAGES]; NUM_STAGES]; NUM_STAGES],
    /// `counts[prev][next]`: number of triples in each context. Zero marks
    /// a context that fell back to the uniform distribution.
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConditionalMatrix {
    /// Probability vector over the central stage for context `(prev, next)`.
    pub fn column(&self, prev: SleepStage, next: SleepStage) -> [f64; NUM_STAGES] {
        let mut col = [0.0; NUM_STAGES];
        for (t, c) in col.iter_mut().enumerate() {
            *c = self.probs[prev.index()][t][next.index()];
        }
        col
    }

    pub fn from_triples(triples: [[[u64; NUM_STAGES]; NUM_STAGES]; NUM_STAGES]) -> Self {
        let mut counts = [[0u64; NUM_STAGES]; NUM_STAGES];
        let mut probs = [[[0.0; NUM_STAGES]; NUM_STAGES]; NUM_STAGES];
        for p in 0..NUM_STAGES {
            for n in 0..NUM_STAGES {
                let total: u64 = (0..NUM_STAGES).map(|t| triples[p][t][n]).sum();
                counts[p][n] = total;
                for t in 0..NUM_STAGES {
                    probs[p][t][n] = if total == 0 {
                        1.0 / NUM_STAGES as f64
                    } else {
                        triples[p][t][n] as f64 / total as f64
                    };
                }
            }
        }
        Self { probs, triples, counts }
    }
}

/// Counts every run of three consecutive labelled epochs in each sequence.
/// Triples that include an unlabelled (`None`) epoch are skipped. Contexts
/// never observed get the uniform distribution `1/K`.
pub fn build_conditional_matrix<'a, I>(sequences: I) -> ConditionalMatrix
where
    I: IntoIterator<Item = &'a [Option<SleepStage>]>,
{
    let mut triples = [[[0u64; NUM_STAGES]; NUM_STAGES]; NUM_STAGES];
    for seq in sequences {
        for w in seq.windows(3) {
            if let [Some(p), Some(t), Some(n)] = *w {
                triples[p.index()][t.index()][n.index()] += 1;
            }
        }
    }
    ConditionalMatrix::from_triples(triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use SleepStage::*;

    #[test]
    fn uniform_smoothing_values() {
        let t = smooth_uniform(N2, 0.1);
        let expected = [0.02, 0.02, 0.92, 0.02, 0.02];
        for (a, b) in t.probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(smooth_uniform(R, 0.0), TargetDistribution::one_hot(R));
        assert!(smooth_uniform(W, 1.0).probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_context_hypnogram() {
        let seq: Vec<Option<SleepStage>> = [W, W, W, W].iter().map(|&s| Some(s)).collect();
        let m = build_conditional_matrix([seq.as_slice()]);
        assert_eq!(m.probs[0][0][0], 1.0);
        assert_eq!(m.counts[0][0], 2);
        for t in 1..NUM_STAGES {
            assert_eq!(m.probs[0][t][0], 0.0);
        }
        // unobserved contexts fall back to uniform
        assert_eq!(m.counts[1][2], 0);
        assert!(m.column(N1, N2).iter().all(|&p| p == 0.2));
    }

    #[test]
    fn conditional_with_zero_alpha_is_one_hot() {
        let m = build_conditional_matrix([[Some(W), Some(N1), Some(N2)].as_slice()]);
        assert_eq!(smooth_conditional(N3, W, N2, 0.0, &m), TargetDistribution::one_hot(N3));
    }

    #[test]
    fn unlabelled_epochs_break_triples() {
        let seq = [Some(W), None, Some(W), Some(W), Some(W)];
        let m = build_conditional_matrix([seq.as_slice()]);
        assert_eq!(m.counts[0][0], 1);
    }

    #[test]
    fn alpha_range_is_checked() {
        assert!(SmoothingConfig {
            mode: SmoothingMode::Uniform,
            alpha: 0.6
        }
        .validate()
        .is_err());
        assert!(SmoothingConfig::conditional().validate().is_ok());
    }
}
