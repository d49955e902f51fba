//! Confusion matrices, agreement metrics and expected calibration error.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::{SleepStage, NUM_STAGES};

/// Rows are true stages, columns predicted stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[SleepStage], predicted: &[SleepStage]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: predicted.len(),
            });
        }
        let mut cm = Self::default();
        for (t, p) in truth.iter().zip(predicted) {
            cm.add(*t, *p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: SleepStage, predicted: SleepStage) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized percentages; rows with no support are all zero.
    pub fn row_percentages(&self) -> [[f64; NUM_STAGES]; NUM_STAGES] {
        let mut out = [[0.0; NUM_STAGES]; NUM_STAGES];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let n: u64 = counts.iter().sum();
            if n > 0 {
                for (o, &c) in row.iter_mut().zip(counts) {
                    *o = 100.0 * c as f64 / n as f64;
                }
            }
        }
        out
    }
}

/// Confusion matrix from labels.
pub fn confusion(truth: &[SleepStage], predicted: &[SleepStage]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(truth, predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
    pub per_class: [ClassMetrics; NUM_STAGES],
    pub confusion: ConfusionMatrix,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Accuracy, per-class precision/recall/F1 (zero where a denominator is
/// zero), macro and support-weighted F1, and Cohen's kappa.
///
/// Kappa is defined as 0 when chance agreement is 1 (every epoch in one
/// class on both axes).
pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let total = n as f64;
    let mut row = [0.0; NUM_STAGES];
    let mut col = [0.0; NUM_STAGES];
    let mut diag = 0.0;
    for (i, counts) in cm.counts.iter().enumerate() {
        for (j, &c) in counts.iter().enumerate() {
            let c = c as f64;
            row[i] += c;
            col[j] += c;
            if i == j {
                diag += c;
            }
        }
    }
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: 0,
    }; NUM_STAGES];
    for (k, m) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[k][k] as f64;
        let precision = ratio(tp, col[k]);
        let recall = ratio(tp, row[k]);
        *m = ClassMetrics {
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
            support: row[k] as u64,
        };
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_STAGES as f64;
    let weighted_f1 = per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total;
    let p_o = diag / total;
    let p_e = row.iter().zip(&col).map(|(r, c)| r * c).sum::<f64>() / (total * total);
    let kappa = if p_e == 1.0 { 0.0 } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(MetricReport {
        n,
        accuracy: p_o,
        macro_f1,
        weighted_f1,
        kappa,
        per_class,
        confusion: *cm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    /// Exclusive lower edge.
    pub lower: f64,
    /// Inclusive upper edge.
    pub upper: f64,
    pub n: u64,
    /// Fraction correct; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence; 0 for an empty bin.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_bins: usize,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub n: u64,
    pub accuracy: f64,
    /// Mean of all confidences.
    pub mean_confidence: f64,
}

pub const DEFAULT_ECE_BINS: usize = 10;

/// 0-based index of the bin `((m-1)/M, m/M]` holding `c`. A confidence of
/// exactly 0 falls in the first bin.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    let m = n_bins as f64;
    let upper = |i: usize| (i + 1) as f64 / m;
    let mut i = (num_traits::Float::ceil(c * m) as isize - 1).clamp(0, n_bins as isize - 1) as usize;
    while i > 0 && c <= upper(i - 1) {
        i -= 1;
    }
    while i + 1 < n_bins && c > upper(i) {
        i += 1;
    }
    i
}

/// Reliability bins and ECE `Σ |B_m|/n · |acc(B_m) − conf(B_m)|`.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<CalibrationReport> {
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidArgument(alloc::format!("confidence {c} outside [0, 1]")));
    }
    let mut n = alloc::vec![0u64; n_bins];
    let mut hits = alloc::vec![0u64; n_bins];
    let mut conf = alloc::vec![0.0f64; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, n_bins);
        n[b] += 1;
        hits[b] += u64::from(ok);
        conf[b] += c;
    }
    let total = confidences.len() as u64;
    let mut ece = 0.0;
    let bins: Vec<CalibrationBin> = (0..n_bins)
        .map(|b| {
            let acc = ratio(hits[b] as f64, n[b] as f64);
            let cf = ratio(conf[b], n[b] as f64);
            if n[b] > 0 {
                ece += n[b] as f64 / total as f64 * (acc - cf).abs();
            }
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                n: n[b],
                accuracy: acc,
                confidence: cf,
            }
        })
        .collect();
    Ok(CalibrationReport {
        n_bins,
        bins,
        ece,
        n: total,
        accuracy: ratio(hits.iter().sum::<u64>() as f64, total as f64),
        mean_confidence: ratio(confidences.iter().sum(), total as f64),
    })
}

/// Metrics computed separately over unflagged (kept) and flagged
/// (rejected) epochs. A side with no epochs has no report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptRejectedReport {
    pub kept: Option<MetricReport>,
    pub rejected: Option<MetricReport>,
}

pub fn kept_rejected_report(
    truth: &[SleepStage],
    predicted: &[SleepStage],
    flagged: &[bool],
) -> Result<KeptRejectedReport> {
    if truth.len() != predicted.len() || truth.len() != flagged.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len().min(flagged.len()),
        });
    }
    let mut kept = ConfusionMatrix::default();
    let mut rejected = ConfusionMatrix::default();
    for ((t, p), f) in truth.iter().zip(predicted).zip(flagged) {
        if *f { &mut rejected } else { &mut kept }.add(*t, *p);
    }
    let report = |cm: &ConfusionMatrix| (cm.total() > 0).then(|| summarize(cm)).transpose();
    Ok(KeptRejectedReport {
        kept: report(&kept)?,
        rejected: report(&rejected)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SleepStage::*;

    #[test]
    fn hand_kappa() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 40;
        cm.counts[0][1] = 10;
        cm.counts[1][0] = 20;
        cm.counts[1][1] = 30;
        let r = summarize(&cm).unwrap();
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        assert!((r.kappa - 0.4).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let t = [W, N1, N2, N3, R, R];
        let cm = confusion(&t, &t).unwrap();
        for i in 0..NUM_STAGES {
            for j in 0..NUM_STAGES {
                assert_eq!(cm.counts[i][j] == 0, i != j);
            }
        }
        let r = summarize(&cm).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn length_and_empty_errors() {
        assert!(matches!(confusion(&[W], &[]), Err(Error::LengthMismatch { .. })));
        assert_eq!(summarize(&ConfusionMatrix::default()), Err(Error::EmptyMatrix));
    }

    #[test]
    fn single_bin_ece() {
        let r = ece(&[0.8; 4], &[true, true, true, false], 10).unwrap();
        assert!((r.ece - 0.05).abs() < 1e-12);
        assert_eq!(r.bins.iter().filter(|b| b.n > 0).count(), 1);
        assert_eq!(r.bins[7].n, 4);
    }

    #[test]
    fn bin_edges_belong_to_the_lower_bin() {
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000000000000004, 10), 3);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        for m in 1..=20 {
            for i in 1..=m {
                assert_eq!(bin_index(i as f64 / m as f64, m), i - 1);
            }
        }
    }

    #[test]
    fn calibrated_fixture_has_zero_ece() {
        // 10 at 0.6 with 6 correct, 4 at 1.0 all correct
        let mut c = alloc::vec![0.6; 10];
        let mut ok: Vec<bool> = (0..10).map(|i| i < 6).collect();
        c.extend([1.0; 4]);
        ok.extend([true; 4]);
        assert!(ece(&c, &ok, 10).unwrap().ece.abs() < 1e-15);
    }

    #[test]
    fn kept_rejected_split() {
        let t = [W, N1, N2, N3];
        let p = [W, N2, N2, N3];
        let r = kept_rejected_report(&t, &p, &[false, true, false, false]).unwrap();
        assert_eq!(r.kept.unwrap().accuracy, 1.0);
        assert_eq!(r.rejected.unwrap().accuracy, 0.0);
        let none = kept_rejected_report(&t, &p, &[false; 4]).unwrap();
        assert_eq!(none.kept.unwrap(), summarize(&confusion(&t, &p).unwrap()).unwrap());
        assert!(none.rejected.is_none());
    }
}
