//! Prediction exports and the reports derived from them.
//!
//! A prediction export is line-delimited JSON, one object per scored epoch:
//!
//! | field            | type          | meaning                                         |
//! |------------------|---------------|-------------------------------------------------|
//! | `recording`      | string        | recording id                                    |
//! | `epoch`          | integer       | epoch index in the original hypnogram           |
//! | `mu`             | 5 numbers     | mean class probabilities, order W N1 N2 N3 R    |
//! | `var`            | 5 numbers     | class probability variances (0 without MC)      |
//! | `predicted`      | stage         | argmax of `mu`                                  |
//! | `flagged`        | bool          | selected for review                             |
//! | `criterion_score`| number        | ranking statistic of the predicted class        |
//! | `rank`           | integer       | position in the recording's review queue        |
//! | `label`          | stage or null | scored stage, when known                        |

use hypno_core::metrics::{
    confusion, ece, kept_rejected_report, summarize, CalibrationReport, KeptRejectedReport, MetricReport,
};
use hypno_core::uncertainty::{query_select, uncertainty_summary, ClassUncertainty, McPrediction, QueryConfig};
use hypno_core::{SleepStage, NUM_STAGES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub recording: String,
    pub epoch: usize,
    pub mu: [f64; NUM_STAGES],
    pub var: [f64; NUM_STAGES],
    pub predicted: SleepStage,
    pub flagged: bool,
    pub criterion_score: f64,
    pub rank: usize,
    pub label: Option<SleepStage>,
}

impl PredictionRecord {
    pub fn prediction(&self) -> McPrediction {
        McPrediction {
            recording_id: self.recording.clone(),
            epoch_index: self.epoch,
            mu: self.mu,
            var: self.var,
            predicted: self.predicted,
            label: self.label,
        }
    }

    /// Probability of the predicted class.
    pub fn confidence(&self) -> f64 {
        self.mu[self.predicted.index()]
    }
}

/// Attaches query flags, scores and ranks to predictions.
pub fn flag_predictions(preds: &[McPrediction], query: &QueryConfig) -> Result<Vec<PredictionRecord>> {
    let sel = query_select(preds, query)?;
    Ok(preds
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRecord {
            recording: p.recording_id.clone(),
            epoch: p.epoch_index,
            mu: p.mu,
            var: p.var,
            predicted: p.predicted,
            flagged: sel.flagged[i],
            criterion_score: sel.scores[i],
            rank: sel.ranks[i],
            label: p.label,
        })
        .collect())
}

/// Re-runs the query over an existing export.
pub fn requery(records: &[PredictionRecord], query: &QueryConfig) -> Result<Vec<PredictionRecord>> {
    let preds: Vec<McPrediction> = records.iter().map(PredictionRecord::prediction).collect();
    flag_predictions(&preds, query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: MetricReport,
    /// Flagged epochs are "rejected", the rest "kept".
    pub kept_rejected: KeptRejectedReport,
    pub flagged: usize,
    /// Per true stage: mean variance and mean probability (×100) of the
    /// predicted class.
    pub uncertainty: [ClassUncertainty; NUM_STAGES],
}

/// Metrics over every labelled record of an export.
pub fn evaluate_records(
    records: &[PredictionRecord],
    ece_bins: usize,
) -> Result<(EvaluationReport, CalibrationReport)> {
    let labelled: Vec<&PredictionRecord> = records.iter().filter(|r| r.label.is_some()).collect();
    if labelled.is_empty() {
        return Err(Error::Data("no labelled predictions to evaluate".into()));
    }
    let truth: Vec<SleepStage> = labelled.iter().filter_map(|r| r.label).collect();
    let predicted: Vec<SleepStage> = labelled.iter().map(|r| r.predicted).collect();
    let flagged: Vec<bool> = labelled.iter().map(|r| r.flagged).collect();
    let overall = summarize(&confusion(&truth, &predicted)?)?;
    let kept_rejected = kept_rejected_report(&truth, &predicted, &flagged)?;
    let preds: Vec<McPrediction> = labelled.iter().map(|r| r.prediction()).collect();
    let conf: Vec<f64> = labelled.iter().map(|r| r.confidence().clamp(0.0, 1.0)).collect();
    let correct: Vec<bool> = truth.iter().zip(&predicted).map(|(t, p)| t == p).collect();
    let calibration = ece(&conf, &correct, ece_bins)?;
    Ok((
        EvaluationReport {
            overall,
            kept_rejected,
            flagged: flagged.iter().filter(|f| **f).count(),
            uncertainty: uncertainty_summary(&preds),
        },
        calibration,
    ))
}

/// Row-percentage confusion matrix with per-class precision, recall and F1
/// (all in percent), one row per true stage.
pub fn report_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true".to_owned()];
    header.extend(SleepStage::ALL.iter().map(|s| format!("pred_{s}")));
    header.extend(["support", "precision", "recall", "f1"].map(str::to_owned));
    w.write_record(&header)?;
    let rows = report.confusion.row_percentages();
    for s in SleepStage::ALL {
        let c = &report.per_class[s.index()];
        let mut row = vec![s.as_str().to_owned()];
        row.extend(rows[s.index()].iter().map(|p| format!("{p:.1}")));
        row.push(c.support.to_string());
        row.extend([c.precision, c.recall, c.f1].map(|v| format!("{:.1}", 100.0 * v)));
        w.write_record(&row)?;
    }
    w.write_record([
        "overall".to_owned(),
        format!("acc={:.1}", 100.0 * report.accuracy),
        format!("mf1={:.1}", 100.0 * report.macro_f1),
        format!("wf1={:.1}", 100.0 * report.weighted_f1),
        format!("kappa={:.3}", report.kappa),
        String::new(),
        report.n.to_string(),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypno_core::uncertainty::QueryCriterion;

    fn record(epoch: usize, p: SleepStage, label: SleepStage, conf: f64) -> PredictionRecord {
        let mut mu = [(1.0 - conf) / 4.0; NUM_STAGES];
        mu[p.index()] = conf;
        PredictionRecord {
            recording: "r".into(),
            epoch,
            mu,
            var: [0.0; NUM_STAGES],
            predicted: p,
            flagged: false,
            criterion_score: 0.0,
            rank: 0,
            label: Some(label),
        }
    }

    #[test]
    fn perfect_fixture_is_perfect_and_calibrated() {
        let recs: Vec<_> = SleepStage::ALL
            .iter()
            .cycle()
            .take(20)
            .enumerate()
            .map(|(i, s)| record(i, *s, *s, 1.0))
            .collect();
        let (r, cal) = evaluate_records(&recs, 10).unwrap();
        assert_eq!(r.overall.accuracy, 1.0);
        assert_eq!(r.overall.kappa, 1.0);
        assert_eq!(cal.ece, 0.0);
        assert_eq!(r.kept_rejected.kept.as_ref().unwrap().n, 20);
        assert!(r.kept_rejected.rejected.is_none());
    }

    #[test]
    fn requery_ranks_by_mean() {
        let recs = vec![
            record(0, SleepStage::W, SleepStage::W, 0.9),
            record(1, SleepStage::N1, SleepStage::W, 0.4),
            record(2, SleepStage::N2, SleepStage::N2, 0.6),
        ];
        let q = QueryConfig {
            q_percent: 50.0,
            criterion: QueryCriterion::Mean,
        };
        let out = requery(&recs, &q).unwrap();
        assert_eq!(out.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(
            out.iter().map(|r| r.flagged).collect::<Vec<_>>(),
            vec![false, true, true]
        );
        assert_eq!(out[1].criterion_score, 0.4);
    }

    #[test]
    fn csv_has_one_row_per_stage() {
        let recs: Vec<_> = (0..10)
            .map(|i| record(i, SleepStage::N2, SleepStage::ALL[i % 5], 0.7))
            .collect();
        let (r, _) = evaluate_records(&recs, 10).unwrap();
        let text = report_csv(&r.overall).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[3].starts_with("N2,0.0,0.0,100.0,0.0,0.0,2,"));
    }
}
