//! Monte Carlo dropout predictions and the per-recording review query.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceWindow;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::nn::Real;
use crate::stage::{SleepStage, NUM_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub n_samples: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 30,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("MC sample count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(alloc::format!(
                "MC dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub recording_id: String,
    pub epoch_index: usize,
    pub mu: [f64; NUM_STAGES],
    pub var: [f64; NUM_STAGES],
    pub predicted: SleepStage,
    /// Ground truth when known.
    pub label: Option<SleepStage>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64; NUM_STAGES]) -> SleepStage {
    let mut best = 0;
    for k in 1..NUM_STAGES {
        if values[k] > values[best] {
            best = k;
        }
    }
    SleepStage::ALL[best]
}

/// Per-class mean and population variance (divide by N) of sampled
/// probability vectors.
pub fn mean_and_variance(samples: &[[f64; NUM_STAGES]]) -> ([f64; NUM_STAGES], [f64; NUM_STAGES]) {
    let n = samples.len() as f64;
    let mut mu = [0.0; NUM_STAGES];
    for s in samples {
        for k in 0..NUM_STAGES {
            mu[k] += s[k];
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; NUM_STAGES];
    for s in samples {
        for k in 0..NUM_STAGES {
            let d = s[k] - mu[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mu, var)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random stream for one window, fixed by the base seed, the recording and
/// the epoch so windows can be scored in any order.
pub fn window_rng(base_seed: u64, recording_id: &str, epoch_index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(recording_id.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(epoch_index as u64).to_le_bytes());
    key[24..].copy_from_slice(b"mcdrop\0\0");
    ChaCha8Rng::from_seed(key)
}

/// `N` probability vectors from stochastic forward passes over one window.
/// The `N` copies run as a single batch.
pub fn mc_samples<F: Real>(
    model: &Model<F>,
    samples: &[f32],
    cfg: &McConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; NUM_STAGES]>> {
    cfg.validate()?;
    let input = model.input_tensor(core::iter::repeat_n(samples, cfg.n_samples))?;
    let trace = model.forward_with_rate(&input, Mode::Mc, cfg.dropout, rng)?;
    Ok(trace
        .probs
        .data()
        .chunks_exact(NUM_STAGES)
        .map(|row| core::array::from_fn(|k| row[k].as_f64()))
        .collect())
}

pub fn mc_predict<F: Real>(model: &Model<F>, window: &SequenceWindow, cfg: &McConfig) -> Result<McPrediction> {
    let mut rng = window_rng(cfg.seed, &window.recording_id, window.epoch_index);
    let samples = mc_samples(model, &window.samples, cfg, &mut rng)?;
    let (mu, var) = mean_and_variance(&samples);
    Ok(McPrediction {
        recording_id: window.recording_id.clone(),
        epoch_index: window.epoch_index,
        mu,
        var,
        predicted: argmax(&mu),
        label: Some(window.center_label),
    })
}

/// Single inference-mode pass per window: `mu` is the softmax output and
/// `var` is zero.
pub fn deterministic_predict<F: Real>(model: &Model<F>, windows: &[SequenceWindow]) -> Result<Vec<McPrediction>> {
    let mut out = Vec::with_capacity(windows.len());
    // inference mode never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in windows.chunks(64) {
        let input = model.input_tensor(chunk.iter().map(|w| &w.samples[..]))?;
        let trace = model.forward(&input, Mode::Infer, &mut rng)?;
        for (w, row) in chunk.iter().zip(trace.probs.data().chunks_exact(NUM_STAGES)) {
            let mu: [f64; NUM_STAGES] = core::array::from_fn(|k| row[k].as_f64());
            out.push(McPrediction {
                recording_id: w.recording_id.clone(),
                epoch_index: w.epoch_index,
                mu,
                var: [0.0; NUM_STAGES],
                predicted: argmax(&mu),
                label: Some(w.center_label),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryCriterion {
    /// Highest variance of the predicted class first.
    Variance,
    /// Lowest mean of the predicted class first.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub q_percent: f64,
    pub criterion: QueryCriterion,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            q_percent: 5.0,
            criterion: QueryCriterion::Variance,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.q_percent) {
            return Err(Error::InvalidConfig(alloc::format!(
                "q {} outside [0, 100]",
                self.q_percent
            )));
        }
        Ok(())
    }
}

impl QueryCriterion {
    /// Statistic of the predicted class used for ranking.
    pub fn score(self, p: &McPrediction) -> f64 {
        let k = p.predicted.index();
        match self {
            QueryCriterion::Variance => p.var[k],
            QueryCriterion::Mean => p.mu[k],
        }
    }
}

/// `⌈q/100 · epochs⌉`, treating products within 1e-9 of an integer as exact.
pub fn flag_count(q_percent: f64, epochs: usize) -> usize {
    let x = q_percent * epochs as f64 / 100.0;
    let r = num_traits::Float::round(x);
    let n = if (x - r).abs() < 1e-9 {
        r
    } else {
        num_traits::Float::ceil(x)
    };
    (n as usize).min(epochs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySelection {
    /// Aligned with the input predictions.
    pub flagged: Vec<bool>,
    /// Ranking statistic per prediction.
    pub scores: Vec<f64>,
    /// Rank within its recording (0 = most uncertain).
    pub ranks: Vec<usize>,
}

impl QuerySelection {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }
}

/// Flags the `⌈q/100 · E⌉` most uncertain epochs of each recording.
pub fn query_select(preds: &[McPrediction], cfg: &QueryConfig) -> Result<QuerySelection> {
    cfg.validate()?;
    let scores: Vec<f64> = preds.iter().map(|p| cfg.criterion.score(p)).collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        groups.entry(p.recording_id.as_str()).or_default().push(i);
    }
    let mut flagged = alloc::vec![false; preds.len()];
    let mut ranks = alloc::vec![0; preds.len()];
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            let by_score = match cfg.criterion {
                QueryCriterion::Variance => scores[b].total_cmp(&scores[a]),
                QueryCriterion::Mean => scores[a].total_cmp(&scores[b]),
            };
            by_score.then(preds[a].epoch_index.cmp(&preds[b].epoch_index))
        });
        let n = flag_count(cfg.q_percent, idx.len());
        for (rank, &i) in idx.iter().enumerate() {
            ranks[i] = rank;
            flagged[i] = rank < n;
        }
    }
    Ok(QuerySelection { flagged, scores, ranks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassUncertainty {
    pub n: usize,
    /// Mean variance of the predicted class.
    pub variance: f64,
    /// Mean of the predicted-class probability, in percent.
    pub mean_percent: f64,
}

/// Predicted-class σ² and μ averaged by true stage. Predictions without a
/// label are skipped.
pub fn uncertainty_summary(preds: &[McPrediction]) -> [ClassUncertainty; NUM_STAGES] {
    let mut out = [ClassUncertainty {
        n: 0,
        variance: 0.0,
        mean_percent: 0.0,
    }; NUM_STAGES];
    for p in preds {
        let Some(label) = p.label else { continue };
        let c = &mut out[label.index()];
        let k = p.predicted.index();
        c.n += 1;
        c.variance += p.var[k];
        c.mean_percent += p.mu[k];
    }
    for c in &mut out {
        if c.n > 0 {
            c.variance /= c.n as f64;
            c.mean_percent *= 100.0 / c.n as f64;
        }
    }
    out
}
