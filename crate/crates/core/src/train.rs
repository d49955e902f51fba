//! Mini-batch training with early stopping, and subject-wise cross-validation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{balance_classes, SequenceWindow};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::metrics::{summarize, ConfusionMatrix, MetricReport};
use crate::model::{ArchitectureConfig, Model};
use crate::nn::{adam_step, softmax_xent_batch, OptimizerConfig, Real};
use crate::smoothing::{
    build_conditional_matrix, smooth_conditional, smooth_uniform, ConditionalMatrix, SmoothingConfig, SmoothingMode,
    TargetDistribution,
};
use crate::stage::{SleepStage, NUM_STAGES};
use crate::uncertainty::{deterministic_predict, mc_predict, McConfig, McPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    MacroF1,
    WeightedF1,
}

impl ValidationMetric {
    pub fn of(self, r: &MetricReport) -> f64 {
        match self {
            ValidationMetric::MacroF1 => r.macro_f1,
            ValidationMetric::WeightedF1 => r.weighted_f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub balance: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 1,
            shuffle: 2,
            dropout: 3,
            balance: 4,
        }
    }
}

impl Seeds {
    /// Every seed moved by the same amount; keeps folds independent.
    pub fn offset(self, by: u64) -> Self {
        Self {
            init: self.init.wrapping_add(by),
            shuffle: self.shuffle.wrapping_add(by),
            dropout: self.dropout.wrapping_add(by),
            balance: self.balance.wrapping_add(by),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Passes over the balanced training set.
    pub max_iterations: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    pub smoothing: SmoothingConfig,
    pub seeds: Seeds,
    pub metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            patience: 50,
            optimizer: OptimizerConfig::default(),
            smoothing: SmoothingConfig::default(),
            seeds: Seeds::default(),
            metric: ValidationMetric::MacroF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.smoothing.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.patience > self.max_iterations {
            return Err(Error::InvalidConfig(alloc::format!(
                "patience {} exceeds max_iterations {}",
                self.patience,
                self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Mean batch cross-entropy plus the L2 penalty after the last step.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub val_weighted_f1: f64,
    pub val_kappa: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub best_score: f64,
    pub metric: ValidationMetric,
    pub stop_reason: StopReason,
    /// Balanced per-stage training counts.
    pub train_counts: [usize; NUM_STAGES],
}

/// Observation points inside [`train_fold`].
pub trait TrainHooks {
    fn on_batch(&mut self, _iteration: usize, _indices: &[usize]) {}
    fn on_iteration(&mut self, _record: &IterationRecord) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

pub struct TrainOutcome<F> {
    /// Parameters and batch-norm statistics from the best iteration.
    pub best: Model<F>,
    pub log: TrainingLog,
}

/// Training targets for `windows` under `cfg`.
pub fn make_targets<'a, I>(
    windows: I,
    cfg: &SmoothingConfig,
    matrix: Option<&ConditionalMatrix>,
) -> Result<Vec<TargetDistribution>>
where
    I: IntoIterator<Item = &'a SequenceWindow>,
{
    let windows = windows.into_iter();
    match cfg.mode {
        SmoothingMode::None => Ok(windows.map(|w| TargetDistribution::one_hot(w.center_label)).collect()),
        SmoothingMode::Uniform => Ok(windows.map(|w| smooth_uniform(w.center_label, cfg.alpha)).collect()),
        SmoothingMode::Conditional => {
            let m = matrix.ok_or(Error::MissingMatrix)?;
            Ok(windows
                .map(|w| smooth_conditional(w.center_label, w.prev_label, w.next_label, cfg.alpha, m))
                .collect())
        }
    }
}

/// Splits `0..n` in order into batches of `size`; a trailing batch of one
/// joins the previous batch, since batch statistics need two samples.
pub fn batch_ranges(n: usize, size: usize) -> Vec<core::ops::Range<usize>> {
    let mut out: Vec<core::ops::Range<usize>> = (0..n.div_ceil(size))
        .map(|b| b * size..((b + 1) * size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Inference-mode metrics over `windows`.
pub fn evaluate<F: Real>(model: &Model<F>, windows: &[SequenceWindow]) -> Result<MetricReport> {
    let preds = deterministic_predict(model, windows)?;
    let mut cm = ConfusionMatrix::default();
    for (w, p) in windows.iter().zip(&preds) {
        cm.add(w.center_label, p.predicted);
    }
    summarize(&cm)
}

/// Trains `model` on already balanced `train` windows, scoring `val` after
/// every pass and keeping the best-scoring state. Training stops once the
/// number of passes since the best exceeds the patience, or at the
/// iteration limit.
pub fn train_fold<F: Real>(
    mut model: Model<F>,
    train: &[SequenceWindow],
    val: &[SequenceWindow],
    cfg: &TrainConfig,
    matrix: Option<&ConditionalMatrix>,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if train.len() < 2 {
        return Err(Error::DegenerateBatch);
    }
    if cfg.smoothing.mode == SmoothingMode::Conditional && matrix.is_none() {
        return Err(Error::MissingMatrix);
    }
    let targets: Vec<Vec<F>> = make_targets(train, &cfg.smoothing, matrix)?
        .iter()
        .map(|t| t.probs.iter().map(|&p| F::from_f64_lossy(p)).collect())
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.shuffle);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.dropout);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut best_iteration = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut records = Vec::new();
    let mut step = 0u64;
    let mut stop_reason = StopReason::MaxIterations;
    for iteration in 1..=cfg.max_iterations {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch, range) in batch_ranges(order.len(), cfg.optimizer.batch_size)
            .into_iter()
            .enumerate()
        {
            let idx = &order[range];
            hooks.on_batch(iteration, idx);
            let input = model.input_tensor(idx.iter().map(|&i| &train[i].samples[..]))?;
            let batch_targets: Vec<Vec<F>> = idx.iter().map(|&i| targets[i].clone()).collect();
            let (trace, cache) = model.forward_train(&input, &mut dropout_rng)?;
            let (_, loss, grad) = softmax_xent_batch(&trace.logits, &batch_targets)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration, batch });
            }
            model.backward(&grad, &cache)?;
            step += 1;
            adam_step(model.params_mut(), step, &cfg.optimizer);
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let train_loss = loss_sum / seen as f64 + 0.5 * cfg.optimizer.l2_lambda * model.params().l2_penalty();
        let report = evaluate(&model, val)?;
        let score = cfg.metric.of(&report);
        let improved = score > best_score;
        if improved {
            best_score = score;
            best_iteration = iteration;
            best.load_state_from(&model)?;
        }
        let record = IterationRecord {
            iteration,
            train_loss,
            val_accuracy: report.accuracy,
            val_macro_f1: report.macro_f1,
            val_weighted_f1: report.weighted_f1,
            val_kappa: report.kappa,
            improved,
        };
        hooks.on_iteration(&record);
        records.push(record);
        if iteration - best_iteration > cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let mut train_counts = [0; NUM_STAGES];
    for w in train {
        train_counts[w.center_label.index()] += 1;
    }
    Ok(TrainOutcome {
        best,
        log: TrainingLog {
            records,
            best_iteration,
            best_score,
            metric: cfg.metric,
            stop_reason,
            train_counts,
        },
    })
}

/// Windows and the label sequence of one recording's kept epoch range.
#[derive(Debug, Clone)]
pub struct RecordingData {
    pub subject_id: String,
    pub recording_id: String,
    /// AASM labels over the trimmed range (`None` where excluded).
    pub labels: Vec<Option<SleepStage>>,
    pub windows: Vec<SequenceWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub architecture: ArchitectureConfig,
    /// Monte Carlo scoring of the test windows; `None` scores with a single
    /// inference pass.
    pub mc: Option<McConfig>,
}

pub struct FoldResult<F> {
    pub fold_id: usize,
    pub outcome: TrainOutcome<F>,
    pub matrix: Option<ConditionalMatrix>,
    pub predictions: Vec<McPrediction>,
}

pub struct CvResult<F> {
    pub folds: Vec<FoldResult<F>>,
    /// Test predictions of every fold in fold order.
    pub pooled: Vec<McPrediction>,
}

impl<F> CvResult<F> {
    pub fn pooled_confusion(&self) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for p in &self.pooled {
            if let Some(l) = p.label {
                cm.add(l, p.predicted);
            }
        }
        cm
    }
}

/// Trains one model per fold of `plan` and scores its test subjects.
/// Training windows are balanced per fold; validation and test windows are
/// used as cut. The conditional matrix, when needed, is counted over the
/// fold's training recordings only. Fold `k` uses every seed offset by `k`.
pub fn run_cross_validation<F: Real>(
    plan: &FoldPlan,
    recordings: &[RecordingData],
    cfg: &CvConfig,
    mut on_fold: impl FnMut(&FoldResult<F>) -> Result<()>,
) -> Result<CvResult<F>> {
    let subjects: Vec<String> = recordings
        .iter()
        .map(|r| r.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    plan.validate(&subjects)?;
    let mut folds = Vec::with_capacity(plan.folds.len());
    let mut pooled = Vec::new();
    for fold in &plan.folds {
        let select = |ids: &[String]| -> Vec<&RecordingData> {
            recordings.iter().filter(|r| ids.contains(&r.subject_id)).collect()
        };
        let train_recs = select(&fold.train);
        let seeds = cfg.train.seeds.offset(fold.id as u64);
        let raw: Vec<SequenceWindow> = train_recs.iter().flat_map(|r| r.windows.iter().cloned()).collect();
        let train = balance_classes(&raw, &mut ChaCha8Rng::seed_from_u64(seeds.balance))?;
        let val: Vec<SequenceWindow> = select(&fold.validation)
            .iter()
            .flat_map(|r| r.windows.iter().cloned())
            .collect();
        let test: Vec<SequenceWindow> = select(&fold.test)
            .iter()
            .flat_map(|r| r.windows.iter().cloned())
            .collect();
        let matrix = (cfg.train.smoothing.mode == SmoothingMode::Conditional)
            .then(|| build_conditional_matrix(train_recs.iter().map(|r| r.labels.as_slice())));
        let model = Model::build(cfg.architecture.clone(), &mut ChaCha8Rng::seed_from_u64(seeds.init))?;
        let train_cfg = TrainConfig { seeds, ..cfg.train };
        let outcome = train_fold(model, &train, &val, &train_cfg, matrix.as_ref(), &mut NoHooks)?;
        let predictions = match &cfg.mc {
            Some(mc) => test
                .iter()
                .map(|w| mc_predict(&outcome.best, w, mc))
                .collect::<Result<Vec<_>>>()?,
            None => deterministic_predict(&outcome.best, &test)?,
        };
        let result = FoldResult {
            fold_id: fold.id,
            outcome,
            matrix,
            predictions,
        };
        on_fold(&result)?;
        pooled.extend(result.predictions.iter().cloned());
        folds.push(result);
    }
    Ok(CvResult { folds, pooled })
}
