//! TOML run configuration. Every key is optional; defaults reproduce the
//! full Sleep-EDF setup (Fpz-Cz at 100 Hz, ±30 min trimming, 20
//! folds, conditional smoothing, 30 MC samples, 5% query).

use std::path::{Path, PathBuf};

use hypno_core::hypnogram::TrimPolicy;
use hypno_core::model::ArchitectureConfig;
use hypno_core::nn::OptimizerConfig;
use hypno_core::smoothing::{SmoothingConfig, SmoothingMode};
use hypno_core::train::{Seeds, TrainConfig, ValidationMetric};
use hypno_core::uncertainty::{McConfig, QueryConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `*-PSG.edf` recordings and their hypnograms.
    pub input_dir: PathBuf,
    /// Where `ingest` writes windows and its report.
    pub cache_dir: PathBuf,
    pub channel: String,
    pub trim: TrimPolicy,
    /// Free-form dataset tag copied into reports.
    pub dataset: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input_dir: "data".into(),
            cache_dir: "cache".into(),
            channel: "EEG Fpz-Cz".into(),
            trim: TrimPolicy::InBedPlus30Min,
            dataset: "sleep-edf-v1-2013".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSection {
    pub k: usize,
    pub n_validation: usize,
    pub seed: u64,
    /// Explicit fold file; overrides generation.
    pub file: Option<PathBuf>,
}

impl Default for FoldSection {
    fn default() -> Self {
        Self {
            k: 20,
            n_validation: 4,
            seed: 0,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Divides every filter count; 1 is the full network.
    pub width_divisor: usize,
    pub dropout: f64,
    pub bn_decay: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchitectureConfig::default();
        Self {
            width_divisor: 1,
            dropout: a.dropout,
            bn_decay: a.bn_decay,
            bn_epsilon: a.bn_epsilon,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, sample_rate: usize) -> Result<ArchitectureConfig> {
        let mut a = ArchitectureConfig::for_sample_rate(sample_rate).narrowed(self.width_divisor);
        a.dropout = self.dropout;
        a.bn_decay = self.bn_decay;
        a.bn_epsilon = self.bn_epsilon;
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub mode: SmoothingMode,
    /// Defaults to 0.1 for uniform and 0.2 for conditional smoothing.
    pub alpha: Option<f64>,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            mode: SmoothingMode::Conditional,
            alpha: None,
        }
    }
}

impl SmoothingSection {
    pub fn resolve(&self) -> SmoothingConfig {
        let alpha = self.alpha.unwrap_or(match self.mode {
            SmoothingMode::None => 0.0,
            SmoothingMode::Uniform => SmoothingConfig::DEFAULT_UNIFORM_ALPHA,
            SmoothingMode::Conditional => SmoothingConfig::DEFAULT_CONDITIONAL_ALPHA,
        });
        SmoothingConfig { mode: self.mode, alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_iterations: usize,
    pub patience: usize,
    pub metric: ValidationMetric,
    pub optimizer: OptimizerConfig,
    pub smoothing: SmoothingSection,
    pub seeds: Seeds,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_iterations: t.max_iterations,
            patience: t.patience,
            metric: t.metric,
            optimizer: t.optimizer,
            smoothing: SmoothingSection::default(),
            seeds: t.seeds,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self) -> TrainConfig {
        TrainConfig {
            max_iterations: self.max_iterations,
            patience: self.patience,
            optimizer: self.optimizer,
            smoothing: self.smoothing.resolve(),
            seeds: self.seeds,
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    /// Score test windows with Monte Carlo dropout; otherwise one
    /// deterministic pass.
    pub enabled: bool,
    pub n_samples: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for McSection {
    fn default() -> Self {
        let m = McConfig::default();
        Self {
            enabled: true,
            n_samples: m.n_samples,
            dropout: m.dropout,
            seed: m.seed,
        }
    }
}

impl McSection {
    pub fn resolve(&self) -> Option<McConfig> {
        self.enabled.then_some(McConfig {
            n_samples: self.n_samples,
            dropout: self.dropout,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub ece_bins: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            ece_bins: hypno_core::metrics::DEFAULT_ECE_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub runs_dir: PathBuf,
    /// Run directory name; defaults to `run`.
    pub run_id: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            runs_dir: "runs".into(),
            run_id: "run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub folds: FoldSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub mc: McSection,
    pub query: QueryConfig,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.input_dir);
        fix(&mut self.data.cache_dir);
        fix(&mut self.output.runs_dir);
        if let Some(f) = &mut self.folds.file {
            fix(f);
        }
    }

    /// Derives every seed from one value.
    pub fn apply_seed(&mut self, seed: u64) {
        self.train.seeds = Seeds {
            init: seed,
            shuffle: seed.wrapping_add(1),
            dropout: seed.wrapping_add(2),
            balance: seed.wrapping_add(3),
        };
        self.folds.seed = seed.wrapping_add(4);
        self.mc.seed = seed.wrapping_add(5);
    }

    /// Value checks that need no file system access.
    pub fn validate(&self) -> Result<()> {
        self.train.resolve().validate()?;
        self.model.architecture(100)?;
        if let Some(mc) = self.mc.resolve() {
            mc.validate()?;
        }
        self.query.validate()?;
        if self.evaluation.ece_bins == 0 {
            return Err(Error::Config("evaluation.ece_bins must be at least 1".into()));
        }
        if self.output.run_id.is_empty() || self.output.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run id {:?} is not a plain name",
                self.output.run_id
            )));
        }
        Ok(())
    }

    /// Fails unless `path` exists.
    pub fn require(path: &Path, key: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("{key} {} does not exist", path.display())))
        }
    }
}
