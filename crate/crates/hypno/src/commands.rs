//! Command-line subcommands. Each one is a plain function so tests can
//! drive the workflow without spawning processes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use hypno_core::folds::{split_subjects, FoldPlan};
use hypno_core::metrics::{kept_rejected_report, KeptRejectedReport};
use hypno_core::model::Model;
use hypno_core::synth::synth_night;
use hypno_core::train::{run_cross_validation, CvConfig, RecordingData, Seeds};
use hypno_core::uncertainty::{deterministic_predict, mc_predict, QueryConfig, QueryCriterion};
use hypno_core::SleepStage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TrainingMetadata};
use crate::config::RunConfig;
use crate::edf::{hypnogram_to_edf, signal_to_edf};
use crate::error::{read, write, Error, Result};
use crate::export::{evaluate_records, flag_predictions, report_csv, requery, EvaluationReport, PredictionRecord};
use crate::formats::{from_jsonl, parse_fold_file, to_jsonl, write_fold_file};
use crate::ingest::{self, discover, ingest_recording, load_cache, run_ingest, IngestReport, IngestSettings};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RUN_INFO: &str = "run.json";
pub const FOLDS_FILE: &str = "folds.txt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const QUERY_FILE: &str = "query.jsonl";
pub const KEPT_REJECTED_FILE: &str = "kept_rejected.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Parser)]
#[command(
    name = "hypno",
    version,
    about = "Single-channel EEG sleep staging with uncertainty-driven review"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Derives every random seed from this value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output location (directory, or file for `score`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Variance,
    Mean,
}

impl From<CriterionArg> for QueryCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Variance => QueryCriterion::Variance,
            CriterionArg::Mean => QueryCriterion::Mean,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic PSG and hypnogram EDF files.
    Synth {
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        #[arg(long, default_value_t = 1)]
        nights: usize,
        #[arg(long, default_value_t = 1080)]
        epochs: usize,
        #[arg(long, default_value_t = 100)]
        sample_rate: usize,
    },
    /// Extract windows from the input directory into the cache.
    Ingest,
    /// Cross-validated training; writes a run directory.
    Train,
    /// Pooled metrics and calibration for a run.
    Evaluate {
        /// Run directory; defaults to the configured one.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Prediction export to evaluate instead of the run's.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Score one recording with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cached recording id or path to a `-PSG.edf` file.
        #[arg(long)]
        recording: String,
        /// Single deterministic pass instead of Monte Carlo dropout.
        #[arg(long)]
        no_mc: bool,
    },
    /// Flag uncertain epochs in a prediction export.
    Query {
        #[arg(long)]
        predictions: PathBuf,
        /// Percentage of each recording to flag.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, value_enum)]
        criterion: Option<CriterionArg>,
    },
    /// HTTP review service over a run directory.
    Serve {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Require this value in the `x-review-token` header.
        #[arg(long)]
        token: Option<String>,
    },
}

/// Config from `--config` (or defaults) with `--seed` applied.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli.out;
    match cli.command {
        Command::Synth {
            subjects,
            nights,
            epochs,
            sample_rate,
        } => {
            let dir = out.unwrap_or_else(|| cfg.data.input_dir.clone());
            let files = synth(
                &dir,
                &cfg.data.channel,
                subjects,
                nights,
                epochs,
                sample_rate,
                cli.seed.unwrap_or(0),
            )?;
            println!("wrote {} recordings to {}", files.len(), dir.display());
        }
        Command::Ingest => {
            let cache = out.unwrap_or_else(|| cfg.data.cache_dir.clone());
            let (report, reused) = ingest(&cfg, &cache)?;
            print!("{}", report.table());
            if reused {
                println!("cache {} is up to date", cache.display());
            }
        }
        Command::Train => {
            let dir = out.unwrap_or_else(|| run_dir(&cfg));
            let summary = train(&cfg, &dir)?;
            println!(
                "{} folds, {} test epochs, pooled accuracy {:.3}; run written to {}",
                summary.folds,
                summary.predictions,
                summary.accuracy,
                dir.display()
            );
        }
        Command::Evaluate { run, predictions } => {
            let dir = run.unwrap_or_else(|| run_dir(&cfg));
            let preds = predictions.unwrap_or_else(|| dir.join(PREDICTIONS_FILE));
            let out_dir = out.unwrap_or_else(|| dir.clone());
            let r = evaluate(&dir, &preds, &out_dir)?;
            println!(
                "n={} acc={:.4} mf1={:.4} kappa={:.4}; reports in {}",
                r.overall.n,
                r.overall.accuracy,
                r.overall.macro_f1,
                r.overall.kappa,
                out_dir.display()
            );
        }
        Command::Score {
            checkpoint,
            recording,
            no_mc,
        } => {
            let recs = score(&cfg, &checkpoint, &recording, !no_mc)?;
            let bytes = to_jsonl(&recs)?;
            match out {
                Some(p) => write(&p, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Query {
            predictions,
            q,
            criterion,
        } => {
            let mut qc = cfg.query;
            if let Some(q) = q {
                qc.q_percent = q;
            }
            if let Some(c) = criterion {
                qc.criterion = c.into();
            }
            let out_dir = out.unwrap_or_else(|| predictions.parent().map(Path::to_path_buf).unwrap_or_default());
            let (recs, _) = query(&predictions, &qc, &out_dir)?;
            println!(
                "flagged {} of {} epochs; exports in {}",
                recs.iter().filter(|r| r.flagged).count(),
                recs.len(),
                out_dir.display()
            );
        }
        Command::Serve { run, addr, token } => {
            let dir = run.unwrap_or_else(|| run_dir(&cfg));
            let state = crate::service::AppState::open(&dir, token)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(&dir, e))?;
            rt.block_on(crate::service::serve(state, &addr))?;
        }
    }
    Ok(())
}

pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.runs_dir.join(&cfg.output.run_id)
}

/// Writes `subjects × nights` synthetic recordings named
/// `subjNN_nK-PSG.edf` / `subjNN_nK-Hypnogram.edf`.
pub fn synth(
    dir: &Path,
    channel: &str,
    subjects: usize,
    nights: usize,
    epochs: usize,
    sample_rate: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    if subjects == 0 || nights == 0 || epochs == 0 {
        return Err(Error::Config(
            "synth needs at least one subject, night and epoch".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..subjects {
        for n in 1..=nights {
            let (signal, hyp) = synth_night(epochs, sample_rate, &mut rng);
            let id = format!("subj{s:02}_n{n}");
            let psg = dir.join(format!("{id}-PSG.edf"));
            write(&psg, &signal_to_edf(channel, &signal, -250.0, 250.0)?.to_bytes()?)?;
            write(
                &dir.join(format!("{id}-Hypnogram.edf")),
                &hypnogram_to_edf(&hyp)?.to_bytes()?,
            )?;
            out.push(psg);
        }
    }
    Ok(out)
}

pub fn ingest(cfg: &RunConfig, cache_dir: &Path) -> Result<(IngestReport, bool)> {
    RunConfig::require(&cfg.data.input_dir, "data.input_dir")?;
    run_ingest(&IngestSettings {
        input_dir: &cfg.data.input_dir,
        cache_dir,
        channel: &cfg.data.channel,
        trim: cfg.data.trim,
        dataset: &cfg.data.dataset,
    })
}

/// Provenance written next to the run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub input_hash: String,
    pub sample_rate: usize,
    pub parameters: usize,
    pub seeds: Seeds,
    pub fold_seed: u64,
    pub mc_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_iteration: usize,
    pub best_score: f64,
    pub stop_reason: hypno_core::train::StopReason,
    pub train_counts: [usize; hypno_core::NUM_STAGES],
    pub test_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub folds: usize,
    pub predictions: usize,
    pub accuracy: f64,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn sample_rate_of(manifest: &ingest::CacheManifest) -> Result<usize> {
    let mut rates = manifest.recordings.iter().map(|r| r.sample_rate);
    let fs = rates
        .next()
        .ok_or_else(|| Error::Data("cache holds no recordings".into()))?;
    if rates.any(|r| r != fs) {
        return Err(Error::Data("recordings differ in sample rate".into()));
    }
    if fs.fract() != 0.0 || fs < 1.0 {
        return Err(Error::Data(format!("sample rate {fs} is not a whole number of Hz")));
    }
    Ok(fs as usize)
}

pub fn fold_plan(cfg: &RunConfig, recordings: &[RecordingData]) -> Result<FoldPlan> {
    let mut subjects: Vec<String> = recordings.iter().map(|r| r.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let plan = match &cfg.folds.file {
        Some(f) => {
            let text = String::from_utf8(read(f)?).map_err(|_| Error::Data(format!("{}: not UTF-8", f.display())))?;
            parse_fold_file(&text)?
        }
        None => split_subjects(&subjects, cfg.folds.k, cfg.folds.n_validation, cfg.folds.seed)?,
    };
    plan.validate(&subjects)?;
    Ok(plan)
}

/// Ingests (reusing an up-to-date cache), runs cross-validation and writes
/// the run directory: config snapshot, provenance, fold plan, per-fold
/// checkpoints and logs, and the pooled prediction export. Wall-clock
/// timings go to a separate file so every other output is reproducible.
pub fn train(cfg: &RunConfig, dir: &Path) -> Result<TrainSummary> {
    let started = Instant::now();
    let mut snapshot = cfg.clone();
    snapshot.data.input_dir = absolute(&cfg.data.input_dir);
    snapshot.data.cache_dir = absolute(&cfg.data.cache_dir);
    snapshot.output.runs_dir = absolute(&cfg.output.runs_dir);
    snapshot.folds.file = cfg.folds.file.as_deref().map(absolute);
    let (report, _) = ingest(cfg, &cfg.data.cache_dir)?;
    let (manifest, recordings) = load_cache(&cfg.data.cache_dir)?;
    let fs = sample_rate_of(&manifest)?;
    let architecture = cfg.model.architecture(fs)?;
    let plan = fold_plan(cfg, &recordings)?;
    let cv = CvConfig {
        train: cfg.train.resolve(),
        architecture: architecture.clone(),
        mc: cfg.mc.resolve(),
    };
    write(&dir.join(CONFIG_SNAPSHOT), snapshot.to_toml()?.as_bytes())?;
    let info = RunInfo {
        version: env!("CARGO_PKG_VERSION").into(),
        input_hash: report.input_hash.clone(),
        sample_rate: fs,
        parameters: architecture.parameter_count()?,
        seeds: cv.train.seeds,
        fold_seed: cfg.folds.seed,
        mc_seed: cv.mc.map(|m| m.seed),
    };
    write(&dir.join(RUN_INFO), &serde_json::to_vec_pretty(&info)?)?;
    write(&dir.join(FOLDS_FILE), write_fold_file(&plan).as_bytes())?;

    let mut timings = Vec::new();
    let mut last = Instant::now();
    let mut failure = None;
    let mut write_fold = |fold: &hypno_core::train::FoldResult<f32>| -> Result<()> {
        let fold_dir = dir.join(format!("fold{}", fold.fold_id));
        let log = &fold.outcome.log;
        let meta = TrainingMetadata {
            fold: Some(fold.fold_id),
            iteration: log.best_iteration,
            validation_score: log.best_score,
            metric: log.metric,
            seeds: cv.train.seeds.offset(fold.fold_id as u64),
            train: Some(cv.train),
        };
        write(
            &fold_dir.join("best.ckpt"),
            &checkpoint::save(&fold.outcome.best, Some(meta))?,
        )?;
        write(&fold_dir.join("training_log.jsonl"), &to_jsonl(&log.records)?)?;
        let summary = FoldSummary {
            fold: fold.fold_id,
            best_iteration: log.best_iteration,
            best_score: log.best_score,
            stop_reason: log.stop_reason,
            train_counts: log.train_counts,
            test_epochs: fold.predictions.len(),
        };
        write(&fold_dir.join("fold.json"), &serde_json::to_vec_pretty(&summary)?)?;
        let now = Instant::now();
        timings.push(serde_json::json!({
            "fold": fold.fold_id,
            "iterations": log.records.len(),
            "seconds": (now - last).as_secs_f64(),
        }));
        last = now;
        eprintln!(
            "fold {}: best iteration {} ({:?} {:.4}), {} test epochs",
            fold.fold_id,
            log.best_iteration,
            log.metric,
            log.best_score,
            fold.predictions.len()
        );
        Ok(())
    };
    let result = run_cross_validation::<f32>(&plan, &recordings, &cv, |fold| {
        write_fold(fold).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            hypno_core::Error::InvalidArgument(msg)
        })
    });
    let result = match (result, failure) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    let records = flag_predictions(&result.pooled, &cfg.query)?;
    write(&dir.join(PREDICTIONS_FILE), &to_jsonl(&records)?)?;
    let timing = serde_json::json!({ "folds": timings, "total_seconds": started.elapsed().as_secs_f64() });
    write(&dir.join(TIMING_FILE), &serde_json::to_vec_pretty(&timing)?)?;
    let cm = result.pooled_confusion();
    let correct: u64 = (0..hypno_core::NUM_STAGES).map(|i| cm.counts[i][i]).sum();
    Ok(TrainSummary {
        folds: result.folds.len(),
        predictions: records.len(),
        accuracy: if cm.total() == 0 {
            0.0
        } else {
            correct as f64 / cm.total() as f64
        },
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::Data(format!("{}: not UTF-8", path.display())))?;
    from_jsonl(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Pooled metrics, kept/rejected split and calibration for a prediction
/// export, using the bin count recorded in the run's config snapshot.
pub fn evaluate(run: &Path, predictions: &Path, out_dir: &Path) -> Result<EvaluationReport> {
    let snapshot = run.join(CONFIG_SNAPSHOT);
    let cfg = if snapshot.exists() {
        let text =
            String::from_utf8(read(&snapshot)?).map_err(|_| Error::Config("config snapshot is not UTF-8".into()))?;
        RunConfig::from_toml(&text)?
    } else {
        RunConfig::default()
    };
    let records = read_predictions(predictions)?;
    let (report, calibration) = evaluate_records(&records, cfg.evaluation.ece_bins)?;
    write(&out_dir.join(REPORT_FILE), &serde_json::to_vec_pretty(&report)?)?;
    write(&out_dir.join(REPORT_CSV), report_csv(&report.overall)?.as_bytes())?;
    write(
        &out_dir.join(CALIBRATION_FILE),
        &serde_json::to_vec_pretty(&calibration)?,
    )?;
    Ok(report)
}

/// Predictions for one recording from a checkpoint.
pub fn score(cfg: &RunConfig, checkpoint_path: &Path, recording: &str, mc: bool) -> Result<Vec<PredictionRecord>> {
    let (model, _) = checkpoint::load::<f32>(&read(checkpoint_path)?)?;
    let data = find_recording(cfg, recording)?;
    let n = model.config().input_len();
    if let Some(w) = data.windows.iter().find(|w| w.samples.len() != n) {
        return Err(Error::Data(format!(
            "{recording}: windows hold {} samples, the model expects {n}",
            w.samples.len()
        )));
    }
    let preds = predict(&model, &data, mc.then(|| cfg.mc.resolve()).flatten().as_ref())?;
    flag_predictions(&preds, &cfg.query)
}

fn predict(
    model: &Model<f32>,
    data: &RecordingData,
    mc: Option<&hypno_core::uncertainty::McConfig>,
) -> Result<Vec<hypno_core::uncertainty::McPrediction>> {
    Ok(match mc {
        Some(mc) => data
            .windows
            .iter()
            .map(|w| mc_predict(model, w, mc))
            .collect::<hypno_core::Result<Vec<_>>>()?,
        None => deterministic_predict(model, &data.windows)?,
    })
}

/// A recording by cache id, or by `-PSG.edf` path (ingested on the fly).
pub fn find_recording(cfg: &RunConfig, recording: &str) -> Result<RecordingData> {
    let path = Path::new(recording);
    if path.is_file() {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let target = absolute(path);
        let src = discover(dir)?
            .into_iter()
            .find(|s| absolute(&s.psg) == target)
            .ok_or_else(|| Error::Data(format!("{recording}: not a -PSG.edf file with a hypnogram")))?;
        return Ok(ingest_recording(&src, &cfg.data.channel, cfg.data.trim)?.data);
    }
    let manifest = ingest::read_manifest(&cfg.data.cache_dir)?;
    let rec = manifest
        .recordings
        .iter()
        .find(|r| r.recording_id == recording)
        .ok_or_else(|| Error::Data(format!("recording {recording} is not in the cache")))?;
    ingest::load_recording(&cfg.data.cache_dir, rec)
}

/// Re-flags an export and splits its metrics into kept and rejected epochs.
pub fn query(
    predictions: &Path,
    q: &QueryConfig,
    out_dir: &Path,
) -> Result<(Vec<PredictionRecord>, KeptRejectedReport)> {
    let records = requery(&read_predictions(predictions)?, q)?;
    let labelled: Vec<&PredictionRecord> = records.iter().filter(|r| r.label.is_some()).collect();
    let truth: Vec<SleepStage> = labelled.iter().filter_map(|r| r.label).collect();
    let predicted: Vec<SleepStage> = labelled.iter().map(|r| r.predicted).collect();
    let flagged: Vec<bool> = labelled.iter().map(|r| r.flagged).collect();
    let kr = kept_rejected_report(&truth, &predicted, &flagged)?;
    write(&out_dir.join(QUERY_FILE), &to_jsonl(&records)?)?;
    let doc = serde_json::json!({
        "q_percent": q.q_percent,
        "criterion": q.criterion,
        "flagged": records.iter().filter(|r| r.flagged).count(),
        "total": records.len(),
        "report": kr,
    });
    write(&out_dir.join(KEPT_REJECTED_FILE), &serde_json::to_vec_pretty(&doc)?)?;
    Ok((records, kr))
}
