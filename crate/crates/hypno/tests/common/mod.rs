#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hypno::commands;
use hypno::config::RunConfig;

/// Config for tiny synthetic runs rooted at `root`.
pub fn small_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.input_dir = root.join("data");
    cfg.data.cache_dir = root.join("cache");
    cfg.data.dataset = "synthetic".into();
    cfg.output.runs_dir = root.join("runs");
    cfg.model.width_divisor = 8;
    cfg.train.max_iterations = 1;
    cfg.train.patience = 0;
    cfg.folds.k = 2;
    cfg.folds.n_validation = 1;
    cfg.mc.n_samples = 3;
    cfg
}

/// Synthetic recordings in `cfg.data.input_dir`, then an ingested cache.
pub fn synth_and_ingest(cfg: &RunConfig, subjects: usize, epochs: usize, fs: usize) -> PathBuf {
    commands::synth(&cfg.data.input_dir, &cfg.data.channel, subjects, 1, epochs, fs, 7).unwrap();
    commands::ingest(cfg, &cfg.data.cache_dir).unwrap();
    cfg.data.cache_dir.clone()
}
