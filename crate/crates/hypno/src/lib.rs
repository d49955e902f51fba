//! File formats, ingestion, the command-line workflow and the review
//! service built on `hypno-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod edf;
pub mod error;
pub mod export;
pub mod formats;
pub mod ingest;
pub mod service;

pub use error::{Error, Result};
pub use hypno_core as core;
