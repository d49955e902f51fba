//! Allocation-only core of the hypno sleep scorer.
//!
//! Everything here is pure computation over in-memory buffers: stage
//! labels and hypnogram handling, the convolutional network and its
//! training loop, Monte Carlo dropout uncertainty, the review query, and
//! evaluation metrics. File formats, the CLI and the review service live in
//! the `hypno` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod folds;
pub mod hypnogram;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod smoothing;
pub mod stage;
pub mod synth;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use stage::{RawStage, SleepStage, NUM_STAGES};
