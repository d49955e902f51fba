use alloc::string::String;

use thiserror::Error;

use crate::stage::SleepStage;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown stage token {0:?}")]
    UnknownStageToken(String),
    #[error("annotation at onset {onset}s leaves a gap or overlaps the previous one")]
    NonContiguousAnnotations { onset: f64 },
    #[error("annotation duration {duration}s is not a whole number of 30 s epochs")]
    PartialEpoch { duration: f64 },
    #[error("hypnogram contains no sleep epoch")]
    NoSleepFound,
    #[error("signal covers {signal_epochs} epochs but the hypnogram has {hypnogram_epochs}")]
    Alignment {
        signal_epochs: usize,
        hypnogram_epochs: usize,
    },
    #[error("invalid fold count k={k} for {subjects} subjects")]
    InvalidK { k: usize, subjects: usize },
    #[error("no training window for stage {0}")]
    EmptyClass(SleepStage),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalization needs at least 2 samples in training mode")]
    DegenerateBatch,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}, batch {batch}")]
    NonFiniteLoss { iteration: usize, batch: usize },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("conditional smoothing requires a conditional matrix")]
    MissingMatrix,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
