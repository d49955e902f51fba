use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hypno_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("truncated EDF data: header implies {expected} bytes, found {actual}")]
    TruncatedRecord { expected: usize, actual: usize },
    #[error("malformed annotation list: {0}")]
    MalformedAnnotation(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corrupt window cache: {0}")]
    CorruptCache(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage/configuration, 2 data, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        use hypno_core::Error as C;
        match self {
            Error::Config(_) | Error::Core(C::InvalidConfig(_) | C::InvalidK { .. }) => 1,
            Error::Core(C::NonFinite(_) | C::NonFiniteLoss { .. }) => 3,
            _ => 2,
        }
    }
}

/// Reads a file, attaching the path to any error.
pub fn read(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating parent directories first.
pub fn write(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
