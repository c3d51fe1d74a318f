use std::io;
use std::path::PathBuf;

/// Failures while reading IDX files.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: expected magic {expected:#010x}, found {found:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, need {expected} bytes but file has {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{path}: {extra} unexpected bytes after the payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(
        "checkpoint {path} was written for config {found}, current config hashes to {expected}; \
         delete it or rerun without --resume"
    )]
    HashMismatch { path: PathBuf, expected: String, found: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] spg_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invariant(String),
    #[error("{method} seed {seed}: {source}")]
    Job { method: String, seed: u64, source: Box<Error> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Job { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
