use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] crackle_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("test is degenerate: {0}")]
    DegenerateTest(String),
    #[error("region is empty: {0}")]
    EmptyRegion(String),
    #[error("ladder spread too small: {0}")]
    InsufficientSpread(String),
    #[error("{count} diagram pairs lie outside their region")]
    OutsideRegion { count: usize },
    #[error("point budget exceeded: expected {expected:.0} points, limit {limit}")]
    BudgetExceeded { expected: f64, limit: u64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
