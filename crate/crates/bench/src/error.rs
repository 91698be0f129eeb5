use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] pobo_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: row {row}, column '{column}': cannot parse {value:?} as a number", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<BenchError>,
    },
}

pub type Result<T> = std::result::Result<T, BenchError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(BenchError::Config(msg.into()))
}
