use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input stream is empty")]
    EmptyInput,

    #[error("{0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Mechanism(String),

    #[error("{0}")]
    Eval(String),

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_epoch(self, epoch: usize) -> Self {
        match self {
            e @ Error::Epoch { .. } => e,
            e => Error::Epoch {
                epoch,
                source: Box::new(e),
            },
        }
    }

    /// Whether the error stems from bad input (data, config, usage) rather
    /// than a failure during a run.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Epoch { .. })
    }
}
