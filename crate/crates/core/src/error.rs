use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MesinError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MesinError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric failure in {op}: non-finite value produced")]
    NumericFailure { op: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path} at record {record}: {message}")]
    Parse {
        path: String,
        record: usize,
        message: String,
    },

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::train::Checkpoint>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MesinError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        MesinError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        MesinError::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MesinError::Io {
            path: path.into(),
            source,
        }
    }
}
