use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("label {label} out of range 0..{classes}")]
    Label { label: usize, classes: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}: {detail}")]
    Parse { row: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("batch too small for batch norm: {0} values per channel, need at least 2")]
    DegenerateBatch(usize),

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: d_loss={d_loss}, g_loss={g_loss}")]
    Divergence {
        epoch: usize,
        step: u64,
        d_loss: f64,
        g_loss: f64,
    },

    #[error(
        "class {class}: accepted {accepted} of {drawn} draws (rate {rate:.4}) below threshold {tau}"
    )]
    Exhausted {
        class: usize,
        drawn: usize,
        accepted: usize,
        rate: f64,
        tau: f64,
    },

    #[error("augmentation plan error: {0}")]
    Plan(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
