use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },

    #[error("privacy accounting failed: {0}")]
    Accounting(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("hyperparameter search failed: every trial diverged ({})", .0.join("; "))]
    HpoFailed(Vec<String>),

    #[error(
        "insufficient shadow models{}: {n_in} IN, {n_out} OUT",
        sample_id.map(|s| format!(" for sample {s}")).unwrap_or_default()
    )]
    InsufficientShadows {
        sample_id: Option<u64>,
        n_in: usize,
        n_out: usize,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("store integrity error at {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
