use std::path::PathBuf;

use crate::data::ValenceState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface, grouped by origin.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("label {0:?} has a single window; no valid positive exists")]
    NoPositive(ValenceState),

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: String,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("client error ({}): {message}", if *.retryable { "retryable" } else { "fatal" })]
    Client { message: String, retryable: bool },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing dependency: {artifact} (run stage `{stage}` first)")]
    MissingDependency { stage: String, artifact: String },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Client { retryable: true, .. })
    }

    /// Strips stage/fold wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}
