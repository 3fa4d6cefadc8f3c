use thiserror::Error;

/// Errors produced by the prefopt library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value fell outside the mathematical domain of an operation,
    /// e.g. a log of a zero probability.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("wrong dataset kind: expected {expected}, found {found}")]
    WrongKind { expected: String, found: String },

    /// Distinct-completion rejection sampling exceeded its retry budget.
    #[error("sampler is degenerate on prompt {prompt}: no distinct completions after {retries} retries")]
    DegenerateSampler { prompt: usize, retries: usize },

    /// A training run produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("dataset is bound to instance {dataset} but was loaded against instance {instance}")]
    DigestMismatch { dataset: String, instance: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
