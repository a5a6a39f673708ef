use thiserror::Error;

/// Errors raised by the recovery library.
///
/// `Input` and `Parameter` are validation failures (bad data or bad
/// arguments); `Numerical` marks a computation that could not produce a
/// trustworthy answer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("parameter error: {field}: {msg}")]
    Parameter { field: &'static str, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("hypothesis violated: mu = {mu} >= 1")]
    HypothesisViolated { mu: f64 },

    #[error("infeasible measurements: residual {residual:e} of least-squares solution")]
    Infeasible { residual: f64 },

    #[error("memory guard exceeded: {needed_mb} MB needed, guard is {guard_mb} MB")]
    MemoryGuard { needed_mb: usize, guard_mb: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn param(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            msg: msg.into(),
        }
    }

    /// True for errors caused by invalid input rather than failed numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::Io(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
