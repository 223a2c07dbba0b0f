use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants are grouped so that a driver can map them onto exit codes:
/// bad input, numerical failure, and exhausted budgets.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("state u = {u} at x = {x} is outside the admissible band (solver blow-up?)")]
    Domain { u: f64, x: f64 },

    #[error("invariant region violated: u = {value} at x = {x}, t = {t}")]
    InvariantViolation { value: f64, x: f64, t: f64 },

    #[error("positivity lost in {what} at x = {x}, t = {t} (value {value})")]
    PositivityLost {
        what: &'static str,
        value: f64,
        x: f64,
        t: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("threshold search failed: {0}")]
    Threshold(String),

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by the caller's input rather than the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_) | Error::Parse { .. })
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::Budget(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
