use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed case-file content.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A structural invariant of the input data is violated.
    #[error("validation error: {0}")]
    Validation(String),

    /// The measurement set does not observe the full state space.
    #[error("observability error: {0}")]
    Observability(String),

    /// A linear system is too ill-conditioned to solve reliably.
    #[error("conditioning error: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    Conditioning { cond: f64, limit: f64 },

    /// The evaluation protocol was violated (slice sizing, alignment, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Threshold or scaler calibration received unusable data.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A training run diverged.
    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// A documented API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
