use thiserror::Error;

/// Errors surfaced by the toolkit. The CLI maps these onto exit codes, so the
/// variants distinguish "the input is malformed" from "a precondition of the
/// requested operation fails" from "the numerics broke down".
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside chart domain: |x| = {radius:.6} exceeds {limit:.6}")]
    OutsideDomain { radius: f64, limit: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singularity encountered after arc length {arc_length:.6} near {location:?}")]
    Singularity { arc_length: f64, location: Vec<f64> },

    #[error("integration paths disagree: {disagreement:.3e} exceeds {tolerance:.3e}")]
    PathDisagreement { disagreement: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Io(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::OutsideDomain { .. }
            | Error::Precondition(_) => 3,
            Error::SolverFailure(_)
            | Error::Numerical(_)
            | Error::Singularity { .. }
            | Error::PathDisagreement { .. } => 4,
        }
    }
}
