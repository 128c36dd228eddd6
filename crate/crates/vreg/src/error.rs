//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for the requested operation. `axis`
    /// names the first offending axis when known.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?} (axis {axis})")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
        axis: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative method produced non-finite values; the objective
    /// trace up to the failure is attached.
    #[error("numerical failure: {message} (trace length {})", trace.len())]
    Numerical { message: String, trace: Vec<f64> },

    /// CG detected a direction of nonpositive curvature, signaling a
    /// non-minimizing lower-level point.
    #[error("indefinite operator: p'Ap = {curvature} at iteration {iteration}")]
    IndefiniteOperator { curvature: f64, iteration: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unbound leaf '{0}'")]
    UnboundLeaf(String),

    #[error("constraint violated: {0}")]
    InvariantViolation(String),

    #[error("architecture '{arch}' not supported by scheme '{scheme}'")]
    ArchSchemeMismatch { arch: String, scheme: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code taxonomy used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::ArchSchemeMismatch { .. } => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
