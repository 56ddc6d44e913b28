use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate grid points at indices {i} and {j}")]
    DuplicateGridPoints { i: usize, j: usize },

    #[error("kernel is singular on the diagonal; an extended-infinity diagonal cannot be assembled into a finite matrix")]
    SingularDiagonal,

    #[error("point is not on the tabulated grid")]
    PointNotOnGrid,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("infeasible constraint set (phase-1 residual {residual:.3e})")]
    Infeasible {
        /// Farkas-type dual vector certifying infeasibility.
        certificate: Vec<f64>,
        residual: f64,
    },

    #[error("LP reported unbounded on a bounded polytope; this indicates an internal error")]
    Unbounded,

    #[error("all masses in the sweep range are infeasible:\n{0}")]
    AllMassesInfeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
