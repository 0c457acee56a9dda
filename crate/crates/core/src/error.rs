use thiserror::Error;

/// Errors raised by the discretization, assembly, and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("parametric coordinate {0} outside [0, 1]")]
    OutOfDomain(f64),

    #[error("point {0:?} lies outside the patch")]
    OutsidePatch(Vec<f64>),

    #[error("potential is singular at {0:?}")]
    Singular(Vec<f64>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("FFT grid of {got} points per axis aliases wave-vector index {index}; need at least {required}")]
    Aliasing {
        got: usize,
        index: i64,
        required: usize,
    },

    #[error("Fourier table has no entry for offset {0:?}")]
    MissingEntry(Vec<i64>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("assembled Hamiltonian is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("overlap matrix is not positive definite")]
    OverlapNotDefinite,

    #[error("eigensolver did not converge in {iterations} iterations (max residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("SCF did not converge in {iterations} iterations (residual {residual:e})")]
    ScfNoConvergence { iterations: usize, residual: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
