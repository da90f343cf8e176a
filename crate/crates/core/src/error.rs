use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An array geometry or scene violates its construction invariants.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("lattice basis is rank deficient (Gram-Schmidt norm {norm_sq:e} at column {column})")]
    RankDeficient { column: usize, norm_sq: f64 },

    #[error("integer overflow while tracking the unimodular transform")]
    IntegerOverflow,

    #[error("Cholesky factorisation failed; project the covariance onto the PSD cone first")]
    NotPositiveDefinite,

    /// No snapshot survived the sign-consistency filter after initialisation.
    #[error(
        "no sign-consistent snapshot after initialisation ({snapshots} snapshots, modulo range {lambda}); \
         the modulo range is likely too small for the signal"
    )]
    EmptyConsistentSet { snapshots: usize, lambda: f64 },

    #[error("root MUSIC requires a uniform linear array; use spectral MUSIC for {0}")]
    NotUniformLinear(String),

    #[error("deadline exceeded")]
    Timeout,

    #[error("eigen-decomposition did not converge")]
    EigenFailure,
}

pub type Result<T> = std::result::Result<T, Error>;
