use thiserror::Error;

/// Errors raised by the covariance kernels, procedures and the simulation
/// harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain (for example an
    /// intraclass correlation outside the positive-definite region).
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// A matrix that must be symmetric positive definite failed its
    /// Cholesky factorization; `index` is the pivot row that failed.
    #[error("matrix not positive definite at pivot {index} (pivot {pivot:.3e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// Structural validation failed (schedule shape, length mismatches,
    /// inconsistent configuration).
    #[error("validation: {0}")]
    Validation(String),

    /// An iterative numerical method failed to converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A procedure failed inside the simulation loop.
    #[error("simulation iteration {iteration} ({fingerprint}): {source}")]
    Simulation {
        iteration: u64,
        fingerprint: String,
        #[source]
        source: Box<Error>,
    },

    /// File I/O while reading or writing matrices, calibration sidecars or
    /// result tables.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A numeric field failed to parse, with its location.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
