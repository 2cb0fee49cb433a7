use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqgError {
    /// Input data was malformed (non-finite values, wrong length).
    #[error("invalid data: {0}")]
    Data(String),

    /// A coefficient array expected to represent a real field was not
    /// conjugate symmetric.
    #[error("conjugate symmetry broken: max deviation {deviation:.3e} (tolerance {tolerance:.3e})")]
    Symmetry { deviation: f64, tolerance: f64 },

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration (grid mismatch, bad parameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested computation is not resolved by the grid.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// The solution became non-finite or exceeded the gradient guard.
    #[error("blow-up at t = {t:.6}: {reason}")]
    BlowUp { t: f64, reason: String },

    /// An iterative method ran out of iterations.
    #[error("no convergence after {iterations} iterations: {detail}")]
    Convergence { iterations: usize, detail: String },

    /// A size cap was exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed on [{a:.6e}, {b:.6e}]: {reason}")]
    Quadrature { a: f64, b: f64, reason: String },

    /// Regression or growth-rate fit could not be carried out.
    #[error("fit error: {0}")]
    Fit(String),

    /// No admissible modulus scale was found.
    #[error("scale selection failed: {0}")]
    Selection(String),
}

pub type Result<T> = std::result::Result<T, SqgError>;
