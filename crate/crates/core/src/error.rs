//! Crate-wide error type.

/// Errors produced by discretization, linear algebra and nonlinear solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Evaluation outside the domain of a mesh or rule. Callers evaluating a
    /// periodic state must wrap the argument first.
    #[error("argument {value} outside domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("matrix is numerically singular (pivot {pivot:.3e})")]
    SingularMatrix { pivot: f64 },

    #[error("no convergence after {iterations} iterations (last residual {last_residual:.3e})")]
    NoConvergence {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
        last_iterate: Vec<f64>,
    },

    /// The unknown is (numerically) a constant state, where the period column
    /// of the collocation Jacobian vanishes identically.
    #[error("degenerate constant orbit: {0}")]
    DegenerateOrbit(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigensolver(String),

    #[error("malformed orbit file: {0}")]
    OrbitFormat(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
