use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid strip width {epsilon}: {reason}")]
    InvalidStrip { epsilon: f64, reason: String },

    #[error("problem specification violated: {0}")]
    SpecViolation(String),

    #[error("nonlinearity returned a non-finite value at u = {0}")]
    Evaluation(f64),

    #[error("mode mismatch: {0}")]
    ModeMismatch(&'static str),

    #[error("vector does not belong to this mesh")]
    MeshMismatch,

    #[error("singular matrix: pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },

    #[error("iteration did not converge after {iterations} iterations (best estimate {best_estimate})")]
    ConvergenceFailure { iterations: usize, best_estimate: f64 },

    #[error("eigensolver stagnated after {iterations} iterations; partial eigenvalues {partial:?}")]
    EigenStagnation { iterations: usize, partial: Vec<f64> },

    #[error("linearization at the anchor is singular; the anchor is not hyperbolic")]
    HyperbolicityFailure,

    #[error("equilibrium is not hyperbolic (spectral margin {margin:e})")]
    NotHyperbolic { margin: f64 },

    #[error("chord iterate left the admissible ball: distance {distance} > {limit}")]
    Divergence { distance: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
