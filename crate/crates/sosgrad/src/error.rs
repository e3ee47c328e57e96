use thiserror::Error;

/// Errors surfaced by the synthesis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} in {context}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A polynomial carries a monomial that the target basis cannot
    /// represent.
    #[error("monomial {0} is not representable in the given basis")]
    UnrepresentableMonomial(String),

    /// Simplex weights failed to sum to one within tolerance.
    #[error("simplex violation: weights sum to {sum} at the queried parameter")]
    SimplexViolation { sum: f64 },

    /// A numeric evaluation produced a non-finite value.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// The Bellman-fit normal matrix is not positive definite and no
    /// regularization was requested.
    #[error("value-function fit is singular; raise the regularization or enlarge the weight grid")]
    SingularFit,

    /// A symbolic product escaped the multiplier basis required by the SOS
    /// decomposition.
    #[error("basis overflow: monomial {0} escapes the multiplier-basis product span")]
    BasisOverflow(String),

    /// A penalty gradient was requested outside the feasible branch.
    #[error("penalty gradient requested at an infeasible point")]
    InfeasiblePoint,

    /// The SDP has no strictly feasible point.
    #[error("SDP infeasible: {0}")]
    Infeasible(String),

    #[error("SDP did not converge within the iteration budget")]
    MaxIterations,

    /// Backtracking line search shrank the step below the underflow guard.
    #[error("line-search step underflow")]
    StepUnderflow,

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
