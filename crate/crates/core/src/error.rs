use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task:\n{0}")]
    InvalidTask(ValidationReport),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("non-finite value produced at state {state}, action {action}")]
    NumericFailure { state: usize, action: usize },

    #[error("policy entry at state {state}, action {action} is not strictly positive ({value})")]
    NonPositivePolicy {
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("non-finite potential at state {state}")]
    NonFinitePotential { state: usize },

    #[error("state-action pair ({state}, {action}) is not covered by the batch")]
    Uncovered { state: usize, action: usize },

    #[error(
        "input solution is not converged: Bellman residual {residual:e} exceeds {tolerance:e}"
    )]
    Unsolved { residual: f64, tolerance: f64 },

    #[error("Bellman residual {residual:e} exceeds tolerance {tolerance:e} at state {state}, action {action}")]
    ResidualTooLarge {
        residual: f64,
        tolerance: f64,
        state: usize,
        action: usize,
    },

    #[error("identity `{identity}` violated: residual {residual:e} > {tolerance:e}")]
    IdentityViolation {
        identity: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("tasks are not reward-varying: {0}")]
    NotRewardVarying(String),

    #[error("composition function produced a non-finite value at ({state}, {action})")]
    UnboundedComposition { state: usize, action: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
