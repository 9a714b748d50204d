use thiserror::Error;

use crate::model::SystemState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid state (k={k}, d={d}): need k >= 2 with d = 0, or k >= 1 with d >= 2")]
    InvalidState { k: i64, d: i64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("state ({}, {}) lies outside the truncated space", .0.k(), .0.d())]
    OutOfSpace(SystemState),

    #[error("policy covers {got} states but the space has {expected}")]
    PolicySizeMismatch { expected: usize, got: usize },

    #[error(
        "relative value iteration did not converge in {iterations} iterations (span {span:e})"
    )]
    NotConverged { iterations: usize, span: f64 },

    #[error("no unique stationary distribution: {0}")]
    DegenerateChain(String),

    #[error("stationary solve residual {residual:e} exceeds {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("multiplier bracketing failed: {0}")]
    Bracketing(String),

    #[error("no feasible thresholds in bounds; minimum forwarding rate found is {min_rate}")]
    NoFeasibleThresholds { min_rate: f64 },

    #[error("special-case precondition violated: {0}")]
    SpecialCase(&'static str),
}
