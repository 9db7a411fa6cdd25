//! Crate-wide error type. Variants carry the offending index so failures
//! point at the exact tensor entry that broke a contract.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("transition row (state {state}, joint action {joint_action}) sums to {sum:.17}, not 1")]
    RowNotStochastic {
        state: usize,
        joint_action: usize,
        sum: f64,
    },

    #[error("negative probability {value:.17} at {location}")]
    NegativeProbability { location: String, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("initial distribution has a zero-mass state; bound is undefined")]
    RhoHasZeroMass,

    #[error("policy is not a certified strict Nash equilibrium: {0}")]
    NotStrictNE(String),

    #[error("policy is not fully mixed: agent {agent}, state {state}, action {action} has mass {value:.3e}")]
    NotFullyMixed {
        agent: usize,
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("enumeration budget exceeded: {required} candidates > budget {budget}")]
    BudgetExceeded { required: u64, budget: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
