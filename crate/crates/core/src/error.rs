//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input (dimension mismatches, out-of-range parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A constraint set with no feasible point. Under deterministic linear
    /// rewards this indicates a bug (realizability is an invariant), so
    /// callers abort rather than recover.
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    /// A policy was asked to act at a layer/state it is not defined on.
    #[error("policy undefined at layer {layer}, state {state}")]
    PolicyUndefined { layer: usize, state: usize },

    /// An internal invariant failed (e.g. an oracle violating its contract).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
