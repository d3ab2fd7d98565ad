//! Exploration and planning algorithms for linear Bellman complete MDPs with
//! deterministic transitions, stochastic initial states, and stochastic rewards.
//!
//! The crate is organized around a two-phase pipeline:
//!
//! - **Phase I (exploration)** builds per-layer policy covers. [`subspace_cover`]
//!   greedily discovers the subspace where reachable features concentrate, and
//!   [`spanner`] computes an approximate barycentric spanner over mean feature
//!   vectors using pluggable linear-optimization and vector-estimation oracles.
//!   Linear optimization is realized either by optimistic constraint propagation
//!   ([`ocp`], finite actions) or fitted Q-iteration ([`fqi`], argmax oracle only).
//! - **Phase II (exploitation)** estimates reward parameters by ridge regression
//!   on rollouts from the spanner policies and plans on the resulting
//!   deterministic proxy rewards ([`policy_opt`]).
//!
//! [`mod@env`] provides synthetic environments where linear Bellman completeness
//! holds exactly, together with an exact dynamic-programming oracle, so that
//! suboptimality of learned policies can be measured rather than estimated.
//! [`pipeline`] wires both phases together and houses the sample-size schedule.
//!
//! With the default `parallel` feature, Monte Carlo rollout batches run on a
//! rayon thread pool. Results are bit-identical with and without the feature:
//! every batch item derives its own counter-based RNG stream ([`rng::RngStream`])
//! and aggregation order is fixed by item index, not by scheduling.

pub mod env;
pub mod error;
pub mod fqi;
pub mod linalg;
pub mod ocp;
pub mod pipeline;
pub mod policy_opt;
pub mod rng;
pub mod rollout;
pub mod spanner;
pub mod subspace_cover;

pub use error::Error;

// Re-exported so downstream crates share one linear-algebra version.
pub use nalgebra;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
