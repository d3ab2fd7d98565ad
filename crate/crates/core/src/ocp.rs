//! Optimistic Constraint Propagation for finite-action planning with
//! deterministic linear rewards, plus the online-to-batch evaluation loop that
//! turns its episode policies into a single PAC output policy.
//!
//! Each layer keeps a version space of Q-function parameters as a
//! [`ConstraintSet`]. Episodes act optimistically (argmax over actions of the
//! supremum over the version space), then intersect the observed upper/lower
//! backup interval into the constraint set on the visited feature direction.
//! With stochastic rewards this module is never invoked directly; Phase II
//! first estimates reward parameters and plans on deterministic proxies.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DVector;

use crate::env::{DeterministicMdp, Policy};
use crate::error::Error;
use crate::linalg::{lp_max_linear, ConstraintSet};
use crate::rng::RngStream;
use crate::Result;

/// Widening applied to each side of a propagated interval, absorbing the
/// linear-maximization solver tolerance so approximate sup/inf cannot empty a
/// feasible set.
pub const CONSTRAINT_WIDENING: f64 = 1e-6;

/// Slack for argmax tie-breaking over approximate optimistic values: an action
/// must beat the incumbent by more than this to replace it, so near-ties keep
/// the lowest index.
const TIE_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Linear rewards
// ---------------------------------------------------------------------------

/// Deterministic linear reward functions r_h(x, a) = w_hᵀ φ_h(x, a), one
/// parameter vector per layer, with a verified sup-norm bound.
#[derive(Debug, Clone)]
pub struct LinearReward {
    ws: Vec<DVector<f64>>,
    bound: f64,
}

impl LinearReward {
    /// Builds the reward and checks `max |w_hᵀφ_h(x,a)| ≤ bound` by
    /// enumeration over all pairs.
    pub fn new(mdp: &DeterministicMdp, ws: Vec<DVector<f64>>, bound: f64) -> Result<Self> {
        if ws.len() != mdp.horizon() {
            return Err(Error::invalid("LinearReward: need one parameter per layer"));
        }
        if bound <= 0.0 {
            return Err(Error::invalid("LinearReward: bound must be positive"));
        }
        for (h, w) in ws.iter().enumerate() {
            if w.len() != mdp.dim() {
                return Err(Error::invalid("LinearReward: parameter dimension mismatch"));
            }
            for (x, a) in mdp.pairs() {
                let v = w.dot(mdp.feature(h, x, a));
                if v.abs() > bound + 1e-9 {
                    return Err(Error::invalid(format!(
                        "LinearReward: |r_{h}({x},{a})| = {} exceeds bound {bound}",
                        v.abs()
                    )));
                }
            }
        }
        Ok(LinearReward { ws, bound })
    }

    /// The MDP's own mean rewards as a deterministic linear reward.
    pub fn from_true_means(mdp: &DeterministicMdp) -> Result<Self> {
        LinearReward::new(mdp, mdp.reward_mean_params().to_vec(), 1.0)
    }

    /// Intrinsic reward `r_layer(x, a) = θᵀφ_layer(x, a)` with zero reward at
    /// every other layer; the bound is computed by enumeration.
    pub fn from_layer_direction(
        mdp: &DeterministicMdp,
        layer: usize,
        theta: &DVector<f64>,
    ) -> Result<Self> {
        if layer >= mdp.horizon() {
            return Err(Error::invalid("from_layer_direction: layer out of range"));
        }
        let mut ws = vec![DVector::zeros(mdp.dim()); mdp.horizon()];
        ws[layer] = theta.clone();
        let bound = mdp
            .pairs()
            .map(|(x, a)| theta.dot(mdp.feature(layer, x, a)).abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        LinearReward::new(mdp, ws, bound)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn params(&self) -> &[DVector<f64>] {
        &self.ws
    }

    pub fn value(&self, mdp: &DeterministicMdp, layer: usize, state: usize, action: usize) -> f64 {
        self.ws[layer].dot(mdp.feature(layer, state, action))
    }
}

// ---------------------------------------------------------------------------
// Optimistic policy
// ---------------------------------------------------------------------------

/// Greedy policy with respect to the optimistic value over a constraint-set
/// snapshot. The snapshot (not a tabulated action map) is stored because the
/// policy must act at states never visited during training; each action query
/// solves one linear maximization per action, memoized per `(layer, state)`.
pub struct OptimisticPolicy {
    snapshots: Vec<ConstraintSet>,
    cache: Mutex<HashMap<(usize, usize), usize>>,
}

impl OptimisticPolicy {
    pub fn new(snapshots: Vec<ConstraintSet>) -> Self {
        OptimisticPolicy { snapshots, cache: Mutex::new(HashMap::new()) }
    }

    pub fn snapshots(&self) -> &[ConstraintSet] {
        &self.snapshots
    }
}

impl Clone for OptimisticPolicy {
    fn clone(&self) -> Self {
        OptimisticPolicy {
            snapshots: self.snapshots.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl std::fmt::Debug for OptimisticPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimisticPolicy")
            .field("layers", &self.snapshots.len())
            .finish()
    }
}

impl Policy for OptimisticPolicy {
    fn act(&self, mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize> {
        if layer >= self.snapshots.len() {
            return Err(Error::PolicyUndefined { layer, state });
        }
        if let Some(&a) = self.cache.lock().expect("cache lock").get(&(layer, state)) {
            return Ok(a);
        }
        let (action, _) = optimistic_value(&self.snapshots, mdp, layer, state)?;
        self.cache.lock().expect("cache lock").insert((layer, state), action);
        Ok(action)
    }
}

/// Enumerates actions, solving one linear maximization each, and returns the
/// argmax action (lowest index on near-ties) with its optimistic value.
pub fn optimistic_value(
    constraints: &[ConstraintSet],
    mdp: &DeterministicMdp,
    layer: usize,
    state: usize,
) -> Result<(usize, f64)> {
    let set = constraints
        .get(layer)
        .ok_or_else(|| Error::invalid("optimistic_value: layer out of range"))?;
    let mut best_a = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for a in 0..mdp.num_actions() {
        let (v, _) = lp_max_linear(set, mdp.feature(layer, state, a))?;
        if v > best_v + TIE_TOL {
            best_v = v;
            best_a = a;
        }
    }
    Ok((best_a, best_v))
}

// ---------------------------------------------------------------------------
// OCP
// ---------------------------------------------------------------------------

/// Per-layer version space for Q-parameters with `|Q_h(x,a)| ≤ cap` enforced
/// exactly on every enumerated feature direction, plus a ball guard
/// `‖θ‖ ≤ √d · cap` for directions outside the feature span.
///
/// A plain ball of radius `cap` would exclude the true Q-parameter: with a
/// complete rotated one-hot basis its norm is the l2 norm of all Q-values,
/// which exceeds the sup-norm cap by up to √d.
fn initial_version_space(mdp: &DeterministicMdp, cap: f64) -> Result<Vec<ConstraintSet>> {
    let d = mdp.dim();
    let mut sets = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut set = ConstraintSet::new(d, (d as f64).sqrt() * cap)?;
        for (x, a) in mdp.pairs() {
            set.add_interval(mdp.feature(h, x, a).clone(), -cap, cap)?;
        }
        sets.push(set);
    }
    Ok(sets)
}

/// Mean of `Σ_h r(h, x_h, a_h)` over `n` rollouts of `policy`; the rewards are
/// the given deterministic functions, so only the initial state is random.
fn empirical_linear_value<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    rewards: &LinearReward,
    n: usize,
    stream: RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..n {
        let mut rng = stream.substream(i as u64).rng();
        let mut x = mdp.sample_initial(&mut rng);
        for layer in 0..mdp.horizon() {
            let a = policy.act(mdp, layer, x)?;
            total += rewards.value(mdp, layer, x, a);
            if layer + 1 < mdp.horizon() {
                x = mdp.next_state(layer, x, a);
            }
        }
    }
    Ok(total / n as f64)
}

/// Runs `episodes` rounds of optimistic constraint propagation under the given
/// deterministic linear rewards (bounded by `r_bound`), then evaluates every
/// episode policy with `episodes` Monte Carlo rollouts and returns the best.
///
/// The evaluation rollouts share one random stream across candidates (common
/// random numbers), so with deterministic rewards the pointwise-dominant
/// optimal policy also wins empirically.
pub fn ocp_run(
    mdp: &DeterministicMdp,
    rewards: &LinearReward,
    r_bound: f64,
    episodes: usize,
    stream: RngStream,
) -> Result<OptimisticPolicy> {
    ocp_run_observed(mdp, rewards, r_bound, episodes, stream, |_, _| {})
}

/// [`ocp_run`] with a per-episode observer over the constraint sets, used by
/// diagnostics and invariant tests.
pub fn ocp_run_observed(
    mdp: &DeterministicMdp,
    rewards: &LinearReward,
    r_bound: f64,
    episodes: usize,
    stream: RngStream,
    mut observer: impl FnMut(usize, &[ConstraintSet]),
) -> Result<OptimisticPolicy> {
    if episodes == 0 {
        return Err(Error::invalid("ocp_run: need at least one episode"));
    }
    if rewards.bound() > r_bound + 1e-9 {
        return Err(Error::invalid("ocp_run: rewards exceed declared bound"));
    }
    let horizon = mdp.horizon();
    let cap = horizon as f64 * r_bound;
    let mut sets = initial_version_space(mdp, cap)?;
    let mut episode_policies: Vec<OptimisticPolicy> = Vec::with_capacity(episodes);

    for j in 0..episodes {
        episode_policies.push(OptimisticPolicy::new(sets.clone()));
        let mut rng = stream.substream(j as u64).rng();
        let mut x = mdp.sample_initial(&mut rng);
        for h in 0..horizon {
            let (a, _) = optimistic_value(&sets, mdp, h, x)?;
            let r = rewards.value(mdp, h, x, a);
            let (upper, lower) = if h + 1 < horizon {
                let next = mdp.next_state(h, x, a);
                let mut up = f64::NEG_INFINITY;
                let mut low = f64::NEG_INFINITY;
                for ap in 0..mdp.num_actions() {
                    let phi = mdp.feature(h + 1, next, ap);
                    let (sup, _) = lp_max_linear(&sets[h + 1], phi)?;
                    let (neg_inf, _) = lp_max_linear(&sets[h + 1], &(-phi))?;
                    up = up.max(sup);
                    low = low.max(-neg_inf);
                }
                (r + up, r + low)
            } else {
                (r, r)
            };
            sets[h]
                .add_interval(
                    mdp.feature(h, x, a).clone(),
                    lower - CONSTRAINT_WIDENING,
                    upper + CONSTRAINT_WIDENING,
                )
                .map_err(|e| match e {
                    Error::Infeasible(msg) => Error::Infeasible(format!(
                        "episode {j}, layer {h}: {msg} (realizability violated)"
                    )),
                    other => other,
                })?;
            if h + 1 < horizon {
                x = mdp.next_state(h, x, a);
            }
        }
        observer(j, &sets);
    }

    // Online-to-batch: evaluate all episode policies, keep the best. Strictly
    // greater comparison keeps the earliest policy on ties.
    let eval_stream = stream.substream(u64::MAX / 2);
    let values: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            episode_policies
                .par_iter()
                .map(|p| empirical_linear_value(mdp, p, rewards, episodes, eval_stream))
                .collect::<Result<Vec<f64>>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            episode_policies
                .iter()
                .map(|p| empirical_linear_value(mdp, p, rewards, episodes, eval_stream))
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(episode_policies.swap_remove(best))
}
