//! Trajectory sampling, Monte Carlo feature-expectation estimation, and Monte
//! Carlo policy evaluation.
//!
//! Batches run on rayon when the `parallel` feature is enabled. Item `i` of a
//! batch always draws from `stream.substream(i)` and results are reduced in
//! index order, so outputs are bit-identical regardless of scheduling — the
//! sequential fallback produces exactly the same numbers.

use nalgebra::DVector;

use crate::env::{DeterministicMdp, Policy};
use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One recorded step of a rollout.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub feature: DVector<f64>,
}

/// A rollout through layers `0..=last`, with the successor of the last step
/// when one exists (needed for regression targets at the next layer).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub end_state: Option<usize>,
}

impl Trajectory {
    pub fn last_step(&self) -> &Step {
        self.steps.last().expect("trajectory has at least one step")
    }
}

/// Rolls the deterministic dynamics under `policy` from a sampled initial
/// state through layer `up_to` (0-based, inclusive), sampling rewards at each
/// step.
pub fn sample_trajectory<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    up_to: usize,
    stream: RngStream,
) -> Result<Trajectory> {
    if up_to >= mdp.horizon() {
        return Err(Error::invalid(format!(
            "sample_trajectory: layer {up_to} out of range for horizon {}",
            mdp.horizon()
        )));
    }
    let mut rng = stream.rng();
    let mut state = mdp.sample_initial(&mut rng);
    let mut steps = Vec::with_capacity(up_to + 1);
    for layer in 0..=up_to {
        let action = policy.act(mdp, layer, state)?;
        if action >= mdp.num_actions() {
            return Err(Error::PolicyUndefined { layer, state });
        }
        let reward = mdp.sample_reward(layer, state, action, &mut rng);
        steps.push(Step {
            state,
            action,
            reward,
            feature: mdp.feature(layer, state, action).clone(),
        });
        if layer + 1 < mdp.horizon() {
            state = mdp.next_state(layer, state, action);
        }
    }
    let end_state = if up_to + 1 < mdp.horizon() { Some(state) } else { None };
    Ok(Trajectory { steps, end_state })
}

/// Maps `f` over `n` batch items, item `i` seeded by `stream.substream(i)`.
/// Runs on rayon under the `parallel` feature; output order is by index
/// either way.
pub fn batch_map<T, F>(n: usize, stream: RngStream, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RngStream) -> Result<T> + Sync,
{
    batch_map_indexed(n, stream, |_, s| f(s))
}

/// [`batch_map`] variant whose closure also receives the item index.
pub fn batch_map_indexed<T, F>(n: usize, stream: RngStream, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, RngStream) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .map(|i| f(i, stream.substream(i as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(|i| f(i, stream.substream(i as u64))).collect()
    }
}

/// Always-sequential variant of [`batch_map`]; exists so benchmarks can
/// compare the two paths within one build.
pub fn batch_map_serial<T, F>(n: usize, stream: RngStream, f: F) -> Result<Vec<T>>
where
    F: Fn(RngStream) -> Result<T>,
{
    (0..n).map(|i| f(stream.substream(i as u64))).collect()
}

/// Collects `n` independent trajectories under `policy` through layer `up_to`.
pub fn batch_trajectories<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    up_to: usize,
    n: usize,
    stream: RngStream,
) -> Result<Vec<Trajectory>> {
    batch_map(n, stream, |s| sample_trajectory(mdp, policy, up_to, s))
}

/// Monte Carlo estimate of E^π[φ_h(x_h, a_h)] from `n` fresh rollouts.
pub fn vec_eval<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    layer: usize,
    policy: &P,
    n: usize,
    stream: RngStream,
) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::invalid("vec_eval: n must be positive"));
    }
    let features = batch_map(n, stream, |s| {
        let traj = sample_trajectory(mdp, policy, layer, s)?;
        Ok(traj.last_step().feature.clone())
    })?;
    let mut mean = DVector::zeros(mdp.dim());
    for phi in &features {
        mean += phi;
    }
    Ok(mean / n as f64)
}

/// Monte Carlo estimate of E[V_1^π]: mean over `n` trajectories of the summed
/// realized rewards.
pub fn mc_policy_value<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    n: usize,
    stream: RngStream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("mc_policy_value: n must be positive"));
    }
    let sums = batch_map(n, stream, |s| {
        let traj = sample_trajectory(mdp, policy, mdp.horizon() - 1, s)?;
        Ok(traj.steps.iter().map(|st| st.reward).sum::<f64>())
    })?;
    Ok(sums.iter().sum::<f64>() / n as f64)
}

/// Exact E^π[φ_h(x_h, a_h)] by enumeration over the initial support; the
/// trajectory from each initial state is unique.
pub fn exact_feature_expectation<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    layer: usize,
    policy: &P,
) -> Result<DVector<f64>> {
    if layer >= mdp.horizon() {
        return Err(Error::invalid("exact_feature_expectation: layer out of range"));
    }
    let mut mean = DVector::zeros(mdp.dim());
    for (x0, &p) in mdp.initial_dist().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut x = x0;
        for l in 0..=layer {
            let a = policy.act(mdp, l, x)?;
            if l == layer {
                mean += mdp.feature(l, x, a) * p;
            } else {
                x = mdp.next_state(l, x, a);
            }
        }
    }
    Ok(mean)
}
