//! Phase II: reward-parameter estimation by ridge regression on rollouts from
//! the spanner policies, followed by planning on the deterministic proxy
//! rewards — via optimistic constraint propagation (finite actions) or fitted
//! Q-iteration (argmax oracle only). Also houses the closed-form statistical
//! bound calculators ζ, C, and ε_stat used in run reports.

use nalgebra::{DMatrix, DVector};

use crate::env::{DeterministicMdp, Policy};
use crate::error::Error;
use crate::fqi::{fqi, LinearGreedyPolicy};
use crate::linalg::ridge_regression;
use crate::ocp::{ocp_run, LinearReward, OptimisticPolicy};
use crate::rng::RngStream;
use crate::rollout::batch_map;
use crate::Result;

/// Ridge estimates of the per-layer reward parameters, with the Gram matrices
/// V_ℓ = λI + Σ_ℓ retained for confidence-ellipsoid diagnostics.
#[derive(Debug, Clone)]
pub struct RewardEstimate {
    pub w_hats: Vec<DVector<f64>>,
    pub grams: Vec<DMatrix<f64>>,
    pub lambda: f64,
    pub n_per_policy: usize,
}

impl RewardEstimate {
    pub fn max_param_norm(&self) -> f64 {
        self.w_hats.iter().map(|w| w.norm()).fold(0.0, f64::max)
    }
}

/// Closed-form bound report: the ridge confidence radius ζ(δ), the parameter
/// norm cap C = √d + λ^{-1/2}ζ, and the uniform-convergence error ε_stat.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BoundReport {
    pub zeta: f64,
    pub big_c: f64,
    pub eps_stat: f64,
}

/// Evaluates ζ(δ) = √(λd) + √(2·log(H/δ) + d·log(1 + n/λ)),
/// C = √d + λ^{-1/2}·ζ(δ) (unless overridden, e.g. by an empirical max
/// estimate norm), and
/// ε_stat = C·√(8(d·log(1+2nC) + log(2Hd/δ))/n) + 2/n.
pub fn bound_report(
    d: usize,
    horizon: usize,
    n: usize,
    lambda: f64,
    delta: f64,
    big_c_override: Option<f64>,
) -> Result<BoundReport> {
    if d == 0 || horizon == 0 || n == 0 {
        return Err(Error::invalid("bound_report: d, H, n must be positive"));
    }
    if lambda <= 0.0 || !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::invalid("bound_report: need lambda > 0 and delta in (0,1)"));
    }
    let df = d as f64;
    let hf = horizon as f64;
    let nf = n as f64;
    let zeta = (lambda * df).sqrt()
        + (2.0 * (hf / delta).ln() + df * (1.0 + nf / lambda).ln()).sqrt();
    let big_c = big_c_override.unwrap_or(df.sqrt() + zeta / lambda.sqrt());
    let eps_stat = big_c
        * ((8.0 * (df * (1.0 + 2.0 * nf * big_c).ln() + (2.0 * hf * df / delta).ln())) / nf).sqrt()
        + 2.0 / nf;
    Ok(BoundReport { zeta, big_c, eps_stat })
}

/// For each layer ℓ, collects `n` rollouts to layer ℓ per policy in
/// `gamma[ℓ]` and ridge-regresses the realized rewards on the features.
/// Empty policy lists yield ŵ_ℓ = 0 with V_ℓ = λI.
pub fn estimate_rewards<P: Policy>(
    mdp: &DeterministicMdp,
    gamma: &[Vec<P>],
    n: usize,
    lambda: f64,
    stream: RngStream,
) -> Result<RewardEstimate> {
    if lambda <= 0.0 {
        return Err(Error::invalid("estimate_rewards: lambda must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("estimate_rewards: n must be positive"));
    }
    if gamma.len() != mdp.horizon() {
        return Err(Error::invalid("estimate_rewards: need one policy list per layer"));
    }
    let d = mdp.dim();
    let mut w_hats = Vec::with_capacity(mdp.horizon());
    let mut grams = Vec::with_capacity(mdp.horizon());
    for layer in 0..mdp.horizon() {
        let layer_stream = stream.substream(layer as u64);
        let mut samples: Vec<(usize, usize, f64)> = Vec::new();
        for (pi_idx, pi) in gamma[layer].iter().enumerate() {
            let mut batch = batch_map(n, layer_stream.substream(pi_idx as u64), |s| {
                let mut rng = s.rng();
                let mut x = mdp.sample_initial(&mut rng);
                for l in 0..layer {
                    let a = pi.act(mdp, l, x)?;
                    x = mdp.next_state(l, x, a);
                }
                let a = pi.act(mdp, layer, x)?;
                let r = mdp.sample_reward(layer, x, a, &mut rng);
                Ok((x, a, r))
            })?;
            samples.append(&mut batch);
        }
        let mut phi = DMatrix::zeros(samples.len(), d);
        let mut y = DVector::zeros(samples.len());
        for (row, &(x, a, r)) in samples.iter().enumerate() {
            phi.row_mut(row).copy_from(&mdp.feature(layer, x, a).transpose());
            y[row] = r;
        }
        let w_hat = ridge_regression(&phi, &y, lambda)?;
        let gram = DMatrix::identity(d, d) * lambda + phi.transpose() * &phi;
        w_hats.push(w_hat);
        grams.push(gram);
    }
    Ok(RewardEstimate { w_hats, grams, lambda, n_per_policy: n })
}

/// Builds the deterministic proxy reward r̂_ℓ = ŵ_ℓᵀφ_ℓ from an estimate.
fn proxy_reward(mdp: &DeterministicMdp, est: &RewardEstimate) -> Result<(LinearReward, f64)> {
    let c_hat = est.max_param_norm().max(1e-9);
    // |ŵᵀφ| ≤ ‖ŵ‖ ≤ Ĉ since features have norm at most 1.
    let reward = LinearReward::new(mdp, est.w_hats.clone(), c_hat)?;
    Ok((reward, c_hat))
}

/// Phase II with OCP planning: estimate rewards from the spanner policies,
/// then run optimistic constraint propagation on the proxy rewards with the
/// version-space cap H·Ĉ, where Ĉ = max_ℓ ‖ŵ_ℓ‖.
pub fn policy_opt_ocp<P: Policy>(
    mdp: &DeterministicMdp,
    gamma: &[Vec<P>],
    n: usize,
    lambda: f64,
    episodes: usize,
    stream: RngStream,
) -> Result<(OptimisticPolicy, RewardEstimate)> {
    let est = estimate_rewards(mdp, gamma, n, lambda, stream.substream(0))?;
    let (reward, c_hat) = proxy_reward(mdp, &est)?;
    let policy = ocp_run(mdp, &reward, c_hat, episodes, stream.substream(1))?;
    Ok((policy, est))
}

/// Phase II with FQI planning: estimate rewards from the spanner policies,
/// then one fitted Q-iteration pass over the full horizon using the coverage
/// policies for data collection.
pub fn policy_opt_fqi<P: Policy>(
    mdp: &DeterministicMdp,
    psi: &[Vec<LinearGreedyPolicy>],
    gamma: &[Vec<P>],
    n: usize,
    lambda: f64,
    stream: RngStream,
) -> Result<(LinearGreedyPolicy, RewardEstimate)> {
    let est = estimate_rewards(mdp, gamma, n, lambda, stream.substream(0))?;
    let (reward, _) = proxy_reward(mdp, &est)?;
    let policy = fqi(mdp, mdp.horizon() - 1, &reward, psi, n, stream.substream(1))?;
    Ok((policy, est))
}
