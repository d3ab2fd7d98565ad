//! Fitted Q-iteration with exact minimum-norm least squares.
//!
//! Deterministic transitions make the regression targets noiseless: given the
//! next-layer Q estimate, the Bellman backup at each sampled pair is an exact
//! linear function of the features, so the minimum-norm solution interpolates
//! the data and is correct on every covered direction.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::env::{DeterministicMdp, Policy};
use crate::error::Error;
use crate::linalg::{min_norm_lstsq, SV_CUTOFF};
use crate::ocp::LinearReward;
use crate::rng::RngStream;
use crate::rollout::batch_map;
use crate::Result;

/// Greedy policy for per-layer linear scores θ_ℓᵀφ_ℓ(x, a); ties break to the
/// lowest action index. Defined on layers `0..params.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGreedyPolicy {
    params: Vec<DVector<f64>>,
}

impl LinearGreedyPolicy {
    pub fn new(params: Vec<DVector<f64>>) -> Self {
        LinearGreedyPolicy { params }
    }

    pub fn params(&self) -> &[DVector<f64>] {
        &self.params
    }

    pub fn layers(&self) -> usize {
        self.params.len()
    }

    /// Random standard-normal parameters; handy as a generic test policy.
    pub fn random(dim: usize, layers: usize, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        let params = (0..layers)
            .map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        LinearGreedyPolicy { params }
    }
}

impl Policy for LinearGreedyPolicy {
    fn act(&self, mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize> {
        let theta = self
            .params
            .get(layer)
            .ok_or(Error::PolicyUndefined { layer, state })?;
        Ok(argmax_action(theta, mdp, layer, state))
    }
}

/// Exact enumeration argmax of θᵀφ_ℓ(x, a) over actions, lowest index on ties.
pub fn argmax_action(theta: &DVector<f64>, mdp: &DeterministicMdp, layer: usize, state: usize) -> usize {
    let mut best_a = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for a in 0..mdp.num_actions() {
        let v = theta.dot(mdp.feature(layer, state, a));
        if v > best_v {
            best_v = v;
            best_a = a;
        }
    }
    best_a
}

/// One FQI regression sample: the pair visited at the regression layer and
/// the (deterministic) successor state.
struct FqiSample {
    state: usize,
    action: usize,
    next_state: usize,
}

/// Rolls `policy` to `layer` and records `(x_ℓ, a_ℓ, x_{ℓ+1})`. Only the
/// initial state consumes randomness; no rewards are sampled.
fn sample_fqi_tuple<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    layer: usize,
    stream: RngStream,
) -> Result<FqiSample> {
    let mut rng = stream.rng();
    let mut x = mdp.sample_initial(&mut rng);
    for l in 0..layer {
        let a = policy.act(mdp, l, x)?;
        x = mdp.next_state(l, x, a);
    }
    let a = policy.act(mdp, layer, x)?;
    Ok(FqiSample { state: x, action: a, next_state: mdp.next_state(layer, x, a) })
}

/// Fitted Q-iteration toward target layer `h` (0-based).
///
/// The layer-`h` action-value is the given reward itself; the backward loop
/// over ℓ = h-1..0 collects `n` rollouts per cover policy in `cover[ℓ]`,
/// regresses the backup targets `r_ℓ(x_ℓ, a_ℓ) + max_a Q̂_{ℓ+1}(x_{ℓ+1}, a)`
/// onto φ_ℓ by minimum-norm least squares, and returns the greedy policy for
/// all layers `0..=h`. Empty cover lists yield a zero parameter for that
/// layer.
pub fn fqi(
    mdp: &DeterministicMdp,
    h: usize,
    rewards: &LinearReward,
    cover: &[Vec<LinearGreedyPolicy>],
    n: usize,
    stream: RngStream,
) -> Result<LinearGreedyPolicy> {
    if h >= mdp.horizon() {
        return Err(Error::invalid("fqi: target layer out of range"));
    }
    if cover.len() < h {
        return Err(Error::invalid(format!(
            "fqi: need cover lists for layers 0..{h}, got {}",
            cover.len()
        )));
    }
    let d = mdp.dim();
    let mut params: Vec<DVector<f64>> = vec![DVector::zeros(d); h + 1];
    params[h] = rewards.params()[h].clone();

    for layer in (0..h).rev() {
        let layer_stream = stream.substream(layer as u64);
        let mut rows: Vec<FqiSample> = Vec::new();
        for (pi_idx, pi) in cover[layer].iter().enumerate() {
            let mut batch = batch_map(n, layer_stream.substream(pi_idx as u64), |s| {
                sample_fqi_tuple(mdp, pi, layer, s)
            })?;
            rows.append(&mut batch);
        }
        if rows.is_empty() {
            continue; // keep θ_ℓ = 0, the min-norm solution of an empty system
        }
        let next_theta = params[layer + 1].clone();
        let mut phi = DMatrix::zeros(rows.len(), d);
        let mut y = DVector::zeros(rows.len());
        for (i, sample) in rows.iter().enumerate() {
            phi.row_mut(i)
                .copy_from(&mdp.feature(layer, sample.state, sample.action).transpose());
            let mut backup = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions() {
                backup = backup.max(next_theta.dot(mdp.feature(layer + 1, sample.next_state, a)));
            }
            y[i] = rewards.value(mdp, layer, sample.state, sample.action) + backup;
        }
        params[layer] = min_norm_lstsq(&phi, &y, SV_CUTOFF)?;
    }
    Ok(LinearGreedyPolicy { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{self, EnvKind, EnvSpec};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn det_env(seed: u64) -> DeterministicMdp {
        EnvSpec {
            kind: EnvKind::RotatedTabular,
            d: 8,
            horizon: 2,
            num_states: 4,
            num_actions: 2,
            seed,
            reward_noise_scale: 0.0,
            hidden_fraction: 0.0,
        }
        .build()
        .unwrap()
    }

    /// Cover policies that play a fixed action everywhere: θ_ℓ is the sum of
    /// that action's features, which scores 1 for the action and 0 otherwise
    /// under a rotated one-hot feature map.
    pub(crate) fn constant_action_cover(mdp: &DeterministicMdp, layers: usize) -> Vec<Vec<LinearGreedyPolicy>> {
        let mut per_layer = Vec::new();
        for _ in 0..layers {
            let mut list = Vec::new();
            for a in 0..mdp.num_actions() {
                let params: Vec<_> = (0..mdp.horizon())
                    .map(|h| {
                        let mut t = nalgebra::DVector::zeros(mdp.dim());
                        for x in 0..mdp.num_states() {
                            t += mdp.feature(h, x, a);
                        }
                        t
                    })
                    .collect();
                list.push(LinearGreedyPolicy::new(params));
            }
            per_layer.push(list);
        }
        per_layer
    }

    #[test]
    fn argmax_with_zero_scores_returns_lowest_index() {
        let mdp = det_env(1);
        let theta = nalgebra::DVector::zeros(mdp.dim());
        for x in 0..mdp.num_states() {
            assert_eq!(argmax_action(&theta, &mdp, 0, x), 0);
        }
    }

    #[test]
    fn argmax_follows_aligned_feature() {
        let mdp = det_env(2);
        let theta = mdp.feature(0, 2, 1).clone();
        assert_eq!(argmax_action(&theta, &mdp, 0, 2), 1);
    }

    #[test]
    fn argmax_matches_bruteforce_scan() {
        let mdp = det_env(3);
        let mut rng = RngStream::new(4).rng();
        for _ in 0..20 {
            let theta =
                nalgebra::DVector::from_fn(mdp.dim(), |_, _| rng.random::<f64>() - 0.5);
            for x in 0..mdp.num_states() {
                let fast = argmax_action(&theta, &mdp, 1, x);
                let mut best = 0;
                for a in 0..mdp.num_actions() {
                    if theta.dot(mdp.feature(1, x, a)) > theta.dot(mdp.feature(1, x, best)) {
                        best = a;
                    }
                }
                assert_eq!(fast, best);
            }
        }
    }

    #[test]
    fn layer_zero_target_is_reward_greedy() {
        let mdp = det_env(5);
        let rewards = LinearReward::from_true_means(&mdp).unwrap();
        let pi = fqi(&mdp, 0, &rewards, &[], 1, RngStream::new(1)).unwrap();
        for x in 0..mdp.num_states() {
            let a = pi.act(&mdp, 0, x).unwrap();
            for other in 0..mdp.num_actions() {
                assert!(mdp.reward_mean(0, x, a) >= mdp.reward_mean(0, x, other) - 1e-12);
            }
        }
    }

    #[test]
    fn full_cover_reaches_dp_optimum_per_state() {
        let mdp = det_env(7);
        let rewards = LinearReward::from_true_means(&mdp).unwrap();
        let cover = constant_action_cover(&mdp, 1);
        let pi = fqi(&mdp, 1, &rewards, &cover, 200, RngStream::new(2)).unwrap();
        let (values, _) = env::dp_optimal(&mdp);
        for x0 in 0..mdp.num_states() {
            // Walk the FQI policy from x0 and compare to V*.
            let mut x = x0;
            let mut total = 0.0;
            for layer in 0..mdp.horizon() {
                let a = pi.act(&mdp, layer, x).unwrap();
                total += mdp.reward_mean(layer, x, a);
                if layer + 1 < mdp.horizon() {
                    x = mdp.next_state(layer, x, a);
                }
            }
            assert_abs_diff_eq!(total, values[0][x0], epsilon = 1e-9);
        }
    }

    #[test]
    fn training_rows_are_interpolated() {
        // Noiseless targets: the regression must fit every training tuple.
        let mdp = det_env(11);
        let rewards = LinearReward::from_true_means(&mdp).unwrap();
        let cover = constant_action_cover(&mdp, 1);
        let pi = fqi(&mdp, 1, &rewards, &cover, 100, RngStream::new(3)).unwrap();
        let theta0 = &pi.params()[0];
        let theta1 = &pi.params()[1];
        // Every (x, a) visited under the cover (all of them here) must satisfy
        // the backup equation exactly.
        for (x, a) in mdp.pairs() {
            let next = mdp.next_state(0, x, a);
            let mut backup = f64::NEG_INFINITY;
            for ap in 0..mdp.num_actions() {
                backup = backup.max(theta1.dot(mdp.feature(1, next, ap)));
            }
            let target = mdp.reward_mean(0, x, a) + backup;
            assert_abs_diff_eq!(theta0.dot(mdp.feature(0, x, a)), target, epsilon = 1e-9);
        }
    }

    #[test]
    fn coverage_implies_layer_reward_optimality() {
        // With a layer-h-only linear reward and full coverage, the FQI policy
        // maximizes φ_hᵀw from every initial state (checked by brute force
        // over all action sequences).
        let mdp = det_env(13);
        let mut rng = RngStream::new(6).rng();
        let w1 = nalgebra::DVector::from_fn(mdp.dim(), |_, _| rng.random::<f64>() - 0.5);
        let bound = mdp
            .pairs()
            .map(|(x, a)| w1.dot(mdp.feature(1, x, a)).abs())
            .fold(0.0f64, f64::max);
        let rewards = LinearReward::new(
            &mdp,
            vec![nalgebra::DVector::zeros(mdp.dim()), w1.clone()],
            bound + 1e-9,
        )
        .unwrap();
        let cover = constant_action_cover(&mdp, 1);
        let pi = fqi(&mdp, 1, &rewards, &cover, 200, RngStream::new(4)).unwrap();
        for x0 in 0..mdp.num_states() {
            let mut best = f64::NEG_INFINITY;
            for a0 in 0..mdp.num_actions() {
                for a1 in 0..mdp.num_actions() {
                    let x1 = mdp.next_state(0, x0, a0);
                    best = best.max(w1.dot(mdp.feature(1, x1, a1)));
                }
            }
            let a0 = pi.act(&mdp, 0, x0).unwrap();
            let x1 = mdp.next_state(0, x0, a0);
            let a1 = pi.act(&mdp, 1, x1).unwrap();
            let achieved = w1.dot(mdp.feature(1, x1, a1));
            assert_abs_diff_eq!(achieved, best, epsilon = 1e-9);
        }
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_parameters() {
        let mdp = det_env(17);
        let rewards = LinearReward::from_true_means(&mdp).unwrap();
        let cover = constant_action_cover(&mdp, 1);
        let a = fqi(&mdp, 1, &rewards, &cover, 50, RngStream::new(5)).unwrap();
        let b = fqi(&mdp, 1, &rewards, &cover, 50, RngStream::new(5)).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn policy_errors_beyond_defined_layers() {
        let mdp = det_env(19);
        let pi = LinearGreedyPolicy::random(mdp.dim(), 1, RngStream::new(6));
        assert!(pi.act(&mdp, 1, 0).is_err());
    }
}
