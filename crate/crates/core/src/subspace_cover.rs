//! Greedy per-layer discovery of the subspace where reachable features
//! concentrate, together with coverage policies witnessing each discovered
//! direction.
//!
//! The search alternates between (i) fitting policies that maximize reach
//! along directions orthogonal to the current subspace and testing how often
//! their rollout features fall outside it, and (ii) once an outlier direction
//! is detected frequently enough, distilling a single persistent direction
//! from the conditional distribution of projected features (accessed through
//! budgeted rejection sampling) and extending the subspace by it.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::env::{DeterministicMdp, Policy};
use crate::error::Error;
use crate::fqi::{fqi, LinearGreedyPolicy};
use crate::linalg::{
    orthogonal_complement_basis, orthonormal_basis, project_complement, subspace_contains,
    Subspace, MEMBERSHIP_TOL,
};
use crate::ocp::LinearReward;
use crate::pipeline::ParameterSchedule;
use crate::rng::RngStream;
use crate::rollout::{batch_map, batch_map_indexed};
use crate::Result;

/// Per-direction record of the outlier search, serializable into run reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OutlierRecord {
    /// Outer iteration (0-based).
    pub t: usize,
    /// Complement-basis index tried within the iteration (0-based).
    pub i: usize,
    pub n_outlier_minus: usize,
    pub n_outlier_plus: usize,
    /// The accepted direction when the detection threshold was crossed.
    pub accepted_direction: Option<Vec<f64>>,
}

/// Output of the per-layer cover search.
#[derive(Debug, Clone)]
pub struct CoverResult {
    pub subspace: Subspace,
    pub policies: Vec<LinearGreedyPolicy>,
    pub outlier_log: Vec<OutlierRecord>,
    pub fqi_calls: usize,
}

/// Returns the first accepted draw among at most `budget` attempts, else the
/// zero vector (the sentinel for an exhausted budget).
pub fn rejection_sampling(
    mut base_sampler: impl FnMut(&mut ChaCha8Rng) -> Result<DVector<f64>>,
    accept: impl Fn(&DVector<f64>) -> bool,
    budget: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    if budget == 0 {
        return Err(Error::invalid("rejection_sampling: budget must be positive"));
    }
    for _ in 0..budget {
        let x = base_sampler(rng)?;
        if accept(&x) {
            return Ok(x);
        }
    }
    Ok(DVector::zeros(dim))
}

/// Selects, among `n` anchor samples, the one most often contained in the
/// span of a fresh `n`-sample batch (`m` batches per anchor, ties to the
/// lowest index). Total draws from the sampler: n + m·n².
pub fn compute_outlier_direction<S>(
    sampler: &S,
    n: usize,
    m: usize,
    dim: usize,
    stream: RngStream,
) -> Result<DVector<f64>>
where
    S: Fn(RngStream) -> Result<DVector<f64>> + Sync,
{
    if n == 0 || m == 0 {
        return Err(Error::invalid("compute_outlier_direction: n and m must be positive"));
    }
    let anchors: Vec<DVector<f64>> = batch_map(n, stream.substream(0), sampler)?;
    let anchors_ref = &anchors;
    let hats: Vec<f64> = batch_map_indexed(n, stream.substream(1), |i, anchor_stream| {
        let mut hits = 0usize;
        for j in 0..m {
            let draw_stream = anchor_stream.substream(j as u64);
            let batch: Vec<DVector<f64>> = (0..n)
                .map(|k| sampler(draw_stream.substream(k as u64)))
                .collect::<Result<_>>()?;
            let span = orthonormal_basis(&batch, MEMBERSHIP_TOL, dim)?;
            if subspace_contains(&span, &anchors_ref[i], MEMBERSHIP_TOL) {
                hits += 1;
            }
        }
        Ok(hits as f64 / m as f64)
    })?;
    let mut best = 0usize;
    for (i, &p) in hats.iter().enumerate() {
        if p > hats[best] {
            best = i;
        }
    }
    Ok(anchors[best].clone())
}

/// Rolls `policy` to `layer` and returns the raw feature there. Only the
/// initial state consumes randomness.
fn rollout_feature<P: Policy + ?Sized>(
    mdp: &DeterministicMdp,
    policy: &P,
    layer: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let mut x = mdp.sample_initial(rng);
    for l in 0..layer {
        let a = policy.act(mdp, l, x)?;
        x = mdp.next_state(l, x, a);
    }
    let a = policy.act(mdp, layer, x)?;
    Ok(mdp.feature(layer, x, a).clone())
}

/// Greedy subspace identification at `layer`, using `prior_covers` for the
/// FQI exploration subroutine at earlier layers.
///
/// Iterates up to d+1 rounds. Each round fits, for every orthonormal basis
/// direction θ of the current subspace's complement, reward-seeking policies
/// for ±φᵀθ, counts how often their rollout features leave the subspace over
/// `n_test` trials, and on detection (count strictly above n_test·ε/(4Hd))
/// adds the winning policy, extracts one persistent outlier direction from
/// the rejection-sampled conditional projected-feature distribution, and
/// extends the subspace. Returns when a full round detects nothing.
pub fn subspace_cover(
    mdp: &DeterministicMdp,
    layer: usize,
    prior_covers: &[Vec<LinearGreedyPolicy>],
    schedule: &ParameterSchedule,
    stream: RngStream,
) -> Result<CoverResult> {
    if layer >= mdp.horizon() {
        return Err(Error::invalid("subspace_cover: layer out of range"));
    }
    let d = mdp.dim();
    let h_total = mdp.horizon() as f64;
    let n_test = schedule.n_test as usize;
    let threshold = n_test as f64 * schedule.eps / (4.0 * h_total * d as f64);

    let mut subspace = Subspace::empty(d);
    let mut policies: Vec<LinearGreedyPolicy> = Vec::new();
    let mut outlier_log: Vec<OutlierRecord> = Vec::new();
    let mut fqi_calls = 0usize;

    for t in 0..=d {
        let remaining = d - subspace.dim();
        if remaining == 0 {
            break;
        }
        let complement = orthogonal_complement_basis(&subspace);
        let mut detected = false;
        for i in 0..remaining {
            let theta = complement.basis()[i].clone();
            let step_stream = stream.substream((t * (d + 1) + i) as u64);
            let reward_plus = LinearReward::from_layer_direction(mdp, layer, &theta)?;
            let reward_minus = LinearReward::from_layer_direction(mdp, layer, &(-&theta))?;
            let pi_plus = fqi(
                mdp,
                layer,
                &reward_plus,
                prior_covers,
                schedule.n_fqi() as usize,
                step_stream.substream(0),
            )?;
            let pi_minus = fqi(
                mdp,
                layer,
                &reward_minus,
                prior_covers,
                schedule.n_fqi() as usize,
                step_stream.substream(1),
            )?;
            fqi_calls += 2;

            let count_outliers = |pi: &LinearGreedyPolicy, salt: u64| -> Result<usize> {
                let flags = batch_map(n_test, step_stream.substream(salt), |s| {
                    let mut rng = s.rng();
                    let phi = rollout_feature(mdp, pi, layer, &mut rng)?;
                    Ok(!subspace_contains(&subspace, &phi, MEMBERSHIP_TOL))
                })?;
                Ok(flags.into_iter().filter(|&b| b).count())
            };
            let n_outlier_minus = count_outliers(&pi_minus, 2)?;
            let n_outlier_plus = count_outliers(&pi_plus, 3)?;
            let (pi, n_outlier) = if n_outlier_plus >= n_outlier_minus {
                (pi_plus, n_outlier_plus)
            } else {
                (pi_minus, n_outlier_minus)
            };

            if (n_outlier as f64) > threshold {
                policies.push(pi.clone());
                // Conditional projected-feature distribution via budgeted
                // rejection sampling; the accept test is the same membership
                // test used for outlier counting (features have norm ≤ 1).
                let current = subspace.clone();
                let pi_ref = &pi;
                let current_ref = &current;
                let sampler = move |s: RngStream| -> Result<DVector<f64>> {
                    let mut rng = s.rng();
                    rejection_sampling(
                        |r| {
                            let phi = rollout_feature(mdp, pi_ref, layer, r)?;
                            Ok(project_complement(current_ref, &phi))
                        },
                        |v| v.norm() > MEMBERSHIP_TOL,
                        schedule.n_reject as usize,
                        d,
                        &mut rng,
                    )
                };
                let direction = compute_outlier_direction(
                    &sampler,
                    schedule.n_samp as usize,
                    schedule.m_boost as usize,
                    d,
                    step_stream.substream(4),
                )?;
                subspace = crate::linalg::span_extend(&subspace, &direction);
                outlier_log.push(OutlierRecord {
                    t,
                    i,
                    n_outlier_minus,
                    n_outlier_plus,
                    accepted_direction: Some(direction.iter().copied().collect()),
                });
                detected = true;
                break;
            }
            outlier_log.push(OutlierRecord {
                t,
                i,
                n_outlier_minus,
                n_outlier_plus,
                accepted_direction: None,
            });
            if i + 1 == remaining {
                return Ok(CoverResult { subspace, policies, outlier_log, fqi_calls });
            }
        }
        if !detected {
            break;
        }
    }
    Ok(CoverResult { subspace, policies, outlier_log, fqi_calls })
}
