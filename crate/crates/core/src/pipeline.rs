//! Phase-I drivers, the end-to-end two-phase procedures, and the sample-size
//! schedule.
//!
//! Theory mode evaluates the closed-form schedule exactly. Those counts are
//! astronomically large even for tiny instances, so practical mode keeps the
//! structural dependence on d, H, ε, and the confidence logs but drops the
//! universal prefactor constants and multiplies every sample count by a
//! user-chosen scale in (0, 1], flooring at small structural minima. Run
//! reports always record which mode produced the counts.

use nalgebra::DVector;

use crate::env::{self, DeterministicMdp};
use crate::error::Error;
use crate::fqi::{fqi, LinearGreedyPolicy};
use crate::linalg::Subspace;
use crate::ocp::{ocp_run, LinearReward, OptimisticPolicy};
use crate::policy_opt::{bound_report, policy_opt_fqi, policy_opt_ocp, BoundReport, RewardEstimate};
use crate::rng::RngStream;
use crate::rollout::vec_eval;
use crate::spanner::{robust_spanner, SpannerResult};
use crate::subspace_cover::{subspace_cover, CoverResult, OutlierRecord};
use crate::Result;

// ---------------------------------------------------------------------------
// Parameter schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScheduleMode {
    #[serde(rename = "theory")]
    Theory,
    #[serde(rename = "practical")]
    Practical,
}

/// All sample-size and tolerance knobs used by Phase I.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ParameterSchedule {
    pub eps: f64,
    pub delta: f64,
    pub d: usize,
    pub horizon: usize,
    pub mode: ScheduleMode,
    pub scale: f64,
    pub eps_rob: f64,
    pub n_iter: u64,
    pub delta_prime: f64,
    pub n_veceval: u64,
    pub n_test: u64,
    pub n_samp: u64,
    pub m_boost: u64,
    pub n_reject: u64,
    pub n_span: u64,
    pub n_cover: u64,
}

impl ParameterSchedule {
    /// Evaluates the schedule for accuracy `eps` and confidence `delta`.
    ///
    /// Theory mode reproduces the closed forms exactly (the one unspecified
    /// universal constant, in n_veceval, is taken as 1). Practical mode drops
    /// the numeric prefactors, scales each count by `scale`, and floors at 1
    /// (n_samp at d+1, so the span test stays meaningful).
    pub fn new(
        eps: f64,
        delta: f64,
        d: usize,
        horizon: usize,
        mode: ScheduleMode,
        scale: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) || eps == 0.0 {
            return Err(Error::invalid("schedule: eps must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&delta) || delta == 0.0 {
            return Err(Error::invalid("schedule: delta must be in (0, 1)"));
        }
        if !(0.0 < scale && scale <= 1.0) {
            return Err(Error::invalid("schedule: scale must be in (0, 1]"));
        }
        if d == 0 || horizon == 0 {
            return Err(Error::invalid("schedule: d and H must be positive"));
        }
        let df = d as f64;
        let hf = horizon as f64;
        let eps_rob = eps / (192.0 * df * hf * hf);
        let n_iter = d as u64
            + ((df / 2.0) * (100.0 * df / (eps_rob * eps_rob)).log2()).ceil() as u64;
        let delta_prime = delta / (8.0 * hf * df * df * n_iter as f64);

        let (pre, s) = match mode {
            ScheduleMode::Theory => ([128.0, 512.0, 2048.0, 8.0, 16.0, 32.0, 8.0], 1.0),
            ScheduleMode::Practical => ([1.0; 7], scale),
        };
        let count = |v: f64| (v.ceil().max(1.0)) as u64;

        let n_veceval = count(s * hf.powi(4) * df * df / (eps * eps) * (1.0 / delta_prime).ln());
        let n_test = count(s * pre[0] * hf * hf * df * df * (4.0 / delta_prime).ln() / (eps * eps));
        let n_samp_raw = count(s * pre[1] * df * df * (256.0 * df / delta_prime).ln());
        let n_samp = match mode {
            ScheduleMode::Theory => n_samp_raw,
            ScheduleMode::Practical => n_samp_raw.max(d as u64 + 1),
        };
        let m_boost = count(s * pre[2] * df * df * (4.0 / delta_prime).ln());
        let total_draws = n_samp as f64 + (n_samp as f64) * (n_samp as f64) * m_boost as f64;
        let n_reject = count(s * pre[3] * hf * df * (total_draws / delta_prime).ln() / eps);
        let n_span = count(
            s * (pre[4] * hf * df * ((4.0 * df).ln() * n_samp as f64).sqrt() / eps
                + pre[5] * hf * df * (4.0 * df).ln() / eps
                + pre[6] * hf * df * n_samp as f64 / eps),
        );
        let n_cover = ((hf * hf * df / delta_prime).log2().ceil().max(1.0)) as u64 * n_span;

        Ok(ParameterSchedule {
            eps,
            delta,
            d,
            horizon,
            mode,
            scale,
            eps_rob,
            n_iter,
            delta_prime,
            n_veceval,
            n_test,
            n_samp,
            m_boost,
            n_reject,
            n_span,
            n_cover,
        })
    }

    /// The FQI rollout count; identical to the cover count by construction.
    pub fn n_fqi(&self) -> u64 {
        self.n_cover
    }
}

// ---------------------------------------------------------------------------
// Knobs and reports
// ---------------------------------------------------------------------------

/// Empirical stand-ins for the "sufficiently large universal constants" of
/// the end-to-end procedures, plus the schedule mode/scale.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Knobs {
    /// Phase-I accuracy inflation divisor constant.
    pub c0: f64,
    /// Phase-II sample-size constant (OCP route).
    pub c1: f64,
    /// Phase-II sample-size constant (FQI route).
    pub c2: f64,
    /// Episode count for every OCP invocation.
    pub t_ocp: usize,
    /// When set, overrides the Phase-II per-policy sample size entirely.
    pub n_override: Option<u64>,
    pub mode: ScheduleMode,
    pub scale: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            c0: 1.0,
            c1: 1.0,
            c2: 1.0,
            t_ocp: 200,
            n_override: None,
            mode: ScheduleMode::Practical,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub subspace_dim: Option<usize>,
    pub cover_size: Option<usize>,
    pub spanner_size: usize,
    pub spanner_iterations: usize,
    pub lin_opt_calls: usize,
    pub vec_calls: usize,
    pub fqi_calls: Option<usize>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Phase1Summary {
    pub layers: Vec<LayerSummary>,
    pub outlier_logs: Option<Vec<Vec<OutlierRecord>>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Phase2Summary {
    pub w_hat_norms: Vec<f64>,
    pub n_per_policy: u64,
    pub lambda: f64,
    pub bound: BoundReport,
}

/// Deterministic portion of a pipeline run report; callers attach seed,
/// environment, and timing information.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub algorithm: String,
    pub schedule: ParameterSchedule,
    pub knobs: Knobs,
    pub phase1: Phase1Summary,
    pub phase2: Option<Phase2Summary>,
    pub suboptimality_exact: Option<f64>,
}

/// Phase-I output of the FQI route: per-layer subspaces, coverage policies,
/// and spanner policies, with diagnostics.
#[derive(Debug, Clone)]
pub struct PhaseOneOutput {
    pub subspaces: Vec<Subspace>,
    pub covers: Vec<Vec<LinearGreedyPolicy>>,
    pub spanners: Vec<Vec<LinearGreedyPolicy>>,
    pub summary: Phase1Summary,
}

// ---------------------------------------------------------------------------
// Phase-I drivers
// ---------------------------------------------------------------------------

fn spanner_layer_summary<Z>(
    layer: usize,
    result: &SpannerResult<Z>,
    cover: Option<&CoverResult>,
) -> LayerSummary {
    LayerSummary {
        layer,
        subspace_dim: cover.map(|c| c.subspace.dim()),
        cover_size: cover.map(|c| c.policies.len()),
        spanner_size: result.items.len(),
        spanner_iterations: result.iterations_used,
        lin_opt_calls: result.lin_opt_calls,
        vec_calls: result.vec_calls,
        fqi_calls: cover.map(|c| c.fqi_calls),
    }
}

/// Phase I for finite action spaces: per layer, a barycentric spanner over
/// mean features with OCP (on normalized intrinsic rewards) as the linear
/// optimization oracle and Monte Carlo feature estimation as the vector
/// oracle.
pub fn compute_spanner_ocp(
    mdp: &DeterministicMdp,
    episodes: usize,
    schedule: &ParameterSchedule,
    stream: RngStream,
) -> Result<(Vec<Vec<OptimisticPolicy>>, Phase1Summary)> {
    let d = mdp.dim();
    let mut gammas = Vec::with_capacity(mdp.horizon());
    let mut layers = Vec::with_capacity(mdp.horizon());
    for layer in 0..mdp.horizon() {
        let layer_stream = stream.substream(layer as u64);
        let mut call_counter = 0u64;
        let lin_opt = |theta: &DVector<f64>| -> Result<OptimisticPolicy> {
            call_counter += 1;
            let norm = theta.norm();
            if norm == 0.0 {
                return Err(Error::invalid("lin_opt: zero direction"));
            }
            let reward = LinearReward::from_layer_direction(mdp, layer, &(theta / norm))?;
            ocp_run(mdp, &reward, 1.0, episodes, layer_stream.substream(call_counter))
        };
        let mut vec_counter = 0u64;
        let vec_oracle = |pi: &OptimisticPolicy| -> Result<DVector<f64>> {
            vec_counter += 1;
            vec_eval(
                mdp,
                layer,
                pi,
                schedule.n_veceval as usize,
                layer_stream.substream(u64::MAX - vec_counter),
            )
        };
        let result = robust_spanner(d, lin_opt, vec_oracle, 2.0, schedule.eps / 2.0)?;
        layers.push(spanner_layer_summary(layer, &result, None));
        gammas.push(result.items);
    }
    Ok((gammas, Phase1Summary { layers, outlier_logs: None }))
}

/// Phase I for large action spaces: per layer, first the subspace cover, then
/// a barycentric spanner with FQI (on unnormalized intrinsic rewards) as the
/// linear optimization oracle.
pub fn compute_spanner_fqi(
    mdp: &DeterministicMdp,
    schedule: &ParameterSchedule,
    stream: RngStream,
) -> Result<PhaseOneOutput> {
    let d = mdp.dim();
    let mut subspaces = Vec::with_capacity(mdp.horizon());
    let mut covers: Vec<Vec<LinearGreedyPolicy>> = Vec::with_capacity(mdp.horizon());
    let mut spanners = Vec::with_capacity(mdp.horizon());
    let mut layers = Vec::with_capacity(mdp.horizon());
    let mut outlier_logs = Vec::with_capacity(mdp.horizon());
    for layer in 0..mdp.horizon() {
        let layer_stream = stream.substream(layer as u64);
        let cover = subspace_cover(mdp, layer, &covers, schedule, layer_stream.substream(0))?;
        let mut call_counter = 0u64;
        let covers_ref = &covers;
        let lin_opt = |theta: &DVector<f64>| -> Result<LinearGreedyPolicy> {
            call_counter += 1;
            let reward = LinearReward::from_layer_direction(mdp, layer, theta)?;
            fqi(
                mdp,
                layer,
                &reward,
                covers_ref,
                schedule.n_fqi() as usize,
                layer_stream.substream(1_000_000 + call_counter),
            )
        };
        let mut vec_counter = 0u64;
        let vec_oracle = |pi: &LinearGreedyPolicy| -> Result<DVector<f64>> {
            vec_counter += 1;
            vec_eval(
                mdp,
                layer,
                pi,
                schedule.n_veceval as usize,
                layer_stream.substream(u64::MAX - vec_counter),
            )
        };
        let result = robust_spanner(d, lin_opt, vec_oracle, 2.0, schedule.eps_rob)?;
        layers.push(spanner_layer_summary(layer, &result, Some(&cover)));
        outlier_logs.push(cover.outlier_log.clone());
        subspaces.push(cover.subspace.clone());
        covers.push(cover.policies);
        spanners.push(result.items);
    }
    Ok(PhaseOneOutput {
        subspaces,
        covers,
        spanners,
        summary: Phase1Summary { layers, outlier_logs: Some(outlier_logs) },
    })
}

// ---------------------------------------------------------------------------
// End-to-end procedures
// ---------------------------------------------------------------------------

fn phase2_summary(
    mdp: &DeterministicMdp,
    est: &RewardEstimate,
    n: u64,
    delta: f64,
) -> Result<Phase2Summary> {
    let bound = bound_report(
        mdp.dim(),
        mdp.horizon(),
        n as usize,
        est.lambda,
        delta,
        Some(est.max_param_norm().max(1e-9)),
    )?;
    Ok(Phase2Summary {
        w_hat_norms: est.w_hats.iter().map(|w| w.norm()).collect(),
        n_per_policy: n,
        lambda: est.lambda,
        bound,
    })
}

/// Two-phase procedure for finite action spaces: spanner construction with
/// OCP oracles at accuracy ε′ = ε/(c₀·d·H·L), then reward estimation and OCP
/// planning with n = c₁·d²H²L²/ε² samples per spanner policy (λ = 1), where
/// L = d + log(dH/(δε)).
pub fn end_to_end_ocp(
    mdp: &DeterministicMdp,
    eps: f64,
    delta: f64,
    knobs: &Knobs,
    stream: RngStream,
) -> Result<(OptimisticPolicy, RunReport)> {
    let d = mdp.dim() as f64;
    let hf = mdp.horizon() as f64;
    let l = d + (d * hf / (delta * eps)).ln();
    let eps_prime = (eps / (knobs.c0 * d * hf * l)).min(0.999_999);
    let schedule = ParameterSchedule::new(
        eps_prime,
        delta / 2.0,
        mdp.dim(),
        mdp.horizon(),
        knobs.mode,
        knobs.scale,
    )?;
    let (gammas, phase1) = compute_spanner_ocp(mdp, knobs.t_ocp, &schedule, stream.substream(1))?;
    let n = knobs
        .n_override
        .unwrap_or((knobs.c1 * d * d * hf * hf * l * l / (eps * eps)).ceil() as u64)
        .max(1);
    let (policy, est) =
        policy_opt_ocp(mdp, &gammas, n as usize, 1.0, knobs.t_ocp, stream.substream(2))?;
    let suboptimality = env::optimal_value(mdp) - env::exact_policy_value(mdp, &policy)?;
    let report = RunReport {
        algorithm: "end_to_end_ocp".into(),
        schedule,
        knobs: knobs.clone(),
        phase1,
        phase2: Some(phase2_summary(mdp, &est, n, delta)?),
        suboptimality_exact: Some(suboptimality),
    };
    Ok((policy, report))
}

/// Two-phase procedure for large action spaces: subspace covers and spanners
/// at accuracy ε′ = ε/(c₀·d²H²L), then reward estimation and FQI planning
/// with n = max{n_cover, c₂·d⁴H²L²/ε²} samples (λ = 1), where
/// L = max{1, log(dH/(δε))}.
pub fn end_to_end_fqi(
    mdp: &DeterministicMdp,
    eps: f64,
    delta: f64,
    knobs: &Knobs,
    stream: RngStream,
) -> Result<(LinearGreedyPolicy, RunReport)> {
    let d = mdp.dim() as f64;
    let hf = mdp.horizon() as f64;
    let l = (d * hf / (delta * eps)).ln().max(1.0);
    let eps_prime = (eps / (knobs.c0 * d * d * hf * hf * l)).min(0.999_999);
    let schedule = ParameterSchedule::new(
        eps_prime,
        delta / 4.0,
        mdp.dim(),
        mdp.horizon(),
        knobs.mode,
        knobs.scale,
    )?;
    let phase1 = compute_spanner_fqi(mdp, &schedule, stream.substream(1))?;
    let n = knobs
        .n_override
        .unwrap_or_else(|| {
            schedule
                .n_cover
                .max((knobs.c2 * d.powi(4) * hf * hf * l * l / (eps * eps)).ceil() as u64)
        })
        .max(1);
    let (policy, est) = policy_opt_fqi(
        mdp,
        &phase1.covers,
        &phase1.spanners,
        n as usize,
        1.0,
        stream.substream(2),
    )?;
    let suboptimality = env::optimal_value(mdp) - env::exact_policy_value(mdp, &policy)?;
    let report = RunReport {
        algorithm: "end_to_end_fqi".into(),
        schedule,
        knobs: knobs.clone(),
        phase1: phase1.summary,
        phase2: Some(phase2_summary(mdp, &est, n, delta)?),
        suboptimality_exact: Some(suboptimality),
    };
    Ok((policy, report))
}
