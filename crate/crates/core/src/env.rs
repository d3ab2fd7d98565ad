//! Deterministic-transition MDP model, feature maps, synthetic environment
//! generators where linear Bellman completeness holds exactly, and an exact
//! dynamic-programming oracle for ground-truth values.
//!
//! States and actions are integer ids; the algorithms only ever touch features
//! and transitions, so nothing more general is needed. Layers are 0-based
//! (`0..H`) throughout the crate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::linalg::{self, Subspace};
use crate::rng::RngStream;
use crate::Result;

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A deterministic policy over integer states.
///
/// Implementations must be deterministic functions of `(layer, state)` so that
/// trajectories from a fixed initial state are unique.
pub trait Policy: Send + Sync {
    fn act(&self, mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize> {
        (**self).act(mdp, layer, state)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn act(&self, mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize> {
        (**self).act(mdp, layer, state)
    }
}

// ---------------------------------------------------------------------------
// MDP
// ---------------------------------------------------------------------------

/// Reward noise around the linear mean; realized rewards stay in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Realized reward equals the mean.
    Noiseless,
    /// Bernoulli(mean): realized reward in {0, 1}, 1/2-sub-Gaussian noise.
    Bernoulli,
    /// Gaussian noise truncated symmetrically around the mean (rejection
    /// sampled), so the mean is preserved and the reward stays in [0, 1].
    TruncatedGaussian { sigma: f64 },
}

/// An MDP with deterministic transitions, a stochastic initial state, and
/// stochastic rewards with per-layer linear means ⟨w*_h, φ_h(x, a)⟩.
#[derive(Debug, Clone)]
pub struct DeterministicMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    /// `transition[h][x * A + a]`, for h in 0..H-1.
    transition: Vec<Vec<usize>>,
    /// `feature_map[h][x * A + a]`, for h in 0..H.
    feature_map: Vec<Vec<DVector<f64>>>,
    /// w*_h per layer, with ‖w*_h‖ ≤ √d.
    reward_mean_params: Vec<DVector<f64>>,
    noise: NoiseModel,
    initial_dist: Vec<f64>,
}

impl DeterministicMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        dim: usize,
        transition: Vec<Vec<usize>>,
        feature_map: Vec<Vec<DVector<f64>>>,
        reward_mean_params: Vec<DVector<f64>>,
        noise: NoiseModel,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::invalid("mdp: all cardinalities must be positive"));
        }
        let pairs = num_states * num_actions;
        if transition.len() + 1 != horizon && !(horizon == 1 && transition.is_empty()) {
            return Err(Error::invalid("mdp: need H-1 transition tables"));
        }
        if feature_map.len() != horizon || reward_mean_params.len() != horizon {
            return Err(Error::invalid("mdp: need H feature maps and reward params"));
        }
        for table in &transition {
            if table.len() != pairs {
                return Err(Error::invalid("mdp: transition table size mismatch"));
            }
            if table.iter().any(|&s| s >= num_states) {
                return Err(Error::invalid("mdp: transition target out of range"));
            }
        }
        for (h, layer) in feature_map.iter().enumerate() {
            if layer.len() != pairs {
                return Err(Error::invalid("mdp: feature table size mismatch"));
            }
            for phi in layer {
                if phi.len() != dim {
                    return Err(Error::invalid("mdp: feature dimension mismatch"));
                }
                if phi.norm() > 1.0 + 1e-12 {
                    return Err(Error::invalid(format!(
                        "mdp: feature norm {} exceeds 1 at layer {h}",
                        phi.norm()
                    )));
                }
            }
        }
        for (h, w) in reward_mean_params.iter().enumerate() {
            if w.len() != dim {
                return Err(Error::invalid("mdp: reward parameter dimension mismatch"));
            }
            if w.norm() > (dim as f64).sqrt() + 1e-9 {
                return Err(Error::invalid("mdp: reward parameter norm exceeds sqrt(d)"));
            }
            for phi in &feature_map[h] {
                let mean = w.dot(phi);
                if !(-1e-9..=1.0 + 1e-9).contains(&mean) {
                    return Err(Error::invalid(format!(
                        "mdp: reward mean {mean} outside [0,1] at layer {h}"
                    )));
                }
            }
        }
        if initial_dist.len() != num_states {
            return Err(Error::invalid("mdp: initial distribution size mismatch"));
        }
        if initial_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("mdp: negative initial probability"));
        }
        let total: f64 = initial_dist.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mdp: initial distribution must sum to 1"));
        }
        Ok(DeterministicMdp {
            horizon,
            num_states,
            num_actions,
            dim,
            transition,
            feature_map,
            reward_mean_params,
            noise,
            initial_dist,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward_mean_params(&self) -> &[DVector<f64>] {
        &self.reward_mean_params
    }

    pub fn feature(&self, layer: usize, state: usize, action: usize) -> &DVector<f64> {
        &self.feature_map[layer][state * self.num_actions + action]
    }

    pub fn next_state(&self, layer: usize, state: usize, action: usize) -> usize {
        self.transition[layer][state * self.num_actions + action]
    }

    pub fn reward_mean(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.reward_mean_params[layer].dot(self.feature(layer, state, action))
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, &p) in self.initial_dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return x;
            }
        }
        self.num_states - 1
    }

    pub fn sample_reward(
        &self,
        layer: usize,
        state: usize,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let mean = self.reward_mean(layer, state, action);
        match self.noise {
            NoiseModel::Noiseless => mean,
            NoiseModel::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseModel::TruncatedGaussian { sigma } => {
                let c = mean.min(1.0 - mean).max(0.0);
                if c == 0.0 || sigma == 0.0 {
                    return mean;
                }
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let z = z * sigma;
                    if z.abs() <= c {
                        return mean + z;
                    }
                }
            }
        }
    }

    /// Iterates over all `(state, action)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states).flat_map(move |x| (0..self.num_actions).map(move |a| (x, a)))
    }
}

// ---------------------------------------------------------------------------
// EnvSpec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EnvKind {
    #[serde(rename = "rotated_tabular")]
    RotatedTabular,
    #[serde(rename = "hidden_subspace")]
    HiddenSubspace,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::RotatedTabular => "rotated_tabular",
            EnvKind::HiddenSubspace => "hidden_subspace",
        }
    }
}

/// Generator parameters for the synthetic environments. Identical specs
/// produce bit-identical MDPs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub d: usize,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    /// 0 disables reward noise; any positive value selects Bernoulli(mean)
    /// rewards (the default stochastic model).
    pub reward_noise_scale: f64,
    /// hidden_subspace only: initial probability mass on states whose
    /// reachable features stay inside the planted subspace.
    pub hidden_fraction: f64,
}

impl EnvSpec {
    pub fn build(&self) -> Result<DeterministicMdp> {
        match self.kind {
            EnvKind::RotatedTabular => make_rotated_tabular(self),
            EnvKind::HiddenSubspace => make_hidden_subspace(self),
        }
    }

    /// Flat `key=value` text serialization; exact round-trip.
    pub fn to_text(&self) -> String {
        format!(
            "kind={}\nd={}\nH={}\nnum_states={}\nnum_actions={}\nseed={}\nreward_noise_scale={}\nhidden_fraction={}\n",
            self.kind.as_str(),
            self.d,
            self.horizon,
            self.num_states,
            self.num_actions,
            self.seed,
            self.reward_noise_scale,
            self.hidden_fraction
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut d = None;
        let mut horizon = None;
        let mut num_states = None;
        let mut num_actions = None;
        let mut seed = None;
        let mut noise = None;
        let mut hidden = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            match key.trim() {
                "kind" => {
                    kind = Some(match value.trim() {
                        "rotated_tabular" => EnvKind::RotatedTabular,
                        "hidden_subspace" => EnvKind::HiddenSubspace,
                        other => return Err(Error::Parse(format!("unknown kind '{other}'"))),
                    })
                }
                "d" => d = Some(parse_usize(value.trim())?),
                "H" => horizon = Some(parse_usize(value.trim())?),
                "num_states" => num_states = Some(parse_usize(value.trim())?),
                "num_actions" => num_actions = Some(parse_usize(value.trim())?),
                "seed" => {
                    seed = Some(
                        value
                            .trim()
                            .parse::<u64>()
                            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
                    )
                }
                "reward_noise_scale" => noise = Some(parse_f64(value.trim())?),
                "hidden_fraction" => hidden = Some(parse_f64(value.trim())?),
                other => return Err(Error::Parse(format!("unknown key '{other}'"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("missing key '{name}'"));
        let spec = EnvSpec {
            kind: kind.ok_or_else(|| missing("kind"))?,
            d: d.ok_or_else(|| missing("d"))?,
            horizon: horizon.ok_or_else(|| missing("H"))?,
            num_states: num_states.ok_or_else(|| missing("num_states"))?,
            num_actions: num_actions.ok_or_else(|| missing("num_actions"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            reward_noise_scale: noise.ok_or_else(|| missing("reward_noise_scale"))?,
            hidden_fraction: hidden.ok_or_else(|| missing("hidden_fraction"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != self.num_states * self.num_actions {
            return Err(Error::invalid(
                "env spec: d must equal num_states * num_actions (one-hot before rotation)",
            ));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("env spec: H must be positive"));
        }
        if !(0.0..=0.5).contains(&self.reward_noise_scale) {
            return Err(Error::invalid("env spec: reward_noise_scale must be in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.hidden_fraction) {
            return Err(Error::invalid("env spec: hidden_fraction must be in [0, 1]"));
        }
        if self.kind == EnvKind::HiddenSubspace && self.num_states % 2 != 0 {
            return Err(Error::invalid("env spec: hidden_subspace needs an even state count"));
        }
        Ok(())
    }

    fn noise_model(&self) -> NoiseModel {
        if self.reward_noise_scale == 0.0 {
            NoiseModel::Noiseless
        } else {
            NoiseModel::Bernoulli
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Haar-ish random orthogonal matrix: QR of a standard normal matrix with the
/// sign fix from the R diagonal.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for i in 0..d {
        if r[(i, i)] < 0.0 {
            for row in 0..d {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    q
}

fn normalized_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + 0.95 * rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // Force an exact unit sum so downstream validation at 1e-12 holds.
    let s: f64 = w.iter().sum();
    let last = w.len() - 1;
    w[last] += 1.0 - s;
    w
}

/// Rotated one-hot tabular environment.
///
/// Features are `φ_h(x, a) = M_h e_(x,a)` for a random per-layer orthogonal
/// `M_h`, so any real function of `(x, a)` is linear in the features and
/// linear Bellman completeness holds exactly. Reward means are drawn uniform
/// in [0.1, 0.9] and encoded as `w*_h = M_h · means`.
pub fn make_rotated_tabular(spec: &EnvSpec) -> Result<DeterministicMdp> {
    spec.validate()?;
    if spec.kind != EnvKind::RotatedTabular {
        return Err(Error::invalid("make_rotated_tabular: wrong kind"));
    }
    build_rotated(spec, None)
}

/// Rotated tabular base where, with probability `hidden_fraction`, the initial
/// state leads (under every policy) only to features inside a planted subspace
/// of dimension d/2, and with the remaining probability the layer-1 feature is
/// already outside it.
///
/// The planted subspace at layer h is `M_h · span{e_(x,a) : x < S/2}`; use
/// [`reachable_feature_spans`] to recover it exactly for test assertions.
pub fn make_hidden_subspace(spec: &EnvSpec) -> Result<DeterministicMdp> {
    spec.validate()?;
    if spec.kind != EnvKind::HiddenSubspace {
        return Err(Error::invalid("make_hidden_subspace: wrong kind"));
    }
    build_rotated(spec, Some(spec.num_states / 2))
}

fn build_rotated(spec: &EnvSpec, inside_count: Option<usize>) -> Result<DeterministicMdp> {
    let d = spec.d;
    let s = spec.num_states;
    let a = spec.num_actions;
    let h = spec.horizon;
    let root = RngStream::new(spec.seed);

    let mut rotations = Vec::with_capacity(h);
    for layer in 0..h {
        let mut rng = root.substream(1000 + layer as u64).rng();
        rotations.push(random_orthogonal(d, &mut rng));
    }

    let mut transition = Vec::with_capacity(h.saturating_sub(1));
    for layer in 0..h.saturating_sub(1) {
        let mut rng = root.substream(2000 + layer as u64).rng();
        let table = match inside_count {
            None => (0..s * a).map(|_| rng.random_range(0..s)).collect::<Vec<_>>(),
            Some(inside) => sample_confined_transitions(s, a, inside, &mut rng)?,
        };
        transition.push(table);
    }

    let mut feature_map = Vec::with_capacity(h);
    for m in &rotations {
        let layer: Vec<DVector<f64>> = (0..s * a).map(|i| m.column(i).into_owned()).collect();
        feature_map.push(layer);
    }

    let mut reward_mean_params = Vec::with_capacity(h);
    for layer in 0..h {
        let mut rng = root.substream(3000 + layer as u64).rng();
        let mut means = DVector::from_fn(d, |_, _| 0.1 + 0.8 * rng.random::<f64>());
        // Uniform [0.1, 0.9] means already have norm ≤ 0.9√d; the shrink
        // toward 0.5 is a guard for other mean ranges.
        while means.norm() > (d as f64).sqrt() {
            means = means.map(|m| 0.5 + 0.5 * (m - 0.5));
        }
        reward_mean_params.push(&rotations[layer] * means);
    }

    let mut init_rng = root.substream(4000).rng();
    let initial_dist = match inside_count {
        None => normalized_weights(s, &mut init_rng),
        Some(inside) => {
            let hf = spec.hidden_fraction;
            let mut w = vec![0.0; s];
            if inside > 0 && hf > 0.0 {
                let inner = normalized_weights(inside, &mut init_rng);
                for (x, v) in inner.into_iter().enumerate() {
                    w[x] = hf * v;
                }
            }
            if s > inside && hf < 1.0 {
                let outer = normalized_weights(s - inside, &mut init_rng);
                for (i, v) in outer.into_iter().enumerate() {
                    w[inside + i] = (1.0 - hf) * v;
                }
            }
            let total: f64 = w.iter().sum();
            let last = s - 1;
            let first_positive = w.iter().position(|&p| p > 0.0).unwrap_or(last);
            let fix = 1.0 - total;
            if w[last] + fix >= 0.0 {
                w[last] += fix;
            } else {
                w[first_positive] += fix;
            }
            w
        }
    };

    DeterministicMdp::new(
        h,
        s,
        a,
        d,
        transition,
        feature_map,
        reward_mean_params,
        spec.noise_model(),
        initial_dist,
    )
}

/// Transition table where inside states stay inside and every inside state is
/// hit by some `(inside state, action)` pair, so the planted reachable span
/// keeps its full dimension at every layer.
fn sample_confined_transitions(
    s: usize,
    a: usize,
    inside: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    for _attempt in 0..1000 {
        let mut table = vec![0usize; s * a];
        let mut hit = vec![false; inside];
        for x in 0..s {
            for act in 0..a {
                let target = if x < inside {
                    rng.random_range(0..inside)
                } else {
                    rng.random_range(0..s)
                };
                if x < inside {
                    hit[target] = true;
                }
                table[x * a + act] = target;
            }
        }
        if hit.iter().all(|&b| b) {
            return Ok(table);
        }
    }
    Err(Error::Internal(
        "could not sample confined transitions covering all inside states".into(),
    ))
}

// ---------------------------------------------------------------------------
// LBC verification
// ---------------------------------------------------------------------------

/// Numerically certifies linear Bellman completeness.
///
/// For `num_probes` random θ (drawn in the unit ball, then rescaled so
/// `max |φ_{h+1}ᵀθ| ≤ 1`), fits the Bellman backup values over all `(x, a)` by
/// least squares against φ_h and returns the maximum residual. A value ≤ tol
/// certifies the property numerically; `tol` itself is the caller's pass
/// threshold and does not affect the computation.
pub fn verify_lbc(
    mdp: &DeterministicMdp,
    num_probes: usize,
    tol: f64,
    stream: RngStream,
) -> Result<f64> {
    if num_probes == 0 {
        return Err(Error::invalid("verify_lbc: num_probes must be positive"));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("verify_lbc: tol must be positive"));
    }
    let d = mdp.dim();
    let pairs = mdp.num_states() * mdp.num_actions();
    let mut max_residual = 0.0f64;
    for layer in 0..mdp.horizon().saturating_sub(1) {
        let mut phi_rows = DMatrix::zeros(pairs, d);
        for (row, (x, a)) in mdp.pairs().enumerate() {
            phi_rows.row_mut(row).copy_from(&mdp.feature(layer, x, a).transpose());
        }
        for probe in 0..num_probes {
            let mut rng = stream.substream((layer * num_probes + probe) as u64).rng();
            let mut theta = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let u: f64 = rng.random();
            let n = theta.norm();
            if n > 0.0 {
                theta *= u.powf(1.0 / d as f64) / n;
            }
            let mut max_abs = 0.0f64;
            for (x, a) in mdp.pairs() {
                max_abs = max_abs.max(mdp.feature(layer + 1, x, a).dot(&theta).abs());
            }
            if max_abs > 1.0 {
                theta /= max_abs;
            }
            let mut targets = DVector::zeros(pairs);
            for (row, (x, a)) in mdp.pairs().enumerate() {
                let next = mdp.next_state(layer, x, a);
                let mut best = f64::NEG_INFINITY;
                for ap in 0..mdp.num_actions() {
                    best = best.max(mdp.feature(layer + 1, next, ap).dot(&theta));
                }
                targets[row] = best;
            }
            let theta_hat = linalg::min_norm_lstsq(&phi_rows, &targets, linalg::SV_CUTOFF)?;
            let fitted = &phi_rows * &theta_hat;
            for row in 0..pairs {
                max_residual = max_residual.max((fitted[row] - targets[row]).abs());
            }
        }
    }
    Ok(max_residual)
}

// ---------------------------------------------------------------------------
// Exact oracles
// ---------------------------------------------------------------------------

/// Exact optimal values and greedy actions by backward induction over the
/// deterministic transition table, using exact reward means. Ties break to
/// the lowest action index.
pub fn dp_optimal(mdp: &DeterministicMdp) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let h = mdp.horizon();
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let mut values = vec![vec![0.0; s]; h];
    let mut greedy = vec![vec![0usize; s]; h];
    for layer in (0..h).rev() {
        for x in 0..s {
            let mut best_v = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for act in 0..a {
                let mut q = mdp.reward_mean(layer, x, act);
                if layer + 1 < h {
                    q += values[layer + 1][mdp.next_state(layer, x, act)];
                }
                if q > best_v {
                    best_v = q;
                    best_a = act;
                }
            }
            values[layer][x] = best_v;
            greedy[layer][x] = best_a;
        }
    }
    (values, greedy)
}

/// E[V*_1(x_1)] under the initial distribution.
pub fn optimal_value(mdp: &DeterministicMdp) -> f64 {
    let (values, _) = dp_optimal(mdp);
    mdp.initial_dist()
        .iter()
        .enumerate()
        .map(|(x, &p)| p * values[0][x])
        .sum()
}

/// Exact E[V_1^π(x_1)]: transitions and policies are deterministic, so the
/// value is a finite sum of reward means along per-initial-state trajectories.
pub fn exact_policy_value<P: Policy + ?Sized>(mdp: &DeterministicMdp, policy: &P) -> Result<f64> {
    let mut total = 0.0;
    for (x0, &p) in mdp.initial_dist().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut x = x0;
        let mut value = 0.0;
        for layer in 0..mdp.horizon() {
            let a = policy.act(mdp, layer, x)?;
            if a >= mdp.num_actions() {
                return Err(Error::PolicyUndefined { layer, state: x });
            }
            value += mdp.reward_mean(layer, x, a);
            if layer + 1 < mdp.horizon() {
                x = mdp.next_state(layer, x, a);
            }
        }
        total += p * value;
    }
    Ok(total)
}

/// The greedy policy from [`dp_optimal`], packaged for evaluation.
pub struct DpGreedyPolicy {
    greedy: Vec<Vec<usize>>,
}

impl DpGreedyPolicy {
    pub fn new(mdp: &DeterministicMdp) -> Self {
        let (_, greedy) = dp_optimal(mdp);
        DpGreedyPolicy { greedy }
    }
}

impl Policy for DpGreedyPolicy {
    fn act(&self, _mdp: &DeterministicMdp, layer: usize, state: usize) -> Result<usize> {
        self.greedy
            .get(layer)
            .and_then(|row| row.get(state))
            .copied()
            .ok_or(Error::PolicyUndefined { layer, state })
    }
}

/// Exact per-layer spans of the features reachable from the initial support,
/// computed by forward closure over the transition table. For hidden-subspace
/// environments with `hidden_fraction = 1` this is the planted subspace.
pub fn reachable_feature_spans(mdp: &DeterministicMdp) -> Result<Vec<Subspace>> {
    let mut reachable: Vec<bool> = mdp.initial_dist().iter().map(|&p| p > 0.0).collect();
    let mut spans = Vec::with_capacity(mdp.horizon());
    for layer in 0..mdp.horizon() {
        let mut vectors = Vec::new();
        for x in 0..mdp.num_states() {
            if !reachable[x] {
                continue;
            }
            for a in 0..mdp.num_actions() {
                vectors.push(mdp.feature(layer, x, a).clone());
            }
        }
        spans.push(linalg::orthonormal_basis(&vectors, 1e-10, mdp.dim())?);
        if layer + 1 < mdp.horizon() {
            let mut next = vec![false; mdp.num_states()];
            for x in 0..mdp.num_states() {
                if !reachable[x] {
                    continue;
                }
                for a in 0..mdp.num_actions() {
                    next[mdp.next_state(layer, x, a)] = true;
                }
            }
            reachable = next;
        }
    }
    Ok(spans)
}
