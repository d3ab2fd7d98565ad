//! Per-seed experiment execution and result persistence.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use lbc_core::env::{self, DeterministicMdp, EnvSpec, NoiseModel};
use lbc_core::fqi::fqi;
use lbc_core::ocp::{ocp_run, LinearReward};
use lbc_core::pipeline::{
    compute_spanner_fqi, end_to_end_fqi, end_to_end_ocp, LayerSummary, ParameterSchedule,
    Phase1Summary, RunReport,
};
use lbc_core::rng::RngStream;
use lbc_core::subspace_cover::subspace_cover;

use crate::config::{Algorithm, RunConfig};
use crate::json::to_stable_json;

/// One fully deterministic per-seed report (timing lives in the CSV only, so
/// report files are byte-identical across reruns).
#[derive(Serialize)]
struct SeedReport {
    env_spec: EnvSpec,
    seed: u64,
    #[serde(flatten)]
    run: RunReport,
}

struct SeedOutcome {
    seed: u64,
    suboptimality: Option<f64>,
    wall_time_ms: f64,
    phase1_dims: Vec<Option<usize>>,
}

pub fn run_all(config: &RunConfig, quiet: bool) -> Result<(), String> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", config.out_dir.display()))?;
    let mut outcomes = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let started = Instant::now();
        let report = run_seed(config, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        let path = config.out_dir.join(format!("report_seed{seed}.json"));
        let body = to_stable_json(&report).map_err(|e| e.to_string())?;
        std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        if !quiet {
            match report.run.suboptimality_exact {
                Some(gap) => println!("seed {seed}: suboptimality {gap:.6} ({wall_time_ms:.0} ms)"),
                None => println!("seed {seed}: done ({wall_time_ms:.0} ms)"),
            }
        }
        outcomes.push(SeedOutcome {
            seed,
            suboptimality: report.run.suboptimality_exact,
            wall_time_ms,
            phase1_dims: report
                .run
                .phase1
                .layers
                .iter()
                .map(|l| l.subspace_dim)
                .collect(),
        });
    }
    write_aggregate(&config.out_dir.join("aggregate.csv"), &outcomes)
}

fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedReport, String> {
    let mut env_spec = config.env.clone();
    env_spec.seed = seed;
    let mdp = env_spec.build().map_err(|e| e.to_string())?;
    let stream = RngStream::new(seed);
    let run = match config.algorithm {
        Algorithm::EndToEndOcp => {
            let (_, report) = end_to_end_ocp(&mdp, config.eps, config.delta, &config.knobs, stream)
                .map_err(|e| e.to_string())?;
            report
        }
        Algorithm::EndToEndFqi => {
            let (_, report) = end_to_end_fqi(&mdp, config.eps, config.delta, &config.knobs, stream)
                .map_err(|e| e.to_string())?;
            report
        }
        Algorithm::Ocp => run_ocp_direct(&mdp, config, stream).map_err(|e| e.to_string())?,
        Algorithm::Fqi => run_fqi_direct(&mdp, config, stream).map_err(|e| e.to_string())?,
        Algorithm::SpannerOnly => {
            let schedule = direct_schedule(&mdp, config)?;
            let phase1 = compute_spanner_fqi(&mdp, &schedule, stream).map_err(|e| e.to_string())?;
            RunReport {
                algorithm: "spanner_only".into(),
                schedule,
                knobs: config.knobs.clone(),
                phase1: phase1.summary,
                phase2: None,
                suboptimality_exact: None,
            }
        }
        Algorithm::SubspaceOnly => run_subspace_only(&mdp, config, stream)?,
    };
    Ok(SeedReport { env_spec, seed, run })
}

fn direct_schedule(mdp: &DeterministicMdp, config: &RunConfig) -> Result<ParameterSchedule, String> {
    ParameterSchedule::new(
        config.eps,
        config.delta,
        mdp.dim(),
        mdp.horizon(),
        config.knobs.mode,
        config.knobs.scale,
    )
    .map_err(|e| e.to_string())
}

fn require_noiseless(mdp: &DeterministicMdp, what: &str) -> Result<(), String> {
    if mdp.noise() != NoiseModel::Noiseless {
        return Err(format!(
            "{what} plans directly on the true reward means and needs a noiseless environment \
             (set env_reward_noise_scale=0); stochastic rewards go through end_to_end_*"
        ));
    }
    Ok(())
}

fn run_ocp_direct(
    mdp: &DeterministicMdp,
    config: &RunConfig,
    stream: RngStream,
) -> lbc_core::Result<RunReport> {
    require_noiseless(mdp, "algorithm=ocp").map_err(lbc_core::Error::InvalidInput)?;
    let schedule = direct_schedule(mdp, config).map_err(lbc_core::Error::InvalidInput)?;
    let rewards = LinearReward::from_true_means(mdp)?;
    let policy = ocp_run(mdp, &rewards, 1.0, config.knobs.t_ocp, stream)?;
    let gap = env::optimal_value(mdp) - env::exact_policy_value(mdp, &policy)?;
    Ok(RunReport {
        algorithm: "ocp".into(),
        schedule,
        knobs: config.knobs.clone(),
        phase1: Phase1Summary { layers: vec![], outlier_logs: None },
        phase2: None,
        suboptimality_exact: Some(gap),
    })
}

fn run_fqi_direct(
    mdp: &DeterministicMdp,
    config: &RunConfig,
    stream: RngStream,
) -> lbc_core::Result<RunReport> {
    require_noiseless(mdp, "algorithm=fqi").map_err(lbc_core::Error::InvalidInput)?;
    let schedule = direct_schedule(mdp, config).map_err(lbc_core::Error::InvalidInput)?;
    let mut covers = Vec::new();
    let mut layers = Vec::new();
    let mut logs = Vec::new();
    for layer in 0..mdp.horizon().saturating_sub(1) {
        let cover = subspace_cover(mdp, layer, &covers, &schedule, stream.substream(layer as u64))?;
        layers.push(LayerSummary {
            layer,
            subspace_dim: Some(cover.subspace.dim()),
            cover_size: Some(cover.policies.len()),
            spanner_size: 0,
            spanner_iterations: 0,
            lin_opt_calls: 0,
            vec_calls: 0,
            fqi_calls: Some(cover.fqi_calls),
        });
        logs.push(cover.outlier_log);
        covers.push(cover.policies);
    }
    let rewards = LinearReward::from_true_means(mdp)?;
    let policy = fqi(
        mdp,
        mdp.horizon() - 1,
        &rewards,
        &covers,
        schedule.n_fqi() as usize,
        stream.substream(u64::MAX - 1),
    )?;
    let gap = env::optimal_value(mdp) - env::exact_policy_value(mdp, &policy)?;
    Ok(RunReport {
        algorithm: "fqi".into(),
        schedule,
        knobs: config.knobs.clone(),
        phase1: Phase1Summary { layers, outlier_logs: Some(logs) },
        phase2: None,
        suboptimality_exact: Some(gap),
    })
}

fn run_subspace_only(
    mdp: &DeterministicMdp,
    config: &RunConfig,
    stream: RngStream,
) -> Result<RunReport, String> {
    let schedule = direct_schedule(mdp, config)?;
    let mut covers = Vec::new();
    let mut layers = Vec::new();
    let mut logs = Vec::new();
    for layer in 0..mdp.horizon() {
        let cover = subspace_cover(mdp, layer, &covers, &schedule, stream.substream(layer as u64))
            .map_err(|e| e.to_string())?;
        layers.push(LayerSummary {
            layer,
            subspace_dim: Some(cover.subspace.dim()),
            cover_size: Some(cover.policies.len()),
            spanner_size: 0,
            spanner_iterations: 0,
            lin_opt_calls: 0,
            vec_calls: 0,
            fqi_calls: Some(cover.fqi_calls),
        });
        logs.push(cover.outlier_log);
        covers.push(cover.policies);
    }
    Ok(RunReport {
        algorithm: "subspace_only".into(),
        schedule,
        knobs: config.knobs.clone(),
        phase1: Phase1Summary { layers, outlier_logs: Some(logs) },
        phase2: None,
        suboptimality_exact: None,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.11e}")
}

fn write_aggregate(path: &Path, outcomes: &[SeedOutcome]) -> Result<(), String> {
    let mut body = String::from("seed,suboptimality,wall_time_ms,phase1_dims\n");
    for o in outcomes {
        let sub = o.suboptimality.map(fmt_float).unwrap_or_default();
        let dims = o
            .phase1_dims
            .iter()
            .map(|d| d.map(|v| v.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(";");
        body.push_str(&format!("{},{},{},{}\n", o.seed, sub, fmt_float(o.wall_time_ms), dims));
    }
    let subs: Vec<f64> = outcomes.iter().filter_map(|o| o.suboptimality).collect();
    let times: Vec<f64> = outcomes.iter().map(|o| o.wall_time_ms).collect();
    let stats = |vals: &[f64]| -> (Option<f64>, Option<f64>) {
        if vals.is_empty() {
            return (None, None);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        if vals.len() < 2 {
            return (Some(mean), None);
        }
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        (Some(mean), Some(var.sqrt()))
    };
    let (sub_mean, sub_std) = stats(&subs);
    let (t_mean, t_std) = stats(&times);
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    body.push_str(&format!("mean,{},{},\n", opt(sub_mean), opt(t_mean)));
    body.push_str(&format!("std,{},{},\n", opt(sub_std), opt(t_std)));
    std::fs::write(path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Zeroes the last `k` feature coordinates of every layer (and the reward
/// parameters, to keep the model valid), which destroys linear Bellman
/// completeness — a negative control for `verify`.
pub fn truncate_features(mdp: &DeterministicMdp, k: usize) -> Result<DeterministicMdp, String> {
    let d = mdp.dim();
    if k >= d {
        return Err("cannot truncate all feature coordinates".into());
    }
    let feature_map = (0..mdp.horizon())
        .map(|h| {
            mdp.pairs()
                .map(|(x, a)| {
                    let mut phi = mdp.feature(h, x, a).clone();
                    for j in d - k..d {
                        phi[j] = 0.0;
                    }
                    phi
                })
                .collect()
        })
        .collect();
    let transition = (0..mdp.horizon().saturating_sub(1))
        .map(|h| mdp.pairs().map(|(x, a)| mdp.next_state(h, x, a)).collect())
        .collect();
    DeterministicMdp::new(
        mdp.horizon(),
        mdp.num_states(),
        mdp.num_actions(),
        d,
        transition,
        feature_map,
        vec![lbc_core::nalgebra::DVector::zeros(d); mdp.horizon()],
        NoiseModel::Noiseless,
        mdp.initial_dist().to_vec(),
    )
    .map_err(|e| e.to_string())
}
