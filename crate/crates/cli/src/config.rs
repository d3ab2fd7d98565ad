//! Flat key=value experiment configs.
//!
//! ```text
//! algorithm=end_to_end_fqi
//! env_kind=hidden_subspace
//! env_num_states=4
//! env_num_actions=4
//! env_H=2
//! env_reward_noise_scale=0.25
//! env_hidden_fraction=1.0
//! eps=0.15
//! delta=0.1
//! mode=practical
//! scale=0.02
//! n_override=3000
//! seeds=1,2,3
//! out_dir=out
//! ```
//!
//! The per-run seed doubles as the environment seed, so distinct seeds draw
//! distinct environments from the same family. An `env_file=path` key may
//! replace the inline `env_*` keys.

use std::path::PathBuf;

use lbc_core::env::{EnvKind, EnvSpec};
use lbc_core::pipeline::{Knobs, ScheduleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ocp,
    Fqi,
    EndToEndOcp,
    EndToEndFqi,
    SpannerOnly,
    SubspaceOnly,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Environment family; its seed field is overridden per run seed.
    pub env: EnvSpec,
    pub eps: f64,
    pub delta: f64,
    pub knobs: Knobs,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

pub fn parse_mode(s: &str) -> Result<ScheduleMode, String> {
    match s {
        "theory" => Ok(ScheduleMode::Theory),
        "practical" => Ok(ScheduleMode::Practical),
        other => Err(format!("unknown mode '{other}' (expected theory|practical)")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut algorithm = None;
        let mut env_file: Option<String> = None;
        let mut env_kind = None;
        let mut env_states = None;
        let mut env_actions = None;
        let mut env_h = None;
        let mut env_noise = 0.0f64;
        let mut env_hidden = 0.0f64;
        let mut eps = None;
        let mut delta = None;
        let mut knobs = Knobs::default();
        let mut seeds: Vec<u64> = Vec::new();
        let mut out_dir = PathBuf::from("out");

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |e: &dyn std::fmt::Display| format!("line {}: {e}", lineno + 1);
            match key {
                "algorithm" => {
                    algorithm = Some(match value {
                        "ocp" => Algorithm::Ocp,
                        "fqi" => Algorithm::Fqi,
                        "end_to_end_ocp" => Algorithm::EndToEndOcp,
                        "end_to_end_fqi" => Algorithm::EndToEndFqi,
                        "spanner_only" => Algorithm::SpannerOnly,
                        "subspace_only" => Algorithm::SubspaceOnly,
                        other => return Err(format!("unknown algorithm '{other}'")),
                    })
                }
                "env_file" => env_file = Some(value.to_string()),
                "env_kind" => {
                    env_kind = Some(match value {
                        "rotated_tabular" => EnvKind::RotatedTabular,
                        "hidden_subspace" => EnvKind::HiddenSubspace,
                        other => return Err(format!("unknown env kind '{other}'")),
                    })
                }
                "env_num_states" => env_states = Some(value.parse().map_err(|e| bad(&e))?),
                "env_num_actions" => env_actions = Some(value.parse().map_err(|e| bad(&e))?),
                "env_H" => env_h = Some(value.parse().map_err(|e| bad(&e))?),
                "env_reward_noise_scale" => env_noise = value.parse().map_err(|e| bad(&e))?,
                "env_hidden_fraction" => env_hidden = value.parse().map_err(|e| bad(&e))?,
                "eps" => eps = Some(value.parse().map_err(|e| bad(&e))?),
                "delta" => delta = Some(value.parse().map_err(|e| bad(&e))?),
                "mode" => knobs.mode = parse_mode(value)?,
                "scale" => knobs.scale = value.parse().map_err(|e| bad(&e))?,
                "c0" => knobs.c0 = value.parse().map_err(|e| bad(&e))?,
                "c1" => knobs.c1 = value.parse().map_err(|e| bad(&e))?,
                "c2" => knobs.c2 = value.parse().map_err(|e| bad(&e))?,
                "t_ocp" => knobs.t_ocp = value.parse().map_err(|e| bad(&e))?,
                "n_override" => knobs.n_override = Some(value.parse().map_err(|e| bad(&e))?),
                "seeds" => {
                    for part in value.split(',') {
                        let part = part.trim();
                        if part.is_empty() {
                            continue;
                        }
                        seeds.push(part.parse().map_err(|e| bad(&e))?);
                    }
                }
                "out_dir" => out_dir = PathBuf::from(value),
                other => return Err(format!("line {}: unknown key '{other}'", lineno + 1)),
            }
        }

        let env = if let Some(path) = env_file {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read env file {path}: {e}"))?;
            EnvSpec::from_text(&text).map_err(|e| format!("bad env file {path}: {e}"))?
        } else {
            let states = env_states.ok_or("missing env_num_states (or env_file)")?;
            let actions = env_actions.ok_or("missing env_num_actions (or env_file)")?;
            let spec = EnvSpec {
                kind: env_kind.ok_or("missing env_kind (or env_file)")?,
                d: states * actions,
                horizon: env_h.ok_or("missing env_H (or env_file)")?,
                num_states: states,
                num_actions: actions,
                seed: 0,
                reward_noise_scale: env_noise,
                hidden_fraction: env_hidden,
            };
            spec.validate().map_err(|e| e.to_string())?;
            spec
        };

        Ok(RunConfig {
            algorithm: algorithm.ok_or("missing algorithm")?,
            env,
            eps: eps.ok_or("missing eps")?,
            delta: delta.ok_or("missing delta")?,
            knobs,
            seeds,
            out_dir,
        })
    }
}
