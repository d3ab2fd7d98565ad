//! `lbc` — experiment harness for policy-cover exploration and planning in
//! linear Bellman complete MDPs with deterministic transitions.
//!
//! Subcommands: `run` (execute a configured experiment over one or more
//! seeds, writing one report JSON per seed plus an aggregate CSV), `gen-env`
//! (write an environment spec file), and `verify` (numerically certify linear
//! Bellman completeness of an environment).

mod config;
mod json;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lbc_core::env::{EnvKind, EnvSpec};
use lbc_core::rng::RngStream;

#[derive(Parser)]
#[command(name = "lbc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment for each seed and aggregate the results.
    Run(RunArgs),
    /// Write an environment spec file.
    GenEnv(GenEnvArgs),
    /// Print the max linear-Bellman-completeness residual of an environment;
    /// exits 0 iff it is at most 1e-8.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (flat key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Seed(s) to run; repeatable. Overrides the config's seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory. Overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Schedule mode. Overrides the config.
    #[arg(long)]
    mode: Option<String>,
    /// Practical-mode sample-size scale. Overrides the config.
    #[arg(long)]
    scale: Option<f64>,
    /// Suppress per-seed progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    hidden: f64,
    /// Destination spec file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Environment spec file.
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 99)]
    seed: u64,
    /// Diagnostic negative control: zero out the last K feature coordinates
    /// before verification, which breaks completeness.
    #[arg(long, default_value_t = 0)]
    truncate_features: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GenEnv(args) => cmd_gen_env(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match config::RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: bad config: {e}");
            return ExitCode::from(2);
        }
    };
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if let Some(mode) = args.mode.as_deref() {
        match config::parse_mode(mode) {
            Ok(m) => config.knobs.mode = m,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if let Some(scale) = args.scale {
        config.knobs.scale = scale;
    }
    if config.seeds.is_empty() {
        eprintln!("error: no seeds given");
        return ExitCode::from(2);
    }
    match runner::run_all(&config, args.quiet) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_gen_env(args: GenEnvArgs) -> ExitCode {
    let kind = match args.kind.as_str() {
        "rotated_tabular" => EnvKind::RotatedTabular,
        "hidden_subspace" => EnvKind::HiddenSubspace,
        other => {
            eprintln!("error: unknown env kind '{other}'");
            return ExitCode::from(2);
        }
    };
    let spec = EnvSpec {
        kind,
        d: args.states * args.actions,
        horizon: args.horizon,
        num_states: args.states,
        num_actions: args.actions,
        seed: args.seed,
        reward_noise_scale: args.noise,
        hidden_fraction: args.hidden,
    };
    if let Err(e) = spec.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if let Err(e) = std::fs::write(&args.out, spec.to_text()) {
        eprintln!("error: cannot write {}: {e}", args.out.display());
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.env) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.env.display());
            return ExitCode::from(2);
        }
    };
    let spec = match EnvSpec::from_text(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: bad env spec: {e}");
            return ExitCode::from(2);
        }
    };
    let mdp = match spec.build() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: cannot build env: {e}");
            return ExitCode::from(1);
        }
    };
    let mdp = if args.truncate_features > 0 {
        match runner::truncate_features(&mdp, args.truncate_features) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    } else {
        mdp
    };
    match lbc_core::env::verify_lbc(&mdp, args.probes, 1e-8, RngStream::new(args.seed)) {
        Ok(residual) => {
            println!("max LBC residual: {residual:.3e}");
            if residual <= 1e-8 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
