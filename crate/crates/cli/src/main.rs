//! `cfmdp`: command-line front end for counterfactual MDP experiments.

mod commands;
mod context;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::context::{PosteriorArgs, SourceArgs};

#[derive(Parser, Debug)]
#[command(name = "cfmdp", version, about = "Counterfactual policies for finite-horizon MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit a built-in environment as MDP JSON.
    Env(EnvCmd),
    /// Sample an observed path under a policy preset.
    Sample(SampleCmd),
    /// Build the posterior and the reachable counterfactual kernel.
    CfBuild(CfBuildCmd),
    /// Prune the counterfactual MDP for one k.
    Prune(PruneCmd),
    /// Solve one (k, m) cell and export the policy.
    Solve(SolveCmd),
    /// Solve a grid of (k, m) cells on one posterior.
    Sweep(SweepCmd),
    /// Roll out a policy and summarize a state feature over time.
    Rollout(RolloutCmd),
}

#[derive(Args, Debug)]
pub struct EnvCmd {
    /// gridworld, epidemic, sepsis-catastrophic or sepsis-suboptimal
    pub name: String,
    #[command(flatten)]
    pub config: context::EnvFlags,
    /// Write `mdp.json` into this directory instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Observed policy of a built-in environment. Defaults to `--env`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Path seed. Defaults to the environment's canonical seed, or 0 for MDP files.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `path.json` into this directory instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CfBuildCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PruneCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SolveCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// k values, e.g. `1..=8`, `2-5` or `1,3,8`. Defaults to 1..=T+1.
    #[arg(long)]
    pub k: Option<context::Values>,
    /// m values in the same syntax. Defaults to 0..=T.
    #[arg(long)]
    pub m: Option<context::Values>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RolloutCmd {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// Policy exported by `solve`. Its k, m, mode and posterior settings take precedence.
    #[arg(long, conflicts_with_all = ["k", "m"])]
    pub policy: Option<PathBuf>,
    #[arg(long, required_unless_present = "policy")]
    pub k: Option<usize>,
    #[arg(long, required_unless_present = "policy")]
    pub m: Option<usize>,
    /// Number of rollouts.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// State-label key to summarize. Defaults to the environment's headline feature.
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub rollout_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CFMDP_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| cfmdp::Error::InvalidConfig(format!("CFMDP_THREADS=`{v}` is not a count")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// 2 for invalid input, 3 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    use cfmdp::Error::*;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cfmdp::Error>() {
            return match e {
                InvalidMdp(_) | InvalidPath(_) | UnknownState(_) | UnknownAction(_)
                | ZeroProbabilityObservation { .. } | InvalidConfig(_) | UnknownEnvironment(_)
                | ArtifactMismatch(_) | Json(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Env(c) => commands::env(c),
        Command::Sample(c) => commands::sample(c),
        Command::CfBuild(c) => commands::cf_build(c),
        Command::Prune(c) => commands::prune(c),
        Command::Solve(c) => commands::solve(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::Rollout(c) => commands::rollout(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
