mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nde_core::config::{ConstraintKind, Environment};
use nde_core::refine::Objective;

#[derive(Parser, Debug)]
#[command(name = "nde", version, about = "Build, refine and simulate naturalistic driving environments")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when absent.
    #[arg(long, global = true, env = "NDE_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drive the synthetic ground truth and write a trajectory CSV.
    GenData(GenData),
    /// Reduce a trajectory CSV to six behavior models and their targets.
    BuildModels(BuildModels),
    /// Match a model's stationary distribution to the data target.
    Refine(Refine),
    /// Run episodes and write histograms and rates.
    Simulate(Simulate),
}

#[derive(Args, Debug)]
struct GenData {
    /// Hours of simulated traffic.
    #[arg(long, value_parser = positive_hours)]
    hours: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildModels {
    /// Trajectory CSV.
    #[arg(long, short, required_unless_present = "synthetic_hours", conflicts_with = "synthetic_hours")]
    input: Option<PathBuf>,
    /// Drive the synthetic ground truth for this many hours and reduce the
    /// records as they are produced instead of reading a file.
    #[arg(long, value_parser = positive_hours)]
    synthetic_hours: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RefineSituation {
    FreeDriving,
    CarFollowing,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    L1,
    SquaredFrobenius,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConstraintArg {
    Hard,
    Soft,
}

#[derive(Args, Debug)]
struct Refine {
    /// Model directory written by build-models.
    #[arg(long, short)]
    models: PathBuf,
    /// Visit tables; defaults to `<models>/targets`.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "free-driving")]
    situation: RefineSituation,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    constraint: Option<ConstraintArg>,
    /// Penalty weight of the soft constraint.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Mode {
    Nde,
    Av,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnvArg {
    Nde,
    Idm,
}

#[derive(Args, Debug)]
struct Simulate {
    /// Model directory; not needed for the IDM environment.
    #[arg(long, short)]
    models: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Background traffic; overrides `sim.environment`.
    #[arg(long, value_enum)]
    environment: Option<EnvArg>,
    /// Worker threads; overrides `run.workers`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Reference histograms for the Hellinger distances; defaults to
    /// `<models>/histograms` when present.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Initial-state distribution; defaults to `<models>/init.json` when
    /// present, else the built-in synthetic one.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

fn positive_hours(s: &str) -> Result<f64, String> {
    let h: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err("hours must be positive".into())
    }
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::L1 => Objective::L1,
            ObjectiveArg::SquaredFrobenius => Objective::SquaredFrobenius,
        }
    }
}

impl From<ConstraintArg> for ConstraintKind {
    fn from(c: ConstraintArg) -> Self {
        match c {
            ConstraintArg::Hard => ConstraintKind::Hard,
            ConstraintArg::Soft => ConstraintKind::Soft,
        }
    }
}

impl From<EnvArg> for Environment {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Nde => Environment::Nde,
            EnvArg::Idm => Environment::Idm,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
