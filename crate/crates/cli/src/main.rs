mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cshield::abstraction::Variant;

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "cshield",
    version,
    about = "Conformal safety shields for MDPs with imperfect perception"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unsafety table of every state-action pair.
    Synth(SynthArgs),
    /// Conformal quantile from calibration samples.
    Calibrate(CalibrateArgs),
    /// Coverage report and set confusion on test samples.
    Evaluate(EvaluateArgs),
    /// Abstract model of the shielded system under perception.
    Compile(CompileArgs),
    /// Fail, stuck and success probabilities of a compiled model.
    Check(CheckArgs),
    /// Monte-Carlo rollouts of the shielded system.
    Simulate(SimulateArgs),
    /// Global-safety bound checks on random and constructed models.
    Theorem1(Theorem1Args),
    /// Every coverage level, shield threshold and variant, plus the baseline.
    Sweep(SweepArgs),
    /// Synthetic classifier scores.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct ShieldArgs {
    /// Perfect-perception model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "fail")]
    unsafe_label: String,
    #[arg(long, default_value_t = cshield::shield::DEFAULT_LOOKAHEAD)]
    lookahead: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shield: ShieldArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Target coverage; the miscoverage level is one minus this.
    #[arg(long)]
    alpha_prime: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Conformal model file; without it the argmax is used as the estimate.
    #[arg(long)]
    conformal: Option<PathBuf>,
    /// Coverage report.
    #[arg(long)]
    out: PathBuf,
    /// Set-confusion CSV.
    #[arg(long)]
    confusion: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    shield: ShieldArgs,
    /// Unsafety table from `synth`; synthesised afresh when omitted.
    #[arg(long)]
    sigma: Option<PathBuf>,
    #[arg(long)]
    confusion: PathBuf,
    /// Shield threshold; actions need a safety of at least this much.
    #[arg(long)]
    lambda_prime: f64,
    /// Coverage the confusion data was produced at, for the provenance header.
    #[arg(long)]
    alpha_prime: Option<f64>,
    #[arg(long, default_value = "worst")]
    variant: Variant,
    /// Treat the confusion as point estimates (the unconformalized baseline).
    #[arg(long)]
    baseline: bool,
    /// Actual states without confusion data are perceived exactly instead of
    /// being an error.
    #[arg(long)]
    exact_unobserved: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Model produced by `compile`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "1..30", value_parser = parse_horizons)]
    horizons: Horizons,
    /// Record wall-clock milliseconds instead of 0.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// Chance that the classifier's argmax is the true state.
    #[arg(long, default_value_t = 0.85)]
    accuracy: f64,
    #[arg(long, default_value_t = cshield::case_study::TAXI_SHARPNESS)]
    sharpness: f64,
    /// Number of classes of an unstructured profile; the taxiing profile
    /// is used when omitted.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    shield: ShieldArgs,
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Conformal model file; without it the argmax singleton is used.
    #[arg(long)]
    conformal: Option<PathBuf>,
    #[arg(long)]
    lambda_prime: f64,
    /// Controller: `random` or `safest`.
    #[arg(long, default_value = "random")]
    variant: Variant,
    #[arg(long, default_value_t = 100_000)]
    episodes: usize,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Per-step log CSV.
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Theorem1Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random models to keep for the bound sweep.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Report file.
    #[arg(long)]
    out: PathBuf,
    /// Per-row sweep CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    shield: ShieldArgs,
    /// Calibration samples.
    #[arg(long)]
    calibration: PathBuf,
    /// Test samples, used for the confusion data.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "1..30", value_parser = parse_horizons)]
    horizons: Horizons,
    #[arg(long)]
    exact_unobserved: bool,
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    /// Samples per class, drawn class by class.
    #[arg(long, conflicts_with = "episodes")]
    per_state: Option<usize>,
    /// Episodes of random exploration of `--model`, one sample per visited state.
    #[arg(long, requires = "model")]
    episodes: Option<usize>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// An inclusive horizon range, kept with its spelling for manifests.
#[derive(Clone, Debug)]
struct Horizons {
    text: String,
    values: Vec<usize>,
}

fn parse_horizons(s: &str) -> Result<Horizons, String> {
    let (lo, hi) = s.split_once("..").ok_or("expected lo..hi")?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    if lo > hi {
        return Err(format!("empty range {lo}..{hi}"));
    }
    Ok(Horizons {
        text: format!("{lo}..{hi}"),
        values: (lo..=hi).collect(),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compile(a) => commands::compile(a),
        Command::Check(a) => commands::check(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Theorem1(a) => commands::theorem1(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::GenData(a) => commands::gen_data(a),
    }
}
