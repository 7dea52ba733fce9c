//! `lqo`: generate benchmark systems, reduce them, evaluate reduced models
//! and run order sweeps.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
//! 4 iteration limit reached without convergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lqo_mor::tsia::Monitor;

#[derive(Debug, Parser)]
#[command(name = "lqo", version, about = "H2-optimal reduction of linear systems with quadratic outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a benchmark system as a bundle.
    Generate {
        #[command(subcommand)]
        model: Model,
    },
    /// Reduce a bundle with the fixed-point iteration or balanced truncation.
    Reduce(ReduceArgs),
    /// Compare reduced models against the full one.
    Evaluate(EvaluateArgs),
    /// Reduce over a range of orders with both methods.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
enum Model {
    /// Upwind advection–diffusion with a quadratic output.
    Advdiff {
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random stable system.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distance of the spectrum from the imaginary axis.
        #[arg(long, default_value_t = 0.5)]
        gap: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Tsia,
    Bt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MonitorArg {
    Eta,
    Tau,
    Both,
}

impl From<MonitorArg> for Monitor {
    fn from(m: MonitorArg) -> Self {
        match m {
            MonitorArg::Eta => Monitor::Eta,
            MonitorArg::Tau => Monitor::Tau,
            MonitorArg::Both => Monitor::Both,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct IterationArgs {
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = MonitorArg::Eta)]
    monitor: MonitorArg,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Tsia)]
    method: Method,
    #[arg(long)]
    r: usize,
    #[command(flatten)]
    iteration: IterationArgs,
    /// Record the optimality residual at every iterate.
    #[arg(long)]
    record_fonc: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputKind {
    /// 0.5 cos(πt) + 1
    Sinusoid,
    /// t² exp(−t/5)
    Damped,
    /// Unit step
    Step,
    Zero,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    fom: PathBuf,
    /// Reduced model as `NAME=DIR` (or `DIR`); repeatable.
    #[arg(long = "rom", required = true)]
    roms: Vec<String>,
    #[arg(long, value_enum, default_value_t = InputKind::Sinusoid)]
    input: InputKind,
    /// Input channel driven by the signal (others are zero); defaults to the
    /// last channel.
    #[arg(long)]
    channel: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Orders as `start:step:end`, a comma list, or a single value.
    #[arg(long)]
    r: String,
    #[command(flatten)]
    iteration: IterationArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = commands::configure_threads().and_then(|()| match cli.command {
        Command::Generate { model } => commands::generate(model),
        Command::Reduce(args) => commands::reduce(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sweep(args) => commands::sweep(args),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
