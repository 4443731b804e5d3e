//! `gbdp`: command-line front end for generalized birth-death processes.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbdp_core::Error;

#[derive(Parser, Debug)]
#[command(name = "gbdp", version, about = "Generalized birth-death processes")]
pub struct Cli {
    /// Worker threads for Monte Carlo runs (results do not depend on it).
    #[arg(long, global = true, env = "GBDP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Output {
    /// Output file, or `-` for stdout.
    #[arg(short, long, default_value = "-")]
    pub output: String,

    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PmfMethod {
    Ode,
    Uniformization,
    ClosedForm,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Birth,
    Death,
    Full,
    Arrivals,
    Departures,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weight {
    /// g(n) = 1: the hitting time itself.
    One,
    /// g(n) = n: the area under the path.
    State,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum FigureKind {
    CumBirths,
    CumDeaths,
    #[value(name = "corrBN")]
    CorrBn,
    #[value(name = "corrDN")]
    CorrDn,
    #[value(name = "corrNX")]
    CorrNx,
    ImmigrationMean,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate sample paths.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        n0: i64,
        #[arg(long, required_unless_present = "jumps", conflicts_with = "jumps")]
        horizon: Option<f64>,
        /// Stop after this many events instead of at a time horizon.
        #[arg(long)]
        jumps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report N, B, D and X at these times instead of the jump list.
        #[arg(long = "t", value_delimiter = ',', num_args = 1..)]
        times: Vec<f64>,
        /// Monte Carlo summary over this many runs (needs --t).
        #[arg(long)]
        replications: Option<usize>,
        /// Write `state_before,sojourn` records instead of the jump list.
        #[arg(long, conflicts_with_all = ["times", "replications"])]
        records: bool,
        #[command(flatten)]
        out: Output,
    },
    /// State probabilities at the requested times.
    Pmf {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "t", value_delimiter = ',', num_args = 1.., required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        n0: i64,
        #[arg(long, value_enum, default_value_t = PmfMethod::Ode)]
        method: PmfMethod,
        /// Largest probability mass allowed to leave the truncation window.
        #[arg(long)]
        deficit_tol: Option<f64>,
        /// Largest number of states the truncation window may reach.
        #[arg(long)]
        max_states: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Joint law of the population with cumulative counts.
    Joint {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "t", value_delimiter = ',', num_args = 1.., required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        n0: i64,
        #[arg(long, value_enum, default_value_t = JointKind::Full)]
        kind: JointKind,
        #[arg(long, value_enum, default_value_t = PmfMethod::Ode)]
        method: PmfMethod,
        #[arg(long)]
        deficit_tol: Option<f64>,
        /// Largest number of states the truncation window may reach.
        #[arg(long)]
        max_states: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Closed-form moments, one record per time.
    Moments {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "t", value_delimiter = ',', num_args = 1.., required = true)]
        times: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Extinction polynomial roots, residues and probability.
    Extinction {
        #[arg(long)]
        model: PathBuf,
        /// Also report p(0, t) at these times.
        #[arg(long = "t", value_delimiter = ',', num_args = 1..)]
        times: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Laplace transform of a hitting-time functional.
    Laplace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: i64,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        theta: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Weight::One)]
        weight: Weight,
        #[arg(long, default_value_t = 1 << 16)]
        k_max: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Estimate the aggregate rate from inter-event records.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Parking-lot means and average occupancy.
    Parking {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "t", value_delimiter = ',', num_args = 1.., required = true)]
        times: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Data series for plots.
    Figure {
        #[arg(long, value_enum)]
        kind: FigureKind,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        t_end: f64,
        /// Number of intervals of the uniform time grid.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[command(flatten)]
        out: Output,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
