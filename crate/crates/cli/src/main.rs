mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spinshape", version, about = "Robust bias-field controllers for spin-network transfer")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Check the manifests of input documents before using them.
    #[arg(long, global = true)]
    verify: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Optimize a ranked set of controllers.
    Design(DesignArgs),
    /// Sample an ensemble of physical dephasing processes.
    Sample(SampleArgs),
    /// Error statistics over a decoherence-strength grid.
    Sweep(SweepArgs),
    /// Sensitivity of each controller to weak dephasing.
    Sensitivity(SensitivityArgs),
    /// Log-sensitivity of the asymptotic fidelity to Hamiltonian perturbations.
    Logsens(LogsensArgs),
    /// Correlate sensitivity with readout time across reports.
    Correlate(CorrelateArgs),
    /// Re-derive the digests recorded in output manifests.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(id = "network", required = true, multiple = false)]
pub struct NetworkArgs {
    /// Uniform ring of N spins.
    #[arg(long, value_name = "N", group = "network")]
    pub ring: Option<usize>,
    /// Uniform chain of N spins.
    #[arg(long, value_name = "N", group = "network")]
    pub chain: Option<usize>,
    /// Network document.
    #[arg(long, value_name = "FILE", group = "network")]
    pub net: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientArg {
    Fd,
    Analytic,
}

#[derive(Debug, Args, Serialize)]
pub struct DesignArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Coupling strength for --ring/--chain.
    #[arg(long = "J", default_value_t = 1.0)]
    pub coupling: f64,
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    /// Input node (one-based).
    #[arg(long = "in")]
    pub input: usize,
    /// Output node (one-based).
    #[arg(long = "out")]
    pub output: usize,
    /// Fixed readout time.
    #[arg(long = "T", conflicts_with = "time_range", required_unless_present = "time_range")]
    pub read_time: Option<f64>,
    /// Optimize the readout time within LO:HI.
    #[arg(long = "T-opt", value_name = "LO:HI")]
    pub time_range: Option<String>,
    /// Readout window half width; 0 is an instantaneous readout.
    #[arg(long = "dT", default_value_t = 0.0)]
    pub window: f64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Random restarts per controller.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Bias box half width.
    #[arg(long, default_value_t = spinshape::controllers::DEFAULT_BIAS_BOUND)]
    pub bound: f64,
    #[arg(long, value_enum, default_value = "fd")]
    pub gradient: GradientArg,
    #[arg(long, env = "SPINSHAPE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'o', long = "output", default_value = "ctrl.json")]
    pub output_file: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, env = "SPINSHAPE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of candidates to draw.
    #[arg(long, default_value_t = spinshape::dephasing::MAX_CANDIDATES)]
    pub budget: u64,
    #[arg(short = 'o', long = "output", default_value = "deph.json")]
    pub output_file: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    Frobenius,
    Trace,
}

impl From<NormArg> for spinshape::robustness::Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Frobenius => Self::Frobenius,
            NormArg::Trace => Self::Trace,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SelectionArgs {
    /// Controller-set document.
    #[arg(long)]
    pub ctrl: PathBuf,
    /// Use only the K best-ranked controllers.
    #[arg(long, value_name = "K")]
    pub top: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Dephasing ensemble document.
    #[arg(long)]
    pub deph: PathBuf,
    /// Number of uniform decoherence strengths on [0, 1].
    #[arg(long, default_value_t = spinshape::robustness::DEFAULT_GRID_POINTS)]
    pub grid: usize,
    #[arg(long, value_enum, default_value = "frobenius")]
    pub norm: NormArg,
    /// Report path; `.json` writes the full report, anything else CSV.
    #[arg(short = 'o', long = "out", alias = "output", default_value = "report.csv")]
    pub output_file: PathBuf,
    /// Also write running-median deviations at delta = 1.
    #[arg(long, value_name = "FILE")]
    pub convergence: Option<PathBuf>,
    /// Also write per-delta fidelity statistics.
    #[arg(long, value_name = "FILE")]
    pub profile: Option<PathBuf>,
    /// Also write a histogram of transfer errors at delta = 1.
    #[arg(long, value_name = "FILE")]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = spinshape::robustness::DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long)]
    pub deph: PathBuf,
    /// Forward-difference step in delta.
    #[arg(long, default_value_t = spinshape::robustness::DEFAULT_ETA_STEP)]
    pub step: f64,
    #[arg(long, value_enum, default_value = "frobenius")]
    pub norm: NormArg,
    #[arg(short = 'o', long = "out", alias = "output", default_value = "sensitivity.json")]
    pub output_file: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LogsensArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Perturbation structure: bias:K, coupling:M-N or identity. Repeatable;
    /// defaults to every bias and coupling.
    #[arg(long = "struct", value_name = "SPEC")]
    pub structures: Vec<String>,
    #[arg(short = 'o', long = "out", alias = "output", default_value = "logsens.csv")]
    pub output_file: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    /// Sensitivity reports.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(short = 'o', long = "out", alias = "output", default_value = "correlation.json")]
    pub output_file: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Output files (JSON documents, or CSV files with sidecar manifests).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("cannot start {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, cli.verify))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spinshape: {e}");
            e.exit_code()
        }
    }
}
