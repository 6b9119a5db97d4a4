//! Command-line front end: argument parsing, dispatch and error reporting.
//! This is the only part of the crate that touches the filesystem.

mod commands;
pub mod io;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;

pub const DEFAULT_Q_GRID: &str = "0:1:101:linear";
pub const DEFAULT_ALPHA_GRID: &str = "1:1e6:25:log";
pub const DEFAULT_DRAWS: usize = 4000;
/// Default radius grid: this many log-spaced points on `[1e-4, log m]`.
pub const DEFAULT_C_POINTS: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "dsens",
    version,
    about = "Sensitivity of loss-minimizing decisions to model misspecification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantile-loss curves (VaR, CVaR, trimmed mean, CEL), optional LOO and density scatter.
    Diagnose(DiagnoseArgs),
    /// Forward-KL least-favourable envelopes, regret curves, admissibility radii and calibration.
    Kl(KlArgs),
    /// Reverse-KL least-favourable envelopes.
    ReverseKl(KlArgs),
    /// Dirichlet-process probability-of-optimality profiles and bands.
    Dp(DpArgs),
    /// Leave-one-out and prior-removal expected losses.
    Loo(InputArgs),
    /// Weight degeneracy of the least-favourable tilt for one action.
    Calibrate(CalibrateArgs),
    /// Simulate the screening case study; `--demo` also runs diagnose, kl and dp on it.
    SimulateScreening(Box<ScreeningArgs>),
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct InputArgs {
    /// Samples CSV (parameters plus optional log_density, log_prior, loglik_j).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Loss CSV: header of action labels, one row per sample.
    #[arg(long)]
    pub losses: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Use losses as given (they must already lie in [0, 1]).
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// Quantile grid, `start:stop:count:linear|log`.
    #[arg(long, default_value = DEFAULT_Q_GRID)]
    pub q_grid: String,
    /// Also emit leave-one-out expected losses (needs loglik_* columns).
    #[arg(long)]
    pub loo: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct KlArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// Radius grid; defaults to 64 log-spaced points on [1e-4, log m].
    #[arg(long)]
    pub c_grid: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct CalibrateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub kl: KlArgs,
    /// Action label to calibrate (defaults to the Bayes action).
    #[arg(long)]
    pub action: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct DpArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = DEFAULT_ALPHA_GRID)]
    pub alpha_grid: String,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    /// Random seed; generated and recorded in the manifest when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pointwise coverage of the bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Number of evenly spaced reference atoms for the bands.
    #[arg(long, default_value_t = 1000)]
    pub atoms: usize,
    /// Evaluation points for bands and the expected-L1 curve.
    #[arg(long, default_value = "0.05:0.95:19:linear")]
    pub z_grid: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub(crate) struct ScreeningArgs {
    /// TOML file with any of the model keys, `ages`, `frequencies_months`, `m`, `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of simulated individuals.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub weibull_shape: Option<f64>,
    #[arg(long)]
    pub weibull_scale: Option<f64>,
    #[arg(long)]
    pub lognormal_mu: Option<f64>,
    #[arg(long)]
    pub lognormal_sigma2: Option<f64>,
    #[arg(long)]
    pub loglogistic_kappa: Option<f64>,
    #[arg(long)]
    pub loglogistic_rho: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub b1: Option<f64>,
    #[arg(long)]
    pub t_bar: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Comma-separated first-screen ages.
    #[arg(long, value_delimiter = ',')]
    pub ages: Option<Vec<f64>>,
    /// Comma-separated screening intervals in months.
    #[arg(long, value_delimiter = ',')]
    pub frequencies_months: Option<Vec<f64>>,
    /// Chain diagnose, kl and dp on the simulated data.
    #[arg(long)]
    pub demo: bool,
    /// Quantile grid for the demo's diagnose step.
    #[arg(long, default_value = DEFAULT_Q_GRID)]
    pub q_grid: String,
    /// Radius grid for the demo's kl step.
    #[arg(long)]
    pub c_grid: Option<String>,
    /// Concentration grid for the demo's dp step.
    #[arg(long, default_value = "1:1e6:13:log")]
    pub alpha_grid: String,
    /// Dirichlet draws for the demo's dp step.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit status. Failures print one line,
/// `error: CODE: message`, to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            let line = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: E_USAGE: {line}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", error_code(&e), one_line(&e));
            1
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Kl(a) => commands::kl(&a),
        Command::ReverseKl(a) => commands::reverse_kl(&a),
        Command::Dp(a) => commands::dp(&a),
        Command::Loo(a) => commands::loo(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::SimulateScreening(a) => commands::simulate_screening(&a),
    }
}

fn error_code(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or("E_INPUT", Error::code)
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace(['\n', '\r'], " ")
}
