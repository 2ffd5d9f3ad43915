//! `kpz-stationary`: experiments on the stationary open ASEP and its KPZ
//! limit.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 configuration error,
//! 3 numerical failure.

mod commands;
mod error;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::record::Format;

#[derive(Debug, Parser)]
#[command(name = "kpz-stationary", version, about = "Stationary open ASEP and open KPZ experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Left boundary parameter u.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub u: Option<f64>,
    /// Right boundary parameter v.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub v: Option<f64>,
    /// Number of sites N.
    #[arg(long = "n-sites", global = true)]
    pub n_sites: Option<usize>,
    /// Number of Laplace variables; must match --x and --c when given.
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Locations X_1 < … < X_d in (0, 1], comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub x: Vec<f64>,
    /// Laplace variables c_1, …, c_d, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub c: Vec<f64>,
    /// RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tolerance: quadrature self-convergence for integrals, pass threshold
    /// for `verify`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output file (stdout if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact stationary law, current and height Laplace transform.
    Stationary,
    /// Gillespie simulation of one model.
    Simulate(SimulateArgs),
    /// Three-species coupling of the models (−v, v), (u, v), (u, −u).
    Coupled(CoupledArgs),
    /// Phase classification and simulated current over a density grid.
    PhaseScan(PhaseScanArgs),
    /// Finite-N Laplace transform from the Askey-Wilson process.
    PhiN,
    /// Limiting Laplace transform from the continuous dual Hahn process.
    PhiLimit,
    /// |φ^(N) − φ| over a ladder of N.
    Convergence(ConvergenceArgs),
    /// Density and atoms of the continuous dual Hahn marginal.
    CdhTable(CdhTableArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long = "t-max", default_value_t = 1e4)]
    pub t_max: f64,
    /// Burn-in time; defaults to a tenth of --t-max.
    #[arg(long = "burn-in")]
    pub burn_in: Option<f64>,
    /// Use γ = δ = 0 with this effective left density instead of (u, v).
    #[arg(long = "rho-l", requires = "rho_r")]
    pub rho_l: Option<f64>,
    /// Effective right density; pairs with --rho-l.
    #[arg(long = "rho-r", requires = "rho_l")]
    pub rho_r: Option<f64>,
    /// Bulk asymmetry with --rho-l/--rho-r.
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
}

#[derive(Debug, Args)]
pub struct CoupledArgs {
    #[arg(long, default_value_t = 100_000)]
    pub events: u64,
}

#[derive(Debug, Args)]
pub struct PhaseScanArgs {
    #[arg(long = "rho-l", value_delimiter = ',', default_values_t = [0.2, 0.5, 0.8])]
    pub rho_l: Vec<f64>,
    #[arg(long = "rho-r", value_delimiter = ',', default_values_t = [0.2, 0.5, 0.8])]
    pub rho_r: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
    #[arg(long, default_value_t = 200_000)]
    pub events: u64,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 64, 256, 1024])]
    pub ladder: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct CdhTableArgs {
    /// Time s of the marginal.
    #[arg(long, default_value_t = 0.0)]
    pub s: f64,
    #[arg(long = "r-max", default_value_t = 20.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Multiply the continuous part of the normalisation fixtures by
    /// (1 + perturb); a nonzero value is a negative control.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub perturb: f64,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("KPZ_STATIONARY_THREADS") {
        let n: usize =
            v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                CliError::Config(format!("KPZ_STATIONARY_THREADS must be a positive integer, got {v:?}"))
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let start = Instant::now();
    let c = &cli.common;
    let (mut rec, outcome) = match &cli.command {
        Command::Stationary => commands::stationary(c)?,
        Command::Simulate(a) => commands::simulate(c, a)?,
        Command::Coupled(a) => commands::coupled(c, a)?,
        Command::PhaseScan(a) => commands::phase_scan(c, a)?,
        Command::PhiN => commands::phi_n(c)?,
        Command::PhiLimit => commands::phi_limit(c)?,
        Command::Convergence(a) => commands::convergence(c, a)?,
        Command::CdhTable(a) => commands::cdh_table(c, a)?,
        Command::Verify(a) => commands::verify(c, a)?,
    };
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec.emit(c.format, c.out.as_deref())?;
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kpz-stationary: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
