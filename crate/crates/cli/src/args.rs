use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fde_core::parser::{McConfig, SolveConfig};

#[derive(Debug, Parser)]
#[command(name = "fde", version, about = "Spectral densities of polynomials in rectangular random matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the density and write density.csv and report.json.
    Solve(RunArgs),
    /// Sample the blown-up ensemble and write histogram.csv and report.json.
    Mc(RunArgs),
    /// Run both and report the Kolmogorov-Smirnov distance.
    Compare(RunArgs),
    /// Print exact combinatorial counts.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Imaginary offset of the evaluation points.
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Evaluation grid as "a:b:n".
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Use an n-node Gauss rule for semicircular summands instead of the closed form.
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relaxation factor in (0, 1] of the fixed-point update.
    #[arg(long)]
    pub damping: Option<f64>,
    /// Blow-up factor of the Monte Carlo ensemble.
    #[arg(long)]
    pub mc_m: Option<usize>,
    #[arg(long)]
    pub mc_reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write a gnuplot script next to the CSV files.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Number of non-crossing pairings of n points.
    #[arg(long)]
    pub ncp: Option<usize>,
    /// Number of all pairings of n points.
    #[arg(long)]
    pub pairings: Option<usize>,
    /// n-th Catalan number.
    #[arg(long)]
    pub catalan: Option<u64>,
    /// Moment of a word in c and c*, written with 1 and *, e.g. "1**1".
    #[arg(long)]
    pub word: Option<String>,
}

pub const DEFAULT_EPSILON: f64 = fde_core::spectra::DEFAULT_EPSILON;
pub const DEFAULT_MC_M: usize = 40;
pub const DEFAULT_MC_REPS: usize = 100;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BINS: usize = 80;

/// Flags override the config file, which overrides the defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Settings {
    pub epsilon: f64,
    pub grid: Option<String>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub quad_nodes: Option<usize>,
    pub mc_m: usize,
    pub mc_reps: usize,
    pub seed: u64,
    pub bins: usize,
}

impl Settings {
    pub fn resolve(args: &RunArgs, solve: &SolveConfig, mc: &McConfig) -> Settings {
        let fp = fde_core::convolve::FixedPointConfig::default();
        Settings {
            epsilon: args.epsilon.or(solve.epsilon).unwrap_or(DEFAULT_EPSILON),
            grid: args.grid.clone().or_else(|| solve.grid.clone()),
            tol: args.tol.or(solve.tol).unwrap_or(fp.tol),
            max_iter: args.max_iter.or(solve.max_iter).unwrap_or(fp.max_iter),
            damping: args.damping.or(solve.damping).unwrap_or(fp.damping),
            quad_nodes: args.quad_nodes.or(solve.quad_nodes),
            mc_m: args.mc_m.or(mc.m).unwrap_or(DEFAULT_MC_M),
            mc_reps: args.mc_reps.or(mc.reps).unwrap_or(DEFAULT_MC_REPS),
            seed: args.seed.or(mc.seed).unwrap_or(DEFAULT_SEED),
            bins: mc.bins.unwrap_or(DEFAULT_BINS),
        }
    }
}
