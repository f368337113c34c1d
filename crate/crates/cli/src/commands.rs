use std::fs;
use std::path::Path;
use std::time::Instant;

use fde_core::combinatorics::{catalan, circular_word_moment, ncp2_count, CombinatoricsError, Star};
use fde_core::convolve::FixedPointConfig;
use fde_core::model::{ModelError, SymbolKind};
use fde_core::montecarlo::{empirical_spectrum, histogram, histogram_csv, ks_distance, EmpiricalSpectrum};
use fde_core::parser::{load_config, Config, ParseError};
use fde_core::spectra::{
    default_grid, iteration_summary, moments_from_density, parse_grid, resolve_density, DensityCurve, Pipeline,
    SolveOptions, SpectraError, DEFAULT_GRID_POINTS,
};
use fde_core::transforms::{SemiIntegrator, SolveError};
use thiserror::Error;

use crate::args::{OracleArgs, RunArgs, Settings};
use crate::report::{IterationStats, RunReport, Status};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or model.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CombinatoricsError> for CliError {
    fn from(e: CombinatoricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Model(m) => m.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SpectraError> for CliError {
    fn from(e: SpectraError) -> Self {
        match e {
            SpectraError::BadGrid(_) | SpectraError::BadEpsilon(_) => CliError::Input(e.to_string()),
            SpectraError::Solve(s) => s.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Mc,
    Compare,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Mc => "mc",
            Mode::Compare => "compare",
        }
    }
}

/// Runs a solve/mc/compare command and always tries to leave a report behind.
pub fn run(mode: Mode, args: &RunArgs, threads: usize) -> i32 {
    let mut report = RunReport::new(mode.name(), &args.config, threads);
    let outcome = execute(mode, args, &mut report);
    let code = match &outcome {
        Ok(()) if report.status == Status::Partial => 2,
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            report.status = Status::Failed;
            report.error = Some(e.to_string());
            e.exit_code()
        }
    };
    report.exit_code = code;
    match write_file(&args.out, "report.json", &report.to_json()) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == 0 {
                1
            } else {
                code
            }
        }
    }
}

fn execute(mode: Mode, args: &RunArgs, report: &mut RunReport) -> Result<(), CliError> {
    let started = Instant::now();
    let config = load_config(&args.config)?;
    echo_config(&config, report);
    let settings = Settings::resolve(args, &config.solve, &config.mc);
    report.config.settings = Some(settings.clone());
    report.timings.insert("parse".into(), started.elapsed().as_secs_f64());

    let curve = if mode == Mode::Mc {
        None
    } else {
        Some(solve(&config, &settings, report)?)
    };
    let spectrum = if mode == Mode::Solve {
        None
    } else {
        Some(sample(&config, &settings, report)?)
    };

    if let Some(curve) = &curve {
        write_file(&args.out, "density.csv", &curve.to_csv())?;
    }
    if let Some(spec) = &spectrum {
        let (lo, hi) = match (spec.eigenvalues.first(), spec.eigenvalues.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (0.0, 0.0),
        };
        write_file(&args.out, "histogram.csv", &histogram_csv(&histogram(&spec.eigenvalues, settings.bins, lo, hi)))?;
    }
    if let (Some(curve), Some(spec)) = (&curve, &spectrum) {
        let ks = ks_distance(spec, curve);
        log::info!("KS distance {ks:.4}");
        report.ks_distance = Some(ks);
    }
    if args.gnuplot {
        write_file(&args.out, "plot.gp", &gnuplot_script(curve.is_some(), spectrum.is_some()))?;
    }
    report.timings.insert("total".into(), started.elapsed().as_secs_f64());
    Ok(())
}

fn echo_config(config: &Config, report: &mut RunReport) {
    let spec = &config.model;
    report.config.expr = Some(config.expr.clone());
    report.config.blocks = Some(spec.space.block_dims().to_vec());
    report.config.target = Some(spec.target_block);
    report.config.symbols = spec
        .symbols
        .iter()
        .map(|s| {
            let kind = match s.kind {
                SymbolKind::Deterministic { .. } => "matrix",
                SymbolKind::Circular { .. } => "circular",
                SymbolKind::Semicircular { .. } => "semicircular",
                SymbolKind::HaarUnitary { .. } => "haar",
            };
            format!("{}:{kind}", s.name)
        })
        .collect();
}

fn solve(config: &Config, settings: &Settings, report: &mut RunReport) -> Result<DensityCurve, CliError> {
    let fixed_point = FixedPointConfig {
        tol: settings.tol,
        max_iter: settings.max_iter,
        damping: settings.damping,
    };
    fixed_point.check().map_err(CliError::Input)?;
    let integrator = match settings.quad_nodes {
        Some(0) => return Err(CliError::Input("--quad-nodes must be positive".into())),
        Some(n) => SemiIntegrator::gauss(n),
        None => SemiIntegrator::Analytic,
    };
    let opts = SolveOptions {
        fixed_point,
        integrator,
    };

    let t = Instant::now();
    let pipeline = Pipeline::new(&config.model)?;
    report.timings.insert("linearize".into(), t.elapsed().as_secs_f64());
    log::info!(
        "linearization of size {} with {} free summands",
        pipeline.linearization.size,
        pipeline.summands.len()
    );

    let t = Instant::now();
    let grid = match &settings.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&config.model, settings.seed, DEFAULT_GRID_POINTS)?,
    };
    report.timings.insert("grid".into(), t.elapsed().as_secs_f64());
    report.grid_size = Some(grid.len());
    report.epsilon = Some(settings.epsilon);

    let t = Instant::now();
    let curve = resolve_density(&pipeline, &grid, settings.epsilon, &opts)?;
    report.timings.insert("solve".into(), t.elapsed().as_secs_f64());

    report.iterations = iteration_summary(&curve).map(|(min, median, max)| IterationStats { min, median, max });
    report.failed_points = curve.failed.iter().map(|&j| curve.grid[j]).collect();
    report.mass = Some(curve.mass);
    report.min_raw = Some(curve.min_raw);
    match moments_from_density(&curve, 4) {
        Ok(m) => report.moments = Some(m),
        Err(e) => log::warn!("moments skipped: {e}"),
    }
    if curve.is_partial() {
        log::warn!("{} grid points failed and were interpolated", curve.failed.len());
        report.status = Status::Partial;
    }
    Ok(curve)
}

fn sample(config: &Config, settings: &Settings, report: &mut RunReport) -> Result<EmpiricalSpectrum, CliError> {
    if settings.mc_m == 0 || settings.mc_reps == 0 {
        return Err(CliError::Input("--mc-m and --mc-reps must be positive".into()));
    }
    let t = Instant::now();
    let spectrum = empirical_spectrum(&config.model, settings.mc_m, settings.mc_reps, settings.seed)?;
    report.timings.insert("monte_carlo".into(), t.elapsed().as_secs_f64());
    report.eigenvalue_count = Some(spectrum.eigenvalues.len());
    Ok(spectrum)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", dir.join(name).display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), contents).map_err(io)
}

fn gnuplot_script(density: bool, hist: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    let mut plots = Vec::new();
    if hist {
        s.push_str("stats 'histogram.csv' using 1:2 nooutput\n");
        s.push_str("bw = (STATS_max_x - STATS_min_x) / (STATS_records - 1)\n");
        s.push_str("total = STATS_sum_y\n");
        plots.push("'histogram.csv' using 1:($2/(total*bw)) with boxes title 'Monte Carlo'".to_string());
    }
    if density {
        plots.push("'density.csv' using 1:2 with lines lw 2 title 'density'".to_string());
    }
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Answers the requested counts one per line: ncp, pairings, catalan, word.
pub fn oracle(args: &OracleArgs) -> Result<Vec<String>, CliError> {
    let mut lines = Vec::new();
    if let Some(n) = args.ncp {
        lines.push(ncp2_count(n)?.to_string());
    }
    if let Some(n) = args.pairings {
        lines.push(pairing_count(n)?.to_string());
    }
    if let Some(n) = args.catalan {
        if n > 33 {
            return Err(CliError::Input(format!("catalan({n}) overflows 64 bits")));
        }
        lines.push(catalan(n).to_string());
    }
    if let Some(w) = &args.word {
        let word = Star::parse_word(w).map_err(CliError::Input)?;
        lines.push(circular_word_moment(&word)?.to_string());
    }
    if lines.is_empty() {
        return Err(CliError::Input("oracle needs one of --ncp, --pairings, --catalan, --word".into()));
    }
    Ok(lines)
}

/// `(n − 1)!!`, counted in closed form so large orders stay cheap.
fn pairing_count(n: usize) -> Result<u128, CliError> {
    if n % 2 == 1 {
        return Err(CombinatoricsError::OddOrder(n).into());
    }
    (1..n as u128)
        .step_by(2)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .ok_or_else(|| CliError::Input(format!("({n} - 1)!! overflows 128 bits")))
}
