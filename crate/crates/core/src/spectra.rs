//! Scalar Cauchy transform of a model on a grid and its Stieltjes inversion.

use rayon::prelude::*;
use thiserror::Error;

use crate::convolve::{fold, FixedPointConfig};
use crate::linearize::{linearize, split_classes, FreeSummand, Linearization};
use crate::model::{eliminate_haar, validate, ModelError, ModelSpec};
use crate::numerics::C64;
use crate::transforms::{lambda_embed, SemiIntegrator, SolveError};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_GRID_POINTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("density mass {mass:.4} is below 0.9; widen the grid")]
    LowMass { mass: f64 },
    #[error("every grid point failed; first error: {0}")]
    AllPointsFailed(SolveError),
}

impl From<ModelError> for SpectraError {
    fn from(e: ModelError) -> Self {
        SpectraError::Solve(SolveError::Model(e))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub fixed_point: FixedPointConfig,
    pub integrator: SemiIntegrator,
}

/// Linearized model, prepared once and evaluated at many points.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub spec: ModelSpec,
    pub linearization: Linearization,
    pub summands: Vec<FreeSummand>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStats {
    pub iterations: usize,
    pub inner_iterations: usize,
    pub residual: f64,
}

impl Pipeline {
    /// Validates, removes Haar unitaries, linearizes and splits into free
    /// summands.
    pub fn new(spec: &ModelSpec) -> Result<Self, ModelError> {
        let spec = eliminate_haar(&validate(spec)?)?;
        let linearization = linearize(&spec)?;
        let summands = split_classes(&linearization);
        Ok(Pipeline {
            spec,
            linearization,
            summands,
        })
    }

    pub fn cauchy_at(&self, z: C64, eps: f64, opts: &SolveOptions) -> Result<(C64, PointStats), SolveError> {
        if !(z.im > 0.0) {
            return Err(SolveError::NotInUpperHalfPlane { min_im: z.im });
        }
        let m = self.linearization.size;
        let k = self.spec.space.num_blocks();
        let b = lambda_embed(z, eps, m, k);
        let (g, report) = fold(&self.summands, &self.spec.space, &b, &opts.fixed_point, &opts.integrator)?;
        Ok((
            g.blocks[self.spec.target_block][(0, 0)],
            PointStats {
                iterations: report.iterations,
                inner_iterations: report.inner_iterations,
                residual: report.residual,
            },
        ))
    }

    /// `2 G_{ε/2}(z) − G_ε(z)`: cancels the first-order bias that the `iε`
    /// entries of `Λ_ε` put on the corner.
    pub fn cauchy_extrapolated(&self, z: C64, eps: f64, opts: &SolveOptions) -> Result<(C64, PointStats), SolveError> {
        let (coarse, a) = self.cauchy_at(z, eps, opts)?;
        let (fine, b) = self.cauchy_at(z, eps / 2.0, opts)?;
        Ok((
            fine * 2.0 - coarse,
            PointStats {
                iterations: a.iterations + b.iterations,
                inner_iterations: a.inner_iterations + b.inner_iterations,
                residual: a.residual.max(b.residual),
            },
        ))
    }
}

/// `G(z)` of the model compressed to its target block, computed from the
/// corner of the linearization at `Λ_ε(z)`.
pub fn scalar_cauchy(spec: &ModelSpec, z: C64, eps: f64, opts: &SolveOptions) -> Result<C64, SpectraError> {
    Ok(Pipeline::new(spec)?.cauchy_at(z, eps, opts)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    /// Clamped to be nonnegative.
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub mass: f64,
    /// Smallest density before clamping.
    pub min_raw: f64,
    /// Indices whose evaluation failed; their values are interpolated.
    pub failed: Vec<usize>,
    pub stats: Vec<Option<PointStats>>,
    pub experimental: bool,
}

impl DensityCurve {
    /// Set when isolated grid points failed to evaluate.
    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,density\n");
        for (t, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{t:e},{v:e}\n"));
        }
        out
    }

    /// Cumulative trapezoidal integral at every grid point, ending at `mass`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.grid.len());
        out.push(0.0);
        for j in 1..self.grid.len() {
            acc += 0.5 * (self.values[j] + self.values[j - 1]) * (self.grid[j] - self.grid[j - 1]);
            out.push(acc);
        }
        out
    }
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum()
}

/// `n` equispaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Parses `"a:b:n"`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, SpectraError> {
    let bad = || SpectraError::BadGrid(format!("expected \"a:b:n\", got {s:?}"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = a.parse().map_err(|_| bad())?;
    let hi: f64 = b.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || n < 2 {
        return Err(SpectraError::BadGrid(format!("need a < b and n >= 2, got {s:?}")));
    }
    Ok(linspace(lo, hi, n))
}

fn check_grid(grid: &[f64]) -> Result<(), SpectraError> {
    if grid.len() < 2 {
        return Err(SpectraError::BadGrid("need at least two points".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SpectraError::BadGrid("grid must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// `ρ_ε(t) = −Im G(t + iε) / π` at every grid point, in parallel.
pub fn resolve_density(
    pipeline: &Pipeline,
    grid: &[f64],
    eps: f64,
    opts: &SolveOptions,
) -> Result<DensityCurve, SpectraError> {
    check_grid(grid)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SpectraError::BadEpsilon(eps));
    }
    let results: Vec<Result<(C64, PointStats), SolveError>> = grid
        .par_iter()
        .map(|&t| pipeline.cauchy_at(C64::new(t, eps), eps, opts))
        .collect();

    let mut raw = vec![f64::NAN; grid.len()];
    let mut stats = vec![None; grid.len()];
    let mut failed = Vec::new();
    let mut first_err = None;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok((g, s)) => {
                raw[j] = -g.im / std::f64::consts::PI;
                stats[j] = Some(s);
            }
            Err(e) => {
                log::debug!("grid point t = {} failed: {e}", grid[j]);
                failed.push(j);
                first_err.get_or_insert(e);
            }
        }
    }
    if failed.len() == grid.len() {
        return Err(SpectraError::AllPointsFailed(first_err.expect("nonempty grid")));
    }
    if !failed.is_empty() {
        log::info!("{} of {} grid points failed", failed.len(), grid.len());
        fill_gaps(grid, &mut raw);
    }
    Ok(assemble(grid.to_vec(), raw, eps, failed, stats, false))
}

/// Linear interpolation over NaN entries; constant extension at the ends.
fn fill_gaps(grid: &[f64], values: &mut [f64]) {
    let known: Vec<usize> = (0..values.len()).filter(|&j| !values[j].is_nan()).collect();
    for j in 0..values.len() {
        if !values[j].is_nan() {
            continue;
        }
        let right = known.partition_point(|&i| i < j);
        values[j] = match (right.checked_sub(1).map(|i| known[i]), known.get(right)) {
            (Some(l), Some(&r)) => {
                let s = (grid[j] - grid[l]) / (grid[r] - grid[l]);
                values[l] + s * (values[r] - values[l])
            }
            (Some(l), None) => values[l],
            (None, Some(&r)) => values[r],
            (None, None) => 0.0,
        };
    }
}

fn assemble(
    grid: Vec<f64>,
    raw: Vec<f64>,
    epsilon: f64,
    failed: Vec<usize>,
    stats: Vec<Option<PointStats>>,
    experimental: bool,
) -> DensityCurve {
    let min_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let values: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let mass = trapezoid(&grid, &values);
    DensityCurve {
        grid,
        values,
        epsilon,
        mass,
        min_raw,
        failed,
        stats,
        experimental,
    }
}

/// Experimental two-step extrapolation `2ρ_{ε/2} − ρ_ε`, which removes the
/// first-order broadening term at points where the density is smooth.
pub fn richardson_density(
    pipeline: &Pipeline,
    grid: &[f64],
    eps: f64,
    opts: &SolveOptions,
) -> Result<DensityCurve, SpectraError> {
    let coarse = resolve_density(pipeline, grid, eps, opts)?;
    let fine = resolve_density(pipeline, grid, eps / 2.0, opts)?;
    let raw: Vec<f64> = fine
        .values
        .iter()
        .zip(&coarse.values)
        .map(|(f, c)| 2.0 * f - c)
        .collect();
    let mut failed: Vec<usize> = coarse.failed.iter().chain(&fine.failed).copied().collect();
    failed.sort_unstable();
    failed.dedup();
    Ok(assemble(grid.to_vec(), raw, eps, failed, fine.stats, true))
}

/// `∫ t^k ρ(t) dt / mass` for `k = 1..=k_max`.
pub fn moments_from_density(curve: &DensityCurve, k_max: usize) -> Result<Vec<f64>, SpectraError> {
    if !(curve.mass >= 0.9) {
        return Err(SpectraError::LowMass { mass: curve.mass });
    }
    Ok((1..=k_max)
        .map(|k| {
            let weighted: Vec<f64> = curve
                .grid
                .iter()
                .zip(&curve.values)
                .map(|(t, v)| t.powi(k as i32) * v)
                .collect();
            trapezoid(&curve.grid, &weighted) / curve.mass
        })
        .collect())
}

/// Grid around the spectrum of a small Monte Carlo pilot.
///
/// The pilot blow-up is chosen so the target block has at least
/// `PILOT_EIGENVALUES` eigenvalues; the padding is one unit plus a tenth
/// of the pilot's spectral width.
pub fn default_grid(spec: &ModelSpec, seed: u64, points: usize) -> Result<Vec<f64>, SpectraError> {
    const PILOT_EIGENVALUES: usize = 200;
    let n = spec.space.block_dim(spec.target_block);
    let m = PILOT_EIGENVALUES.div_ceil(n).max(2);
    let pilot = crate::montecarlo::empirical_spectrum(spec, m, 1, seed)?;
    let lo = pilot.eigenvalues.first().copied().unwrap_or(0.0);
    let hi = pilot.eigenvalues.last().copied().unwrap_or(0.0);
    let pad = 1.0 + 0.1 * (hi - lo);
    Ok(linspace(lo - pad, hi + pad, points.max(2)))
}

/// Ordered summary of per-point iteration counts: `(min, median, max)`.
pub fn iteration_summary(curve: &DensityCurve) -> Option<(usize, usize, usize)> {
    let mut its: Vec<usize> = curve.stats.iter().flatten().map(|s| s.iterations + s.inner_iterations).collect();
    if its.is_empty() {
        return None;
    }
    its.sort_unstable();
    Some((its[0], its[its.len() / 2], its[its.len() - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RectSpace, Symbol};
    use crate::numerics::{c64, CMatrix};
    use crate::parser::parse_polynomial;

    fn model(blocks: Vec<usize>, symbols: Vec<Symbol>, expr: &str) -> ModelSpec {
        let poly = parse_polynomial(expr).unwrap().to_polynomial();
        ModelSpec::new(RectSpace::new(blocks).unwrap(), symbols, poly, 0)
    }

    fn semicircle() -> ModelSpec {
        model(vec![1], vec![Symbol::semicircular("s", 0)], "s")
    }

    fn wishart() -> ModelSpec {
        model(vec![1], vec![Symbol::circular("c", 0)], "c*c'")
    }

    fn bernoulli() -> ModelSpec {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(1.0, 0.0), c64(-1.0, 0.0)]));
        model(vec![2], vec![Symbol::deterministic("D", d, 0, 0)], "D")
    }

    #[test]
    fn semicircle_transform_at_2i() {
        let g = scalar_cauchy(&semicircle(), c64(0.0, 2.0), DEFAULT_EPSILON, &SolveOptions::default()).unwrap();
        assert!((g - c64(0.0, 1.0 - 2f64.sqrt())).norm() < 1e-12, "{g}");
    }

    #[test]
    fn wishart_transform_solves_mp_equation() {
        let z = c64(1.0, 0.01);
        let g = scalar_cauchy(&wishart(), z, 1e-8, &SolveOptions::default()).unwrap();
        let residual = (g - 1.0 / (z - 1.0 / (1.0 - g))).norm();
        assert!(residual <= 1e-6, "{residual}");
    }

    #[test]
    fn extrapolation_removes_epsilon_bias() {
        let p = Pipeline::new(&wishart()).unwrap();
        let opts = SolveOptions::default();
        let mp = |z: C64, g: C64| (g - 1.0 / (z - 1.0 / (1.0 - g))).norm();
        for t in [0.5, 2.0, 3.5] {
            let z = c64(t, 0.01);
            let plain = p.cauchy_at(z, 1e-6, &opts).unwrap().0;
            let extra = p.cauchy_extrapolated(z, 1e-6, &opts).unwrap().0;
            assert!(mp(z, plain) > 1e-7);
            assert!(mp(z, extra) < 1e-9, "{}", mp(z, extra));
        }
    }

    #[test]
    fn deterministic_transform_is_resolvent_trace() {
        let z = c64(0.3, 0.2);
        let g = scalar_cauchy(&bernoulli(), z, DEFAULT_EPSILON, &SolveOptions::default()).unwrap();
        let want = 0.5 * (1.0 / (z - 1.0) + 1.0 / (z + 1.0));
        assert!((g - want).norm() <= 1e-10);
    }

    #[test]
    fn lower_half_plane_is_rejected() {
        let r = scalar_cauchy(&semicircle(), c64(0.0, -1.0), DEFAULT_EPSILON, &SolveOptions::default());
        assert!(matches!(r, Err(SpectraError::Solve(SolveError::NotInUpperHalfPlane { .. }))));
    }

    #[test]
    fn semicircle_density_at_origin_and_mass() {
        let p = Pipeline::new(&semicircle()).unwrap();
        let grid = linspace(-3.0, 3.0, 1001);
        let curve = resolve_density(&p, &grid, DEFAULT_EPSILON, &SolveOptions::default()).unwrap();
        assert!((curve.values[500] - 1.0 / std::f64::consts::PI).abs() < 2e-3);
        assert!(curve.mass >= 0.995 && curve.mass <= 1.001, "{}", curve.mass);
        assert!(curve.min_raw >= -1e-12);
        assert!(!curve.is_partial());
        let m = moments_from_density(&curve, 4).unwrap();
        assert!(m[0].abs() < 1e-3);
        assert!((m[1] - 1.0).abs() < 0.02);
        assert!((m[3] - 2.0).abs() < 0.04);
    }

    #[test]
    fn wishart_density_at_two() {
        let p = Pipeline::new(&wishart()).unwrap();
        let curve = resolve_density(&p, &[1.9, 2.0, 2.1], DEFAULT_EPSILON, &SolveOptions::default()).unwrap();
        assert!((curve.values[1] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 2e-3, "{}", curve.values[1]);
    }

    #[test]
    fn atom_is_broadened_to_cauchy_kernel() {
        let p = Pipeline::new(&bernoulli()).unwrap();
        let curve = resolve_density(&p, &[0.0, 1.0], DEFAULT_EPSILON, &SolveOptions::default()).unwrap();
        let want = 0.5 / (std::f64::consts::PI * DEFAULT_EPSILON);
        assert!((curve.values[1] - want).abs() / want < 1e-3, "{}", curve.values[1]);
    }

    #[test]
    fn halving_epsilon_moves_smooth_density_by_order_epsilon() {
        let p = Pipeline::new(&semicircle()).unwrap();
        let grid = linspace(-1.5, 1.5, 31);
        let opts = SolveOptions::default();
        let a = resolve_density(&p, &grid, 2e-3, &opts).unwrap();
        let b = resolve_density(&p, &grid, 1e-3, &opts).unwrap();
        let diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 5.0 * 1e-3, "{diff}");
    }

    #[test]
    fn richardson_is_flagged_and_closer() {
        let p = Pipeline::new(&semicircle()).unwrap();
        let grid = linspace(-1.5, 1.5, 31);
        let opts = SolveOptions::default();
        let r = richardson_density(&p, &grid, 0.05, &opts).unwrap();
        let plain = resolve_density(&p, &grid, 0.05, &opts).unwrap();
        assert!(r.experimental && !plain.experimental);
        let exact = |t: f64| (4.0 - t * t).sqrt() / (2.0 * std::f64::consts::PI);
        let err = |c: &DensityCurve| c.grid.iter().zip(&c.values).map(|(t, v)| (v - exact(*t)).abs()).fold(0.0, f64::max);
        assert!(err(&r) < err(&plain));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-1:1:3").unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(parse_grid("1:-1:3").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:1").is_err());
        assert!(parse_grid("a:1:4").is_err());
        let g = linspace(-3.0, 3.0, 1000);
        assert_eq!((g.len(), g[0], g[999]), (1000, -3.0, 3.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Pipeline::new(&semicircle()).unwrap();
        let opts = SolveOptions::default();
        assert!(matches!(resolve_density(&p, &[0.0, 0.0], 1e-3, &opts), Err(SpectraError::BadGrid(_))));
        assert!(matches!(resolve_density(&p, &[0.0, 1.0], 0.0, &opts), Err(SpectraError::BadEpsilon(_))));
        let narrow = resolve_density(&p, &[0.0, 0.1], 1e-3, &opts).unwrap();
        assert!(matches!(moments_from_density(&narrow, 2), Err(SpectraError::LowMass { .. })));
    }

    #[test]
    fn failed_points_are_interpolated() {
        let mut v = vec![1.0, f64::NAN, 3.0, f64::NAN];
        fill_gaps(&[0.0, 1.0, 2.0, 3.0], &mut v);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn non_convergent_points_mark_curve_partial() {
        let p = Pipeline::new(&wishart()).unwrap();
        let opts = SolveOptions {
            fixed_point: FixedPointConfig {
                max_iter: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        let curve = resolve_density(&p, &[0.01, 1.0, 8.0], DEFAULT_EPSILON, &opts).unwrap();
        assert!(curve.is_partial());
        assert!(curve.stats[2].is_some());
    }

    #[test]
    fn grid_evaluation_is_order_independent() {
        let p = Pipeline::new(&wishart()).unwrap();
        let opts = SolveOptions::default();
        let grid = linspace(-0.5, 4.5, 11);
        let full = resolve_density(&p, &grid, DEFAULT_EPSILON, &opts).unwrap();
        for (j, t) in grid.iter().enumerate() {
            let single = p.cauchy_at(c64(*t, DEFAULT_EPSILON), DEFAULT_EPSILON, &opts).unwrap().0;
            assert_eq!((-single.im / std::f64::consts::PI).max(0.0).to_bits(), full.values[j].to_bits());
        }
    }

    #[test]
    fn default_grid_covers_semicircle() {
        let g = default_grid(&semicircle(), 7, DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(g.len(), DEFAULT_GRID_POINTS);
        assert!(g[0] < -2.5 && g[g.len() - 1] > 2.5);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = Pipeline::new(&semicircle()).unwrap();
        let curve = resolve_density(&p, &[0.0, 0.5], 1e-3, &SolveOptions::default()).unwrap();
        let csv = curve.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,density");
        assert_eq!(lines.len(), 3);
        let v: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, curve.values[0]);
    }
}
