//! Finite random matrix ensembles `Q_m` obtained by blowing up the model.
//!
//! Deterministic `A` becomes `A ⊗ I_m`; a random symbol on block `j`
//! becomes an `n_j m × n_j m` Ginibre, GUE or Haar matrix.

use std::collections::HashMap;

use nalgebra::linalg::QR;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{validate, Factor, ModelError, ModelSpec, Polynomial, SymbolKind};
use crate::numerics::{c64, herm_eig, hermitian_deviation, CMatrix, C64};
use crate::spectra::DensityCurve;
use crate::transforms::SolveError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    /// Pooled and sorted.
    pub eigenvalues: Vec<f64>,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Independent stream for realization `index` under `seed`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Complex Ginibre matrix with entry variance `1/n`.
pub fn ginibre(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let s = (0.5 / n as f64).sqrt();
    CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c64(re * s, im * s)
    })
}

/// GUE normalized so the spectrum fills `[−2, 2]`.
pub fn gue(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let g = ginibre(n, rng);
    let mut h = (&g + g.adjoint()) * c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    for i in 0..n {
        h[(i, i)].im = 0.0;
        for j in 0..i {
            h[(i, j)] = h[(j, i)].conj();
        }
    }
    h
}

/// Haar unitary from the QR factorization of a Ginibre matrix, with the
/// columns rotated by the phases of `R`'s diagonal.
pub fn haar_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let qr = QR::new(ginibre(n, rng));
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// `A ⊗ I_m`: entry `a_ij` becomes the block `a_ij I_m`.
pub fn blow_up(a: &CMatrix, m: usize) -> CMatrix {
    CMatrix::from_fn(a.nrows() * m, a.ncols() * m, |r, c| {
        if r % m == c % m {
            a[(r / m, c / m)]
        } else {
            c64(0.0, 0.0)
        }
    })
}

/// One matrix per symbol, drawn in declaration order.
pub fn sample_symbols(spec: &ModelSpec, m: usize, rng: &mut ChaCha8Rng) -> HashMap<String, CMatrix> {
    spec.symbols
        .iter()
        .map(|s| {
            let mat = match &s.kind {
                SymbolKind::Deterministic { matrix, .. } => blow_up(matrix, m),
                SymbolKind::Circular { block } => ginibre(spec.space.block_dim(*block) * m, rng),
                SymbolKind::Semicircular { block } => gue(spec.space.block_dim(*block) * m, rng),
                SymbolKind::HaarUnitary { block } => haar_unitary(spec.space.block_dim(*block) * m, rng),
            };
            (s.name.clone(), mat)
        })
        .collect()
}

/// Corner `P_t P(X) P_t` of a polynomial evaluated on sampled matrices.
/// Words that do not start and end on block `t` do not reach the corner.
pub fn evaluate_corner(
    spec: &ModelSpec,
    poly: &Polynomial,
    mats: &HashMap<String, CMatrix>,
    m: usize,
    target: usize,
) -> Result<CMatrix, ModelError> {
    let n = spec.space.block_dim(target) * m;
    let mut out = CMatrix::zeros(n, n);
    for mono in &poly.monomials {
        if mono.word.is_empty() {
            for i in 0..n {
                out[(i, i)] += mono.coeff;
            }
            continue;
        }
        let blocks: Vec<(usize, usize)> = mono
            .word
            .iter()
            .map(|f| spec.factor_blocks(f))
            .collect::<Result<_, _>>()?;
        if let Some(w) = blocks.windows(2).position(|w| w[0].1 != w[1].0) {
            return Err(ModelError::BlockMismatch {
                word: crate::model::format_word(&mono.word),
                detail: format!("factors {} and {} do not chain", w + 1, w + 2),
            });
        }
        if blocks[0].0 != target || blocks[blocks.len() - 1].1 != target {
            continue;
        }
        let mut acc = factor_matrix(&mono.word[0], mats);
        for f in &mono.word[1..] {
            acc = &acc * factor_matrix(f, mats);
        }
        out += acc * mono.coeff;
    }
    Ok(out)
}

fn factor_matrix(f: &Factor, mats: &HashMap<String, CMatrix>) -> CMatrix {
    let a = &mats[&f.symbol];
    if f.adjoint {
        a.adjoint()
    } else {
        a.clone()
    }
}

/// Hermitian target-block corner of one realization of `Q_m`.
pub fn sample_ensemble(spec: &ModelSpec, m: usize, seed: u64) -> Result<CMatrix, SolveError> {
    let spec = validate(spec)?;
    sample_validated(&spec, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_validated(spec: &ModelSpec, m: usize, rng: &mut ChaCha8Rng) -> Result<CMatrix, SolveError> {
    let mats = sample_symbols(spec, m, rng);
    let mut a = evaluate_corner(spec, &spec.polynomial, &mats, m, spec.target_block)?;
    let deviation = hermitian_deviation(&a);
    if deviation > 1e-12 * crate::numerics::max_abs(&a).max(1.0) {
        return Err(crate::numerics::NumericsError::NotHermitian { deviation }.into());
    }
    let adj = a.adjoint();
    a = (&a + adj) * c64(0.5, 0.0);
    Ok(a)
}

/// Pooled eigenvalues of `reps` independent realizations.
pub fn empirical_spectrum(spec: &ModelSpec, m: usize, reps: usize, seed: u64) -> Result<EmpiricalSpectrum, SolveError> {
    let spec = validate(spec)?;
    let per_rep: Vec<Result<Vec<f64>, SolveError>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let a = sample_validated(&spec, m, &mut realization_rng(seed, i as u64))?;
            Ok(herm_eig(&a)?)
        })
        .collect();
    let mut eigenvalues = Vec::with_capacity(reps * spec.space.block_dim(spec.target_block) * m);
    for r in per_rep {
        eigenvalues.extend(r?);
    }
    eigenvalues.sort_by(f64::total_cmp);
    Ok(EmpiricalSpectrum {
        eigenvalues,
        m,
        reps,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: C64,
    /// Standard error of the real part of the mean.
    pub std_err: f64,
    pub reps: usize,
}

/// Monte Carlo estimate of `E tr_N(P_t W P_t)` for an arbitrary polynomial
/// `W` in the model's symbols, with `tr_N` the normalized trace.
pub fn trace_moment(
    spec: &ModelSpec,
    poly: &Polynomial,
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<MomentEstimate, SolveError> {
    let t = spec.target_block;
    let n = (spec.space.block_dim(t) * m) as f64;
    let samples: Vec<Result<C64, ModelError>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mats = sample_symbols(spec, m, &mut realization_rng(seed, i as u64));
            Ok(evaluate_corner(spec, poly, &mats, m, t)?.trace() / n)
        })
        .collect();
    let samples: Vec<C64> = samples.into_iter().collect::<Result<_, _>>()?;
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<C64>() / k;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s.re - mean.re).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(MomentEstimate {
        mean,
        std_err: (var / k).sqrt(),
        reps,
    })
}

/// Bin centers and counts over `[lo, hi]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, usize)> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi || width <= 0.0 {
            continue;
        }
        let j = (((v - lo) / width) as usize).min(bins - 1);
        counts[j] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(j, c)| (lo + (j as f64 + 0.5) * width, c))
        .collect()
}

pub fn histogram_csv(hist: &[(f64, usize)]) -> String {
    let mut out = String::from("bin_center,count\n");
    for (c, n) in hist {
        out.push_str(&format!("{c:e},{n}\n"));
    }
    out
}

/// CDF of a density curve, linear between grid points, renormalized by
/// its mass.
pub fn curve_cdf(curve: &DensityCurve) -> impl Fn(f64) -> f64 + '_ {
    let cum = curve.cumulative();
    let mass = cum.last().copied().unwrap_or(0.0);
    move |x: f64| {
        let g = &curve.grid;
        let v = &curve.values;
        if mass <= 0.0 || g.is_empty() || x <= g[0] {
            return 0.0;
        }
        if x >= g[g.len() - 1] {
            return 1.0;
        }
        let j = g.partition_point(|&t| t <= x) - 1;
        let h = g[j + 1] - g[j];
        let d = x - g[j];
        let partial = v[j] * d + (v[j + 1] - v[j]) * d * d / (2.0 * h);
        ((cum[j] + partial) / mass).clamp(0.0, 1.0)
    }
}

/// `sup_x |F_emp(x) − F_curve(x)|`.
pub fn ks_distance(emp: &EmpiricalSpectrum, curve: &DensityCurve) -> f64 {
    let x = &emp.eigenvalues;
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let cdf = curve_cdf(curve);
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let f = cdf(xi);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic of sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
