//! Dense complex kernels shared by every stage of the solver.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Inversion is a hand-rolled LU
//! with partial pivoting so that the singularity threshold is explicit and
//! deterministic; the Hermitian eigensolver and QR are delegated to nalgebra.

mod quadrature;

pub use quadrature::{midpoint_rule, semicircle_rule, QuadratureRule};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;

/// Relative pivot threshold: a pivot below `PIVOT_RTOL * max_row_norm` is singular.
pub const PIVOT_RTOL: f64 = 1e-13;

/// Tolerance (relative to `max(1, max|m_ij|)`) for accepting a matrix as Hermitian.
pub const HERMITIAN_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    Singular { pivot: f64, threshold: f64 },
    #[error("matrix is not Hermitian (max |M - M*| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("non-finite entry produced by a kernel")]
    NonFinite,
    #[error("matrix square root did not converge after {0} iterations")]
    SqrtNoConvergence(usize),
}

pub const fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest absolute entrywise difference. Panics on shape mismatch.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |M - M*|`; infinite for non-square input.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Exact (bitwise) Hermitian test.
pub fn is_exactly_hermitian(m: &CMatrix) -> bool {
    m.is_square() && hermitian_deviation(m) == 0.0
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// LU factorization with partial pivoting, `P A = L U` stored in place.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(m: &CMatrix) -> Result<Self, NumericsError> {
        if !m.is_square() {
            return Err(NumericsError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        let row_norm = (0..n)
            .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let threshold = PIVOT_RTOL * row_norm;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot > threshold) {
                return Err(NumericsError::Singular {
                    pivot: pivot.max(0.0),
                    threshold,
                });
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
                sign = -sign;
            }
            let inv_pivot = lu[(k, k)].inv();
            for i in (k + 1)..n {
                let factor = lu[(i, k)] * inv_pivot;
                lu[(i, k)] = factor;
                if factor != C64::new(0.0, 0.0) {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn determinant(&self) -> C64 {
        (0..self.dim()).fold(C64::new(self.sign, 0.0), |acc, i| acc * self.lu[(i, i)])
    }

    /// Solves `A X = B` for a right-hand side with `dim()` rows.
    pub fn solve(&self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim();
        assert_eq!(rhs.nrows(), n);
        let mut x = CMatrix::zeros(n, rhs.ncols());
        for (i, &p) in self.perm.iter().enumerate() {
            x.set_row(i, &rhs.row(p));
        }
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut acc = x[(i, c)];
                for k in 0..i {
                    acc -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[(i, c)];
                for k in (i + 1)..n {
                    acc -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc / self.lu[(i, i)];
            }
        }
        x
    }

    pub fn inverse(&self) -> CMatrix {
        self.solve(&CMatrix::identity(self.dim(), self.dim()))
    }
}

/// Inverse of a square matrix; `Singular` when a pivot falls below
/// `1e-13 * max row norm` (an evaluation point too close to the spectrum).
pub fn invert(m: &CMatrix) -> Result<CMatrix, NumericsError> {
    let inv = Lu::factor(m)?.inverse();
    if !all_finite(&inv) {
        return Err(NumericsError::NonFinite);
    }
    Ok(inv)
}

/// Real eigenvalues of a Hermitian matrix in ascending order.
pub fn herm_eig(m: &CMatrix) -> Result<Vec<f64>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let deviation = hermitian_deviation(m);
    if deviation > HERMITIAN_RTOL * max_abs(m).max(1.0) {
        return Err(NumericsError::NotHermitian { deviation });
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Principal square root via a complex Schur form and the triangular
/// recurrence `R_ij = (T_ij - Σ R_ik R_kj) / (R_ii + R_jj)`.
///
/// Requires that `m` has no eigenvalue on the closed negative real axis.
pub fn sqrtm(m: &CMatrix) -> Result<CMatrix, NumericsError> {
    const MAX_ITER: usize = 10_000;
    let n = m.nrows();
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !all_finite(m) {
        return Err(NumericsError::NonFinite);
    }
    let (q, t) = m
        .clone()
        .try_schur(f64::EPSILON, MAX_ITER)
        .ok_or(NumericsError::SqrtNoConvergence(MAX_ITER))?
        .unpack();
    let mut r = CMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = t[(i, i)].sqrt();
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            let den = r[(i, i)] + r[(j, j)];
            if den.norm() == 0.0 {
                return Err(NumericsError::Singular {
                    pivot: 0.0,
                    threshold: 0.0,
                });
            }
            r[(i, j)] = s / den;
        }
    }
    let out = &q * r * q.adjoint();
    if !all_finite(&out) {
        return Err(NumericsError::NonFinite);
    }
    Ok(out)
}

/// Dense product helper over slices of matrices (left to right).
pub fn product<'a, I: IntoIterator<Item = &'a CMatrix>>(rows: usize, factors: I) -> CMatrix {
    let mut acc: Option<CMatrix> = None;
    for f in factors {
        acc = Some(match acc {
            None => f.clone(),
            Some(a) => a * f,
        });
    }
    acc.unwrap_or_else(|| CMatrix::identity(rows, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = random_matrix(n, rng);
        (&a + a.adjoint()) * c64(0.5, 0.0)
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let id = CMatrix::identity(4, 4);
        assert_eq!(invert(&id).unwrap(), id);
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(0.0, 2.0), c64(0.0, 1.0)]));
        let inv = invert(&d).unwrap();
        assert!((inv[(0, 0)] - c64(0.0, -0.5)).norm() < 1e-15);
        assert!((inv[(1, 1)] - c64(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(inv[(0, 1)], c64(0.0, 0.0));
    }

    #[test]
    fn invert_residual_on_random_well_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(8, &mut rng) + CMatrix::identity(8, 8) * c64(4.0, 0.0);
        let inv = invert(&m).unwrap();
        let resid = max_abs_diff(&(&m * &inv), &CMatrix::identity(8, 8));
        assert!(resid <= 1e-10, "residual {resid}");
        let back = invert(&inv).unwrap();
        assert!(max_abs_diff(&back, &m) <= 1e-9);
    }

    #[test]
    fn invert_rejects_singular() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(2.0, 0.0), c64(2.0, 0.0), c64(4.0, 0.0)]);
        assert!(matches!(invert(&m), Err(NumericsError::Singular { .. })));
        assert!(matches!(invert(&CMatrix::zeros(3, 3)), Err(NumericsError::Singular { .. })));
        assert!(matches!(invert(&CMatrix::zeros(2, 3)), Err(NumericsError::NotSquare { .. })));
    }

    #[test]
    fn determinant_of_triangular() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(0.0, 1.0), c64(5.0, 0.0), c64(0.0, 0.0), c64(3.0, 0.0)]);
        let det = Lu::factor(&m).unwrap().determinant();
        assert!((det - c64(0.0, 3.0)).norm() < 1e-15);
    }

    #[test]
    fn herm_eig_small_cases() {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(3.0, 0.0), c64(1.0, 0.0), c64(2.0, 0.0)]));
        assert_eq!(herm_eig(&d).unwrap(), vec![1.0, 2.0, 3.0]);
        let x = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]);
        let ev = herm_eig(&x).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn herm_eig_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(16, &mut rng);
        let ev = herm_eig(&h).unwrap();
        let trace: f64 = (0..16).map(|i| h[(i, i)].re).sum();
        assert!((ev.iter().sum::<f64>() - trace).abs() <= 1e-9);
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn herm_eig_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        assert!(matches!(herm_eig(&m), Err(NumericsError::NotHermitian { .. })));
    }

    #[test]
    fn herm_eig_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(10, &mut rng);
        let q = random_matrix(10, &mut rng).qr().q();
        let rotated = &q * &h * q.adjoint();
        let rotated = (&rotated + rotated.adjoint()) * c64(0.5, 0.0);
        let a = herm_eig(&h).unwrap();
        let b = herm_eig(&rotated).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn sqrtm_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(5, &mut rng) + CMatrix::identity(5, 5) * c64(3.0, 1.0);
        let s = sqrtm(&m).unwrap();
        assert!(max_abs_diff(&(&s * &s), &m) < 1e-11);
        // principal branch on a scalar with negative real part
        let neg = CMatrix::from_element(1, 1, c64(-4.0, 1e-6));
        let r = sqrtm(&neg).unwrap()[(0, 0)];
        assert!(r.re > 0.0 && (r - c64(-4.0, 1e-6).sqrt()).norm() < 1e-12);
    }
}
