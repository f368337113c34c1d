//! Operator-valued Cauchy and h-transforms over `B = M_m(ℂ) ⊗ span{P_0, …, P_k}`.

use thiserror::Error;

use crate::linearize::{DetPart, SemiPart};
use crate::model::{ModelError, RectSpace};
use crate::numerics::{
    c64, herm_eig, invert, max_abs, semicircle_rule, midpoint_rule, sqrtm, CMatrix, Lu, NumericsError,
    QuadratureRule, C64,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("argument is not in the upper half-plane (min Im = {min_im:e})")]
    NotInUpperHalfPlane { min_im: f64 },
    #[error("fixed-point iteration did not converge in {iterations} steps (residual {residual:e}); reduce the damping or increase epsilon")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("iterate left the upper half-plane at step {iteration} (min Im = {min_im:e}); increase epsilon")]
    LeftHalfPlane { iteration: usize, min_im: f64 },
}

/// `Σ_l blocks[l] ⊗ P_l`, each block an `m × m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BElement {
    pub blocks: Vec<CMatrix>,
}

/// Smallest eigenvalue of `Im(b)` over all blocks; `b ∈ H⁺(B)` iff positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlaneCert {
    pub min_im: f64,
}

impl BElement {
    pub fn new(blocks: Vec<CMatrix>) -> Self {
        BElement { blocks }
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        BElement::new(vec![CMatrix::zeros(m, m); k])
    }

    /// The same matrix in every block.
    pub fn uniform(a: &CMatrix, k: usize) -> Self {
        BElement::new(vec![a.clone(); k])
    }

    pub fn size(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn map(&self, f: impl Fn(&CMatrix) -> CMatrix) -> BElement {
        BElement::new(self.blocks.iter().map(f).collect())
    }

    pub fn zip(&self, other: &BElement, f: impl Fn(&CMatrix, &CMatrix) -> CMatrix) -> BElement {
        BElement::new(self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &BElement) -> BElement {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &BElement) -> BElement {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> BElement {
        self.map(|a| a * s)
    }

    pub fn inverse(&self) -> Result<BElement, NumericsError> {
        Ok(BElement::new(self.blocks.iter().map(invert).collect::<Result<_, _>>()?))
    }

    pub fn max_abs_diff(&self, other: &BElement) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(max_abs).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// `(b − b*) / 2i` of one block, exactly Hermitian.
    pub fn im_part(&self, block: usize) -> CMatrix {
        let b = &self.blocks[block];
        let n = b.nrows();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = c64(b[(i, i)].im, 0.0);
            for j in i + 1..n {
                let v = (b[(i, j)] - b[(j, i)].conj()) * c64(0.0, -0.5);
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        out
    }

    pub fn half_plane(&self) -> Result<HalfPlaneCert, NumericsError> {
        let mut min_im = f64::INFINITY;
        for l in 0..self.blocks.len() {
            let im = self.im_part(l);
            let lo = if im.nrows() == 1 {
                im[(0, 0)].re
            } else {
                herm_eig(&im)?[0]
            };
            min_im = min_im.min(lo);
        }
        Ok(HalfPlaneCert { min_im })
    }

    /// Smallest eigenvalue of `Im(b)`; `-∞` if it cannot be computed.
    pub fn min_im(&self) -> f64 {
        self.half_plane().map(|c| c.min_im).unwrap_or(f64::NEG_INFINITY)
    }
}

/// `Λ_ε(z) = diag(z, iε, …, iε)` in every block.
pub fn lambda_embed(z: C64, eps: f64, m: usize, k: usize) -> BElement {
    let mut d = CMatrix::zeros(m, m);
    d[(0, 0)] = z;
    for i in 1..m {
        d[(i, i)] = c64(0.0, eps);
    }
    BElement::uniform(&d, k)
}

/// Block trace `F`: coefficient of `P_l` in cell `(i, j)` of an `mÑ × mÑ`
/// cell-major matrix is `(1/n_l) Σ_{ñ ∈ l} A[(i,ñ), (j,ñ)]`.
pub fn block_trace(a: &CMatrix, m: usize, space: &RectSpace) -> BElement {
    let n = space.total_dim();
    BElement::new(
        (0..space.num_blocks())
            .map(|l| {
                let range = space.range(l);
                let w = 1.0 / range.len() as f64;
                CMatrix::from_fn(m, m, |i, j| {
                    range.clone().map(|t| a[(i * n + t, j * n + t)]).sum::<C64>() * w
                })
            })
            .collect(),
    )
}

/// `b̂ = Σ_l b_l ⊗ P_l` as an `mÑ × mÑ` cell-major matrix.
pub fn expand(b: &BElement, space: &RectSpace) -> CMatrix {
    let m = b.size();
    let n = space.total_dim();
    let mut out = CMatrix::zeros(m * n, m * n);
    for l in 0..space.num_blocks() {
        for t in space.range(l) {
            for i in 0..m {
                for j in 0..m {
                    out[(i * n + t, j * n + t)] = b.blocks[l][(i, j)];
                }
            }
        }
    }
    out
}

/// Reference route: `F((b̂ − L_det)^{-1})` by dense inversion.
pub fn cauchy_det_dense(part: &DetPart, space: &RectSpace, b: &BElement) -> Result<BElement, SolveError> {
    let a = expand(b, space) - part.dense();
    let inv = invert(&a)?;
    Ok(block_trace(&inv, part.size, space))
}

/// Sparsity structure of a deterministic summand used by [`cauchy_det`].
///
/// The entries only touch a subset `S` of the `(index, cell)` pairs. The
/// plan stores `S` sorted by index, the runs of equal index and the
/// coupling matrix `C` on `S`; none of it depends on the argument.
#[derive(Debug, Clone, PartialEq)]
pub struct WoodburyPlan {
    support: Vec<(usize, usize)>,
    /// `(start, end, block)` of each run of equal index in `support`.
    runs: Vec<(usize, usize, usize)>,
    coupling: CMatrix,
}

impl WoodburyPlan {
    pub fn new(part: &DetPart, space: &RectSpace) -> Self {
        let mut support: Vec<(usize, usize)> = Vec::new();
        for e in &part.entries {
            for l in &e.row_blocks {
                support.extend(space.range(*l).map(|t| (t, e.row)));
            }
            for l in &e.col_blocks {
                support.extend(space.range(*l).map(|t| (t, e.col)));
            }
        }
        support.sort_unstable();
        support.dedup();
        let r = support.len();
        let pos = |p: (usize, usize)| support.binary_search(&p).expect("pair in support");

        let mut coupling = CMatrix::zeros(r, r);
        for e in &part.entries {
            for rl in &e.row_blocks {
                for t in space.range(*rl) {
                    let si = pos((t, e.row));
                    for cl in &e.col_blocks {
                        for u in space.range(*cl) {
                            coupling[(si, pos((u, e.col)))] += e.matrix[(t, u)];
                        }
                    }
                }
            }
        }

        let mut runs = Vec::new();
        let mut start = 0;
        while start < r {
            let t = support[start].0;
            let end = start + support[start..].partition_point(|p| p.0 == t);
            runs.push((start, end, space.block_of(t)));
            start = end;
        }
        WoodburyPlan {
            support,
            runs,
            coupling,
        }
    }
}

/// `G_D(b) = F((b̂ − D)^{-1})` for a deterministic summand.
///
/// Constants are absorbed into `b`, which leaves a block-diagonal `b̂'`
/// plus the deterministic entries, so the resolvent is a Woodbury update
/// of `b̂'^{-1}` that needs one `|S| × |S|` solve (see [`WoodburyPlan`]).
/// Falls back to dense inversion when `b̂'` is singular (e.g. `ε = 0`).
pub fn cauchy_det(part: &DetPart, space: &RectSpace, b: &BElement) -> Result<BElement, SolveError> {
    cauchy_det_planned(part, &WoodburyPlan::new(part, space), space, b)
}

/// [`cauchy_det`] with a precomputed plan for `part`.
pub fn cauchy_det_planned(
    part: &DetPart,
    plan: &WoodburyPlan,
    space: &RectSpace,
    b: &BElement,
) -> Result<BElement, SolveError> {
    let m = part.size;
    let shifted = b.map(|x| x - &part.constant);
    let binv = match shifted.inverse() {
        Ok(v) => v,
        Err(_) => return cauchy_det_dense(part, space, b),
    };
    if part.entries.is_empty() {
        return Ok(binv);
    }
    let support = &plan.support;
    let c = &plan.coupling;
    let r = support.len();

    // W = U^T b̂'^{-1} U: nonzero only between pairs sharing an index
    let mut w = CMatrix::zeros(r, r);
    for &(start, end, block) in &plan.runs {
        let bl = &binv.blocks[block];
        for s in start..end {
            for s2 in start..end {
                w[(s, s2)] = bl[(support[s].1, support[s2].1)];
            }
        }
    }

    // K = C (I − W C)^{-1}, via K^T = (I − WC)^{-T} C^T
    let x = CMatrix::identity(r, r) - &w * c;
    let lu = match Lu::factor(&x.transpose()) {
        Ok(lu) => lu,
        Err(_) => return cauchy_det_dense(part, space, b),
    };
    let k = lu.solve(&c.transpose()).transpose();

    let mut acc: Vec<CMatrix> = vec![CMatrix::zeros(m, m); space.num_blocks()];
    for &(start, end, block) in &plan.runs {
        let a = &mut acc[block];
        for s in start..end {
            for s2 in start..end {
                a[(support[s].1, support[s2].1)] += k[(s, s2)];
            }
        }
    }

    Ok(BElement::new(
        (0..space.num_blocks())
            .map(|l| {
                let bi = &binv.blocks[l];
                let scale = c64(1.0 / space.block_dim(l) as f64, 0.0);
                bi + bi * (&acc[l] * scale) * bi
            })
            .collect(),
    ))
}

/// Integration against the semicircle law in [`cauchy_semi`].
#[derive(Debug, Clone, PartialEq)]
pub enum SemiIntegrator {
    /// Closed form `F(b) = 2 (I + sqrt(I − 4X²))^{-1} b^{-1}` with `X = b^{-1}A`.
    Analytic,
    /// Fixed quadrature rule on `[-2, 2]`.
    Rule(QuadratureRule),
}

impl SemiIntegrator {
    pub fn gauss(n: usize) -> Self {
        SemiIntegrator::Rule(semicircle_rule(n))
    }

    pub fn midpoint(n: usize) -> Self {
        SemiIntegrator::Rule(midpoint_rule(n))
    }
}

impl Default for SemiIntegrator {
    fn default() -> Self {
        SemiIntegrator::Analytic
    }
}

/// `G(b)` for `x = scale·D ⊗ s` with `s` a standard semicircular on one block.
///
/// Blocks other than `part.block` see `x = 0` and return `b_l^{-1}`. On
/// the semicircular block, `G = ∫ (b_l − t·scale·D)^{-1} dσ(t)`.
pub fn cauchy_semi(part: &SemiPart, b: &BElement, integrator: &SemiIntegrator) -> Result<BElement, SolveError> {
    let mut out = Vec::with_capacity(b.num_blocks());
    for (l, bl) in b.blocks.iter().enumerate() {
        if l != part.block {
            out.push(invert(bl)?);
            continue;
        }
        let a = &part.coeff * c64(part.scale, 0.0);
        let g = match integrator {
            SemiIntegrator::Analytic => {
                let binv = invert(bl)?;
                let x = &binv * &a;
                let m = bl.nrows();
                let arg = CMatrix::identity(m, m) - &x * &x * c64(4.0, 0.0);
                let root = sqrtm(&arg)?;
                let denom = CMatrix::identity(m, m) + root;
                invert(&denom)? * &binv * c64(2.0, 0.0)
            }
            SemiIntegrator::Rule(rule) => {
                let mut acc = CMatrix::zeros(bl.nrows(), bl.ncols());
                for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                    acc += invert(&(bl - &a * c64(t, 0.0)))? * c64(w, 0.0);
                }
                acc
            }
        };
        out.push(g);
    }
    Ok(BElement::new(out))
}

/// `h(b) = G(b)^{-1} − b`.
pub fn h_transform(g: &BElement, b: &BElement) -> Result<BElement, SolveError> {
    Ok(g.inverse()?.sub(b))
}
