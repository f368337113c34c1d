//! Operator-valued free additive convolution by subordination.
//!
//! For `B`-free `x` and `y`, `G_{x+y}(b) = G_x(ω(b))` where `ω(b)` is the
//! attracting fixed point of `f_b(w) = h_y(h_x(w) + b) + b`.

use std::cell::{Cell, OnceCell, RefCell};

use crate::linearize::{DetPart, FreeSummand, SemiPart, SummandKind};
use crate::model::RectSpace;
use crate::numerics::{c64, CMatrix};
use crate::transforms::{cauchy_det_planned, cauchy_semi, BElement, SemiIntegrator, SolveError, WoodburyPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    /// Stop when `‖f_b(w) − w‖_max < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// `w ← (1 − θ) w + θ f_b(w)`.
    pub damping: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 1.0,
        }
    }
}

impl FixedPointConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.tol > 0.0) {
            return Err(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionReport {
    pub iterations: usize,
    pub residual: f64,
    pub omega: BElement,
}

pub trait CauchyEvaluator {
    fn cauchy(&self, b: &BElement) -> Result<BElement, SolveError>;

    /// Iterations spent inside nested convolutions, if any.
    fn inner_iterations(&self) -> usize {
        0
    }
}

/// Direct transform of one free summand.
pub struct SummandEval<'a> {
    pub summand: &'a FreeSummand,
    pub space: &'a RectSpace,
    pub integrator: &'a SemiIntegrator,
    plan: OnceCell<WoodburyPlan>,
}

impl<'a> SummandEval<'a> {
    pub fn new(summand: &'a FreeSummand, space: &'a RectSpace, integrator: &'a SemiIntegrator) -> Self {
        SummandEval {
            summand,
            space,
            integrator,
            plan: OnceCell::new(),
        }
    }
}

impl CauchyEvaluator for SummandEval<'_> {
    fn cauchy(&self, b: &BElement) -> Result<BElement, SolveError> {
        match &self.summand.kind {
            SummandKind::Det(d) => {
                let plan = self.plan.get_or_init(|| WoodburyPlan::new(d, self.space));
                cauchy_det_planned(d, plan, self.space, b)
            }
            SummandKind::Semi(s) => cauchy_semi(s, b, self.integrator),
        }
    }
}

fn subordinate(
    gx: &dyn CauchyEvaluator,
    gy: &dyn CauchyEvaluator,
    b: &BElement,
    start: BElement,
    cfg: &FixedPointConfig,
) -> Result<(BElement, ConvolutionReport), SolveError> {
    let theta = c64(cfg.damping, 0.0);
    let keep = c64(1.0 - cfg.damping, 0.0);
    let mut w = start;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let gxw = gx.cauchy(&w)?;
        let hx = gxw.inverse()?.sub(&w);
        let arg = hx.add(b);
        let hy = gy.cauchy(&arg)?.inverse()?.sub(&arg);
        let f = hy.add(b);
        residual = f.max_abs_diff(&w);
        if !residual.is_finite() {
            return Err(SolveError::LeftHalfPlane {
                iteration: it,
                min_im: f64::NAN,
            });
        }
        if residual < cfg.tol {
            return Ok((
                gxw,
                ConvolutionReport {
                    iterations: it,
                    residual,
                    omega: w,
                },
            ));
        }
        w = if cfg.damping == 1.0 {
            f
        } else {
            w.zip(&f, |a, c| a * keep + c * theta)
        };
        let min_im = w.min_im();
        if !(min_im > 0.0) {
            return Err(SolveError::LeftHalfPlane { iteration: it, min_im });
        }
    }
    Err(SolveError::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// `G_{x+y}(b)` from the iteration started at `w₀ = b`.
pub fn free_add(
    gx: &dyn CauchyEvaluator,
    gy: &dyn CauchyEvaluator,
    b: &BElement,
    cfg: &FixedPointConfig,
) -> Result<(BElement, ConvolutionReport), SolveError> {
    let min_im = b.min_im();
    if !(min_im > 0.0) {
        return Err(SolveError::NotInUpperHalfPlane { min_im });
    }
    subordinate(gx, gy, b, b.clone(), cfg)
}

/// Evaluator of `acc ⊞ next`; each call restarts from the previous
/// subordinator, which is usually close to the new one.
struct FoldEval<'a> {
    acc: Box<dyn CauchyEvaluator + 'a>,
    next: SummandEval<'a>,
    cfg: FixedPointConfig,
    warm: RefCell<Option<BElement>>,
    spent: Cell<usize>,
}

impl CauchyEvaluator for FoldEval<'_> {
    fn cauchy(&self, b: &BElement) -> Result<BElement, SolveError> {
        let start = match self.warm.borrow().as_ref() {
            Some(w) if w.min_im() > 0.0 => w.clone(),
            _ => b.clone(),
        };
        let (g, report) = subordinate(&self.next, self.acc.as_ref(), b, start, &self.cfg)?;
        self.spent.set(self.spent.get() + report.iterations);
        *self.warm.borrow_mut() = Some(report.omega);
        Ok(g)
    }

    fn inner_iterations(&self) -> usize {
        self.spent.get() + self.acc.inner_iterations()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    /// Iterations of the outermost subordination (0 for a single summand).
    pub iterations: usize,
    pub residual: f64,
    /// Iterations spent in nested subordinations.
    pub inner_iterations: usize,
}

/// Left fold of the summands with free additive convolution.
pub fn fold(
    summands: &[FreeSummand],
    space: &RectSpace,
    b: &BElement,
    cfg: &FixedPointConfig,
    integrator: &SemiIntegrator,
) -> Result<(BElement, FoldReport), SolveError> {
    let eval = |s| SummandEval::new(s, space, integrator);
    match summands {
        [] => Ok((
            b.inverse()?,
            FoldReport {
                iterations: 0,
                residual: 0.0,
                inner_iterations: 0,
            },
        )),
        [only] => Ok((
            eval(only).cauchy(b)?,
            FoldReport {
                iterations: 0,
                residual: 0.0,
                inner_iterations: 0,
            },
        )),
        [init @ .., last] => {
            let mut acc: Box<dyn CauchyEvaluator> = Box::new(eval(&init[0]));
            for s in &init[1..] {
                acc = Box::new(FoldEval {
                    acc,
                    next: eval(s),
                    cfg: *cfg,
                    warm: RefCell::new(None),
                    spent: Cell::new(0),
                });
            }
            let (g, report) = free_add(&eval(last), acc.as_ref(), b, cfg)?;
            Ok((
                g,
                FoldReport {
                    iterations: report.iterations,
                    residual: report.residual,
                    inner_iterations: acc.inner_iterations(),
                },
            ))
        }
    }
}

/// Cross-check for `L_det + Σ_j scale_j D_j ⊗ s_j`: the sum of the
/// semicircular parts is a `B`-valued semicircular with covariance
/// `η(W)_l = Σ_{j on block l} scale_j² D_j W_l D_j`, so
/// `G = G_det(b − η(G))`. Solved by averaged fixed-point iteration.
pub fn semicirc_covariance_oracle(
    semiparts: &[SemiPart],
    det: Option<&DetPart>,
    space: &RectSpace,
    b: &BElement,
    cfg: &FixedPointConfig,
) -> Result<BElement, SolveError> {
    let plan = det.map(|d| WoodburyPlan::new(d, space));
    let g_det = |arg: &BElement| -> Result<BElement, SolveError> {
        match (det, &plan) {
            (Some(d), Some(plan)) => cauchy_det_planned(d, plan, space, arg),
            _ => Ok(arg.inverse()?),
        }
    };
    let eta = |w: &BElement| -> BElement {
        let mut out = BElement::zeros(w.size(), w.num_blocks());
        for p in semiparts {
            let d = &p.coeff * c64(p.scale, 0.0);
            out.blocks[p.block] += &d * &w.blocks[p.block] * &d;
        }
        out
    };
    let half = c64(0.5, 0.0);
    let mut w = g_det(b)?;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let next = g_det(&b.sub(&eta(&w)))?;
        residual = next.max_abs_diff(&w);
        if residual < cfg.tol {
            return Ok(next);
        }
        w = w.zip(&next, |a, c| (a + c) * half);
    }
    Err(SolveError::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Identity matrix helper for tests and callers building scalar models.
pub fn scalar_element(z: crate::numerics::C64) -> BElement {
    BElement::new(vec![CMatrix::from_element(1, 1, z)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::{linearize, split_classes, DetEntry};
    use crate::model::{eliminate_haar, validate, ClassId, ModelSpec, Symbol};
    use crate::numerics::C64;
    use crate::parser::parse_polynomial;
    use crate::transforms::lambda_embed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn semi(block: usize) -> FreeSummand {
        FreeSummand {
            class_id: ClassId(1),
            kind: SummandKind::Semi(SemiPart {
                coeff: CMatrix::from_element(1, 1, c64(1.0, 0.0)),
                block,
                scale: 1.0,
            }),
            provenance: "s".into(),
        }
    }

    fn bernoulli(space: &RectSpace) -> FreeSummand {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(1.0, 0.0), c64(-1.0, 0.0)]));
        FreeSummand {
            class_id: ClassId(0),
            kind: SummandKind::Det(DetPart {
                size: 1,
                dim: 2,
                constant: CMatrix::zeros(1, 1),
                entries: vec![DetEntry {
                    row: 0,
                    col: 0,
                    class: ClassId(0),
                    label: "D".into(),
                    matrix: space.pad(&d, 0, 0),
                    row_blocks: BTreeSet::from([0]),
                    col_blocks: BTreeSet::from([0]),
                }],
            }),
            provenance: "D".into(),
        }
    }

    fn g11(g: &BElement) -> C64 {
        g.blocks[0][(0, 0)]
    }

    #[test]
    fn two_semicircles() {
        let space = RectSpace::new(vec![1]).unwrap();
        let parts = vec![semi(0), semi(0)];
        let (g, rep) = fold(&parts, &space, &scalar_element(c64(0.0, 3.0)), &FixedPointConfig::default(), &SemiIntegrator::Analytic).unwrap();
        let want = c64(0.0, (3.0 - 17f64.sqrt()) / 4.0);
        assert!((g11(&g) - want).norm() < 1e-9, "{}", g11(&g));
        assert!(rep.residual < 1e-10);
    }

    #[test]
    fn three_semicircles() {
        let space = RectSpace::new(vec![1]).unwrap();
        let parts = vec![semi(0), semi(0), semi(0)];
        let (g, _) = fold(&parts, &space, &scalar_element(c64(0.0, 3.0)), &FixedPointConfig::default(), &SemiIntegrator::Analytic).unwrap();
        let want = c64(0.0, (3.0 - 21f64.sqrt()) / 6.0);
        assert!((g11(&g) - want).norm() < 1e-9, "{}", g11(&g));
    }

    #[test]
    fn adding_zero_changes_nothing() {
        let space = RectSpace::new(vec![1]).unwrap();
        let zero = FreeSummand {
            class_id: ClassId(0),
            kind: SummandKind::Det(DetPart {
                size: 1,
                dim: 1,
                constant: CMatrix::zeros(1, 1),
                entries: vec![],
            }),
            provenance: String::new(),
        };
        let b = scalar_element(c64(0.4, 0.7));
        let (g, _) = fold(&[semi(0), zero], &space, &b, &FixedPointConfig::default(), &SemiIntegrator::Analytic).unwrap();
        let direct = cauchy_semi(
            match &semi(0).kind {
                SummandKind::Semi(s) => s,
                _ => unreachable!(),
            },
            &b,
            &SemiIntegrator::Analytic,
        )
        .unwrap();
        assert!(g.max_abs_diff(&direct) < 1e-10);
    }

    #[test]
    fn single_summand_is_direct_bitwise() {
        let space = RectSpace::new(vec![2]).unwrap();
        let s = bernoulli(&space);
        let b = scalar_element(c64(0.3, 0.2));
        let (g, _) = fold(std::slice::from_ref(&s), &space, &b, &FixedPointConfig::default(), &SemiIntegrator::Analytic).unwrap();
        let direct = SummandEval::new(&s, &space, &SemiIntegrator::Analytic)
        .cauchy(&b)
        .unwrap();
        assert_eq!(g, direct);
    }

    #[test]
    fn bernoulli_sum_is_arcsine() {
        let space = RectSpace::new(vec![2]).unwrap();
        let parts = vec![bernoulli(&space), bernoulli(&space)];
        let (g, _) = fold(&parts, &space, &scalar_element(c64(0.0, 2.0)), &FixedPointConfig::default(), &SemiIntegrator::Analytic).unwrap();
        let want = c64(0.0, -1.0 / (2.0 * 2f64.sqrt()));
        assert!((g11(&g) - want).norm() < 1e-9, "{}", g11(&g));
    }

    #[test]
    fn role_swap_consistency() {
        let space = RectSpace::new(vec![2]).unwrap();
        let cfg = FixedPointConfig::default();
        let x = bernoulli(&space);
        let y = semi(0);
        let ex = SummandEval::new(&x, &space, &SemiIntegrator::Analytic);
        let ey = SummandEval::new(&y, &space, &SemiIntegrator::Analytic);
        for z in [c64(0.5, 0.1), c64(-1.5, 0.3), c64(2.0, 1.0)] {
            let b = scalar_element(z);
            let (g1, _) = free_add(&ex, &ey, &b, &cfg).unwrap();
            let (g2, _) = free_add(&ey, &ex, &b, &cfg).unwrap();
            assert!(g1.max_abs_diff(&g2) <= 10.0 * cfg.tol, "{}", g1.max_abs_diff(&g2));
        }
    }

    #[test]
    fn rejects_lower_half_plane_argument() {
        let space = RectSpace::new(vec![1]).unwrap();
        let r = fold(&[semi(0), semi(0)], &space, &scalar_element(c64(0.0, -1.0)), &FixedPointConfig::default(), &SemiIntegrator::Analytic);
        assert!(matches!(r, Err(SolveError::NotInUpperHalfPlane { .. })));
    }

    #[test]
    fn no_convergence_is_reported() {
        let space = RectSpace::new(vec![1]).unwrap();
        let cfg = FixedPointConfig {
            max_iter: 2,
            ..Default::default()
        };
        let r = fold(&[semi(0), semi(0)], &space, &scalar_element(c64(0.1, 0.01)), &cfg, &SemiIntegrator::Analytic);
        assert!(matches!(r, Err(SolveError::NoConvergence { iterations: 2, .. })));
    }

    fn model(blocks: Vec<usize>, symbols: Vec<Symbol>, expr: &str) -> ModelSpec {
        let space = RectSpace::new(blocks).unwrap();
        let poly = parse_polynomial(expr).unwrap().to_polynomial();
        eliminate_haar(&validate(&ModelSpec::new(space, symbols, poly, 0)).unwrap()).unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn semiparts(parts: &[FreeSummand]) -> (Vec<SemiPart>, Option<DetPart>) {
        let mut semis = Vec::new();
        let mut det = None;
        for p in parts {
            match &p.kind {
                SummandKind::Semi(s) => semis.push(s.clone()),
                SummandKind::Det(d) => {
                    assert!(det.is_none(), "single deterministic part expected");
                    det = Some(d.clone());
                }
            }
        }
        (semis, det)
    }

    #[test]
    fn fold_matches_covariance_oracle_on_wishart() {
        let s = model(vec![3], vec![Symbol::circular("c", 0)], "c*c'");
        let lin = linearize(&s).unwrap();
        let parts = split_classes(&lin);
        assert_eq!(parts.len(), 3);
        let (semis, det) = semiparts(&parts);
        let cfg = FixedPointConfig {
            tol: 1e-13,
            ..Default::default()
        };
        for z in [c64(1.0, 0.1), c64(3.0, 0.2), c64(-0.5, 0.5)] {
            let b = lambda_embed(z, 0.1, lin.size, 1);
            let (g, _) = fold(&parts, &s.space, &b, &cfg, &SemiIntegrator::Analytic).unwrap();
            let o = semicirc_covariance_oracle(&semis, det.as_ref(), &s.space, &b, &cfg).unwrap();
            assert!(g.max_abs_diff(&o) < 1e-8, "z = {z}: {}", g.max_abs_diff(&o));
        }
    }

    #[test]
    fn fold_matches_oracle_with_two_random_symbols() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = {
            let a = random_matrix(4, 4, &mut rng);
            let mut h = &a * a.adjoint();
            for i in 0..4 {
                h[(i, i)].im = 0.0;
                for j in 0..i {
                    h[(i, j)] = h[(j, i)].conj();
                }
            }
            h
        };
        let s = model(
            vec![2, 4],
            vec![
                Symbol::deterministic("R", random_matrix(2, 4, &mut rng), 0, 1),
                Symbol::deterministic("T", t, 1, 1),
                Symbol::circular("c", 1),
                Symbol::semicircular("s", 0),
            ],
            "R*c*T*c'*R' + s",
        );
        let lin = linearize(&s).unwrap();
        let parts = split_classes(&lin);
        let (semis, det) = semiparts(&parts);
        assert_eq!(semis.len(), 3);
        let cfg = FixedPointConfig {
            tol: 1e-13,
            ..Default::default()
        };
        for z in [c64(0.5, 0.3), c64(2.0, 0.5)] {
            let b = lambda_embed(z, 0.2, lin.size, 2);
            let (g, _) = fold(&parts, &s.space, &b, &cfg, &SemiIntegrator::Analytic).unwrap();
            let o = semicirc_covariance_oracle(&semis, det.as_ref(), &s.space, &b, &cfg).unwrap();
            assert!(g.max_abs_diff(&o) < 1e-8, "z = {z}: {}", g.max_abs_diff(&o));

            // fold order does not matter
            let mut rev = parts.clone();
            rev.reverse();
            let (g_rev, _) = fold(&rev, &s.space, &b, &cfg, &SemiIntegrator::Analytic).unwrap();
            assert!(g.max_abs_diff(&g_rev) < 1e-8);
        }
    }

    #[test]
    fn oracle_with_zero_coefficients_is_inverse() {
        let space = RectSpace::new(vec![2]).unwrap();
        let part = SemiPart {
            coeff: CMatrix::zeros(2, 2),
            block: 0,
            scale: 1.0,
        };
        let b = lambda_embed(c64(0.3, 0.4), 0.4, 2, 1);
        let g = semicirc_covariance_oracle(&[part], None, &space, &b, &FixedPointConfig::default()).unwrap();
        assert!(g.max_abs_diff(&b.inverse().unwrap()) < 1e-15);
    }

    #[test]
    fn oracle_single_semicircle() {
        let space = RectSpace::new(vec![1]).unwrap();
        let part = SemiPart {
            coeff: CMatrix::from_element(1, 1, c64(1.0, 0.0)),
            block: 0,
            scale: 1.0,
        };
        let cfg = FixedPointConfig {
            tol: 1e-14,
            ..Default::default()
        };
        let b = scalar_element(c64(0.7, 0.5));
        let o = semicirc_covariance_oracle(std::slice::from_ref(&part), None, &space, &b, &cfg).unwrap();
        let g = cauchy_semi(&part, &b, &SemiIntegrator::Analytic).unwrap();
        assert!(o.max_abs_diff(&g) < 1e-9);
    }

    #[test]
    fn marchenko_pastur_equation() {
        let s = model(vec![1], vec![Symbol::circular("c", 0)], "c*c'");
        let lin = linearize(&s).unwrap();
        let parts = split_classes(&lin);
        let cfg = FixedPointConfig::default();
        let z = c64(1.0, 0.01);
        let b = lambda_embed(z, 1e-6, lin.size, 1);
        let (g, _) = fold(&parts, &s.space, &b, &cfg, &SemiIntegrator::Analytic).unwrap();
        let g = g11(&g);
        let residual = (g - 1.0 / (z - 1.0 / (1.0 - g))).norm();
        assert!(residual < 1e-4, "{residual}");
    }
}
