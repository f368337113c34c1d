use std::f64::consts::PI;

/// Discrete approximation of the standard semicircle law on `[-2, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `∑ w_i f(t_i)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Gauss rule for the weight `sqrt(4 - t^2) / (2π)` on `[-2, 2]`.
///
/// Nodes are the zeros of the scaled second-kind Chebyshev polynomial
/// `U_n(t/2)`, i.e. `t_i = 2 cos(iπ/(n+1))`, with weights
/// `2/(n+1) sin^2(iπ/(n+1))`. Exact for polynomials of degree `≤ 2n - 1`.
pub fn semicircle_rule(n: usize) -> QuadratureRule {
    let n = n.max(1);
    let h = PI / (n as f64 + 1.0);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in (1..=n).rev() {
        let theta = i as f64 * h;
        nodes.push(2.0 * theta.cos());
        let s = theta.sin();
        weights.push(2.0 / (n as f64 + 1.0) * s * s);
    }
    // exact antisymmetry of the node set
    for i in 0..n / 2 {
        let t = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -t;
        nodes[n - 1 - i] = t;
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    QuadratureRule { nodes, weights }
}

/// Midpoint Riemann sum of the semicircle density on `[-2, 2]`, weights
/// renormalized to unit mass. Kept as a low-order cross-check.
pub fn midpoint_rule(n: usize) -> QuadratureRule {
    let n = n.max(1);
    let h = 4.0 / n as f64;
    let nodes: Vec<f64> = (0..n).map(|i| -2.0 + (i as f64 + 0.5) * h).collect();
    let raw: Vec<f64> = nodes
        .iter()
        .map(|t| (4.0 - t * t).max(0.0).sqrt() / (2.0 * PI) * h)
        .collect();
    let total: f64 = raw.iter().sum();
    QuadratureRule {
        nodes,
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalan(k: u64) -> f64 {
        let mut c = 1u64;
        for i in 0..k {
            c = c * 2 * (2 * i + 1) / (i + 2);
        }
        c as f64
    }

    #[test]
    fn unit_mass_for_every_order() {
        for n in 1..40 {
            let rule = semicircle_rule(n);
            assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14, "n = {n}");
            assert!(rule.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn second_and_fourth_moments_are_catalan() {
        assert!((semicircle_rule(2).integrate(|t| t * t) - 1.0).abs() < 1e-14);
        assert!((semicircle_rule(3).integrate(|t| t.powi(4)) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn exact_up_to_degree_2n_minus_1() {
        for n in 1..12usize {
            let rule = semicircle_rule(n);
            for deg in 0..(2 * n) {
                let got = rule.integrate(|t| t.powi(deg as i32));
                let want = if deg % 2 == 1 { 0.0 } else { catalan(deg as u64 / 2) };
                assert!((got - want).abs() < 1e-11 * want.max(1.0), "n={n} deg={deg}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn symmetric_under_reflection() {
        for n in [1, 2, 7, 200] {
            let rule = semicircle_rule(n);
            for i in 0..n {
                assert_eq!(rule.nodes[i], -rule.nodes[n - 1 - i]);
                assert_eq!(rule.weights[i], rule.weights[n - 1 - i]);
            }
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn midpoint_rule_converges_slowly() {
        let rule = midpoint_rule(2000);
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.integrate(|t| t * t) - 1.0).abs() < 1e-3);
    }
}
