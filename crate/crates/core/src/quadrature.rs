//! Gauss rules and the composite schemes used for the singular kernel.
//!
//! Gauss–Jacobi nodes come from the Golub–Welsch eigenvalue problem for the
//! Jacobi recurrence. On `[0, 1]` the rules are used with a power weight
//! `t^α`, which absorbs the algebraic singularities produced by the
//! Duffy-type splits in the assembly.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Quadrature rule: nodes and weights on a fixed reference interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Jacobi rule on `[-1, 1]` for the weight `(1 - x)^alpha (1 + x)^beta`.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<GaussRule> {
    if n == 0 {
        return Err(Error::Quadrature("rule needs at least one node".into()));
    }
    if !(alpha > -1.0 && beta > -1.0) {
        return Err(Error::Quadrature(format!("Jacobi exponents ({alpha}, {beta}) must exceed -1")));
    }
    let ab = alpha + beta;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            let d = 2.0 * kf + ab;
            (beta * beta - alpha * alpha) / (d * (d + 2.0))
        };
        j[(k, k)] = diag;
        if k + 1 < n {
            let m = kf + 1.0;
            let d = 2.0 * m + ab;
            let num = 4.0 * m * (m + alpha) * (m + beta) * (m + ab);
            let den = d * d * (d + 1.0) * (d - 1.0);
            let off = (num / den).sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

impl GaussRule {
    /// Gauss–Legendre rule on `[0, 1]`.
    pub fn legendre(n: usize) -> Self {
        Self::power(n, 0.0).expect("Legendre rule")
    }

    /// Rule on `[0, 1]` for `∫₀¹ t^alpha f(t) dt`.
    pub fn power(n: usize, alpha: f64) -> Result<Self> {
        let r = gauss_jacobi(n, 0.0, alpha)?;
        let scale = 2f64.powf(-alpha - 1.0);
        Ok(Self {
            nodes: r.nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: r.weights.iter().map(|w| w * scale).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply a `[0, 1]` Legendre rule on `[a, b]`.
    #[inline]
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = b - a;
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + h * t);
        }
        acc * h
    }
}

/// `∫_{t0}^{t1} t^e dt` for `0 < t0 ≤ t1 ≤ ∞`, stable when `e` is near `-1`.
pub fn power_integral(t0: f64, t1: f64, e: f64) -> f64 {
    let p = e + 1.0;
    if t1.is_infinite() {
        debug_assert!(p < 0.0);
        return -t0.powf(p) / p;
    }
    let l = (t1 / t0).ln();
    if p.abs() * l.abs() < 1e-8 {
        // series of (exp(p l) - 1)/p
        return t0.powf(p) * l * (1.0 + 0.5 * p * l);
    }
    t0.powf(p) * (p * l).exp_m1() / p
}

/// Tuning for the composite and singular rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadSpec {
    /// Gauss–Legendre order on regular pieces.
    pub order: usize,
    /// Order of the power-weighted rules after singularity removal.
    pub singular_order: usize,
    /// Pieces are split until `length ≤ near_ratio · distance` to a singular point.
    pub near_ratio: f64,
    /// Geometric levels for endpoint-graded composite rules.
    pub graded_levels: usize,
    /// Recursion cap for adaptive splitting.
    pub max_depth: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self { order: 8, singular_order: 8, near_ratio: 1.0, graded_levels: 30, max_depth: 60 }
    }
}

/// Rules shared by an assembly or evaluation run.
#[derive(Debug, Clone)]
pub struct Rules {
    pub spec: QuadSpec,
    pub gl: GaussRule,
    pub gl_low: [GaussRule; 3],
    /// Rule for the pieces of endpoint-graded composites.
    pub gl_graded: GaussRule,
}

impl Rules {
    pub fn new(spec: QuadSpec) -> Self {
        Self {
            spec,
            gl: GaussRule::legendre(spec.order),
            gl_low: [GaussRule::legendre(3), GaussRule::legendre(4), GaussRule::legendre(6)],
            gl_graded: GaussRule::legendre(2 * spec.order),
        }
    }

    /// Legendre rule adequate for a kernel whose singularity sits `ratio`
    /// interval lengths away.
    pub fn for_separation(&self, ratio: f64) -> &GaussRule {
        if ratio > 8.0 {
            &self.gl_low[0]
        } else if ratio > 4.0 {
            &self.gl_low[1]
        } else if ratio > 2.0 {
            &self.gl_low[2]
        } else {
            &self.gl
        }
    }

    /// `∫_a^b f` where `f` is smooth on `[a, b]` but may be nearly singular at
    /// the points in `sing` (which lie outside the open interval).
    pub fn near_singular(&self, a: f64, b: f64, sing: &[f64], f: &mut impl FnMut(f64) -> f64) -> f64 {
        self.near_pieces(a, b, sing).into_iter().map(|(p, q)| self.gl.integrate(p, q, &mut *f)).sum()
    }

    /// Subintervals of `[a, b]` each no longer than `near_ratio` times its
    /// distance to the points in `sing`.
    pub fn near_pieces(&self, a: f64, b: f64, sing: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.near_rec(a, b, sing, &mut out, 0);
        out
    }

    fn near_rec(&self, a: f64, b: f64, sing: &[f64], out: &mut Vec<(f64, f64)>, depth: usize) {
        let len = b - a;
        let d = sing
            .iter()
            .map(|&c| if c < a { a - c } else if c > b { c - b } else { 0.0 })
            .fold(f64::INFINITY, f64::min);
        if depth >= self.spec.max_depth || len <= self.spec.near_ratio * d {
            out.push((a, b));
            return;
        }
        let m = 0.5 * (a + b);
        self.near_rec(a, m, sing, out, depth + 1);
        self.near_rec(m, b, sing, out, depth + 1);
    }

    /// `∫_a^b f` with geometric refinement toward the chosen endpoints, for
    /// integrands with algebraic or logarithmic endpoint singularities.
    pub fn graded(&self, a: f64, b: f64, left: bool, right: bool, f: &mut impl FnMut(f64) -> f64) -> f64 {
        const SIGMA: f64 = 0.15;
        let levels = self.spec.graded_levels;
        let mut acc = 0.0;
        let (lo, hi) = match (left, right) {
            (false, false) => return self.gl.integrate(a, b, &mut *f),
            (true, true) => {
                let m = 0.5 * (a + b);
                return self.graded(a, m, true, false, f) + self.graded(m, b, false, true, f);
            }
            (true, false) => (a, b),
            (false, true) => (b, a),
        };
        // pieces [lo + σ^{k+1}(hi-lo), lo + σ^k(hi-lo)], oriented from the singular end
        let h = hi - lo;
        let mut outer = 1.0;
        // stop before pieces fall below the resolution of `lo`
        let floor = 1e3 * f64::EPSILON * lo.abs();
        for _ in 0..levels {
            let inner = outer * SIGMA;
            if inner * h.abs() < floor {
                break;
            }
            let (p, q) = (lo + inner * h, lo + outer * h);
            acc += self.gl_graded.integrate(p.min(q), p.max(q), &mut *f);
            outer = inner;
        }
        let (p, q) = (lo, lo + outer * h);
        acc += self.gl_graded.integrate(p.min(q), p.max(q), &mut *f);
        acc
    }

    /// `∫_a^b |x - c|^e g(x) dx` with `c ∈ {a, b}` and `g` smooth, via a
    /// power-weighted Gauss rule.
    pub fn endpoint_power(&self, a: f64, b: f64, c: f64, e: f64, g: &mut impl FnMut(f64) -> f64) -> Result<f64> {
        let rule = GaussRule::power(self.spec.singular_order, e)?;
        let h = b - a;
        let dir = if c == a { 1.0 } else if c == b { -1.0 } else {
            return Err(Error::Quadrature(format!("{c} is not an endpoint of [{a}, {b}]")));
        };
        let mut acc = 0.0;
        for (t, w) in rule.nodes.iter().zip(&rule.weights) {
            acc += w * g(c + dir * h * t);
        }
        Ok(acc * h.powf(e + 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_exact_for_polynomials() {
        let r = GaussRule::legendre(5);
        let v = r.integrate(-1.0, 2.0, |x| x.powi(9) - 3.0 * x.powi(4) + 1.0);
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0 + 3.0;
        assert_abs_diff_eq!(v, exact, epsilon = 1e-11);
    }

    #[test]
    fn jacobi_reference_value() {
        // reference from an independent Gauss–Jacobi implementation
        let r = gauss_jacobi(10, 0.0, -1.0 / 3.0).unwrap();
        let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.sin()).sum();
        assert_abs_diff_eq!(v, -0.4207987746500829, epsilon = 1e-13);
    }

    #[test]
    fn power_rule_moments() {
        for &a in &[-0.5, 0.0, 0.4, 1.5] {
            let r = GaussRule::power(6, a).unwrap();
            for k in 0..12 {
                let v: f64 = r.nodes.iter().zip(&r.weights).map(|(t, w)| w * t.powi(k)).sum();
                assert_abs_diff_eq!(v, 1.0 / (k as f64 + a + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn power_integral_matches_log_limit() {
        assert_abs_diff_eq!(power_integral(0.5, 2.0, -1.0), 4f64.ln(), epsilon = 1e-15);
        let near = power_integral(0.5, 2.0, -1.0 + 1e-12);
        assert_abs_diff_eq!(near, 4f64.ln(), epsilon = 1e-11);
        assert_abs_diff_eq!(power_integral(1.0, 3.0, -2.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(power_integral(2.0, f64::INFINITY, -2.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn graded_handles_endpoint_singularity() {
        let rules = Rules::new(QuadSpec::default());
        let v = rules.graded(0.0, 1.0, true, false, &mut |x: f64| x.powf(-0.5));
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-9);
        let w = rules.graded(0.0, 1.0, true, true, &mut |x: f64| (x * (1.0 - x)).ln());
        assert_abs_diff_eq!(w, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn near_singular_and_endpoint_power() {
        let rules = Rules::new(QuadSpec::default());
        let v = rules.near_singular(1e-6, 1.0, &[0.0], &mut |x: f64| 1.0 / x);
        assert_abs_diff_eq!(v, (1e6f64).ln(), epsilon = 1e-10);
        let w = rules.endpoint_power(1.0, 3.0, 3.0, -0.7, &mut |x: f64| x * x).unwrap();
        // ∫_1^3 (3-x)^{-0.7} x² dx via substitution t = 3 - x
        let exact = [(9.0, 0.3), (-6.0, 1.3), (1.0, 2.3)]
            .iter()
            .map(|(c, p)| c * 2f64.powf(*p) / p)
            .sum::<f64>();
        assert_abs_diff_eq!(w, exact, epsilon = 1e-12);
    }
}
