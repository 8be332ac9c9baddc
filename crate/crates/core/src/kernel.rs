//! The kernel `a_{N,s} |x - y|^{-N-2s}` and the pointwise operators built on
//! it: the principal-value fractional Laplacian, the nonlocal normal
//! derivative and the reflection normalizer of the jump process.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::domain::{DomainPartition, Interval};
use crate::error::{Error, Result};
use crate::field::{Field, Profile};
use crate::quadrature::{power_integral, Rules};

/// `a_{N,s} = 2^{2s} s Γ((N+2s)/2) / (π^{N/2} Γ(1-s))`.
pub fn normalization_constant(s: f64, dim: usize) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("fractional order s = {s} outside (0, 1)")));
    }
    let n = dim as f64;
    Ok(4f64.powf(s) * s * gamma(0.5 * n + s) / (PI.powf(0.5 * n) * gamma(1.0 - s)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelParams {
    pub s: f64,
    pub dim: usize,
    pub a_ns: f64,
}

impl KernelParams {
    pub fn new(s: f64) -> Result<Self> {
        Ok(Self { s, dim: 1, a_ns: normalization_constant(s, 1)? })
    }

    /// Exponent `N + 2s` of the kernel.
    #[inline]
    pub fn order(&self) -> f64 {
        self.dim as f64 + 2.0 * self.s
    }

    /// `a_{N,s} |x - y|^{-N-2s}`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if x == y {
            return Err(Error::Singularity(x));
        }
        Ok(self.a_ns * (x - y).abs().powf(-self.order()))
    }
}

/// Free-function form of [`KernelParams::eval`].
pub fn kernel_eval(k: &KernelParams, x: f64, y: f64) -> Result<f64> {
    k.eval(x, y)
}

/// `∫_{lo}^{hi} |x - y|^{-1-2s} dy` for `x` outside the open interval.
pub fn interval_kernel_mass(x: f64, iv: Interval, s: f64) -> f64 {
    let e = -1.0 - 2.0 * s;
    if x <= iv.lo {
        power_integral(iv.lo - x, iv.hi - x, e)
    } else if x >= iv.hi {
        power_integral(x - iv.hi, x - iv.lo, e)
    } else {
        f64::INFINITY
    }
}

/// `(-Δ)^s u(x)` as a principal value over the whole line.
///
/// The integral is folded to `∫₀^∞ (2u(x) - u(x+r) - u(x-r)) r^{-1-2s} dr` and
/// split at every distance from `x` to a breakpoint of `u`. Piecewise-linear
/// profiles are integrated in closed form; smooth pieces use graded Gauss
/// rules and the innermost piece a power-weighted rule.
pub fn pv_fractional_laplacian(k: &KernelParams, u: &impl Profile, x: f64, rules: &Rules) -> Result<f64> {
    let s = k.s;
    let ux = u.value(x);
    let ext = u.exterior();
    let mut dists: Vec<f64> = u.breakpoints().iter().map(|b| (x - b).abs()).collect();
    if u.piecewise_linear() && dists.contains(&0.0) {
        return Err(Error::Domain(format!("x = {x} sits on a kink of a piecewise-linear field")));
    }
    dists.retain(|&d| d > 0.0);
    dists.sort_by(f64::total_cmp);
    // symmetric breakpoints give distances equal up to rounding
    dists.dedup_by(|a, b| *a - *b <= 1e-13 * *a);
    let g = |r: f64| 2.0 * ux - u.value(x + r) - u.value(x - r);
    let mut total = 0.0;
    let Some(&first) = dists.first() else {
        return Ok(0.0);
    };
    if !u.piecewise_linear() {
        // power rule at r = 0; the kink at r = first needs the graded rule
        let half = 0.5 * first;
        total += rules.endpoint_power(0.0, half, 0.0, 1.0 - 2.0 * s, &mut |r: f64| g(r) / (r * r))?;
        total += rules.graded(half, first, false, true, &mut |r: f64| g(r) * r.powf(-1.0 - 2.0 * s));
    }
    for w in dists.windows(2) {
        let (d0, d1) = (w[0], w[1]);
        if u.piecewise_linear() {
            // exact: g is linear on the open segment
            let (r1, r2) = (d0 + (d1 - d0) / 3.0, d0 + 2.0 * (d1 - d0) / 3.0);
            let (g1, g2) = (g(r1), g(r2));
            let slope = (g2 - g1) / (r2 - r1);
            let intercept = g1 - slope * r1;
            total += intercept * power_integral(d0, d1, -1.0 - 2.0 * s) + slope * power_integral(d0, d1, -2.0 * s);
        } else {
            total += rules.graded(d0, d1, true, true, &mut |r: f64| g(r) * r.powf(-1.0 - 2.0 * s));
        }
    }
    let far = *dists.last().unwrap();
    total += 2.0 * (ux - ext) * power_integral(far, f64::INFINITY, -1.0 - 2.0 * s);
    if !total.is_finite() {
        return Err(Error::Quadrature(format!("non-finite principal value at x = {x}")));
    }
    Ok(k.a_ns * total)
}

/// Principal value with an error estimate from a second, finer evaluation.
pub fn pv_with_tolerance(k: &KernelParams, u: &impl Profile, x: f64, rules: &Rules, tol: f64) -> Result<f64> {
    let coarse = pv_fractional_laplacian(k, u, x, rules)?;
    if u.piecewise_linear() {
        return Ok(coarse);
    }
    let mut spec = rules.spec;
    spec.order *= 2;
    spec.singular_order *= 2;
    spec.graded_levels += 10;
    let fine = pv_fractional_laplacian(k, u, x, &Rules::new(spec))?;
    if (fine - coarse).abs() > tol * fine.abs().max(1.0) {
        return Err(Error::Quadrature(format!(
            "principal value at x = {x} changed by {:.3e} under refinement",
            (fine - coarse).abs()
        )));
    }
    Ok(fine)
}

/// `N_s u(x) = a_{N,s} ∫_Ω (u(x) - u(y)) |x - y|^{-1-2s} dy` for `x ∉ closure(Ω)`.
pub fn neumann_derivative(k: &KernelParams, u: &Field, x: f64) -> Result<f64> {
    let mesh = u.mesh();
    if mesh.partition.in_omega_closure(x) {
        return Err(Error::Domain(format!("x = {x} lies in the closure of Ω")));
    }
    let ux = u.eval(x);
    let vals = u.values();
    let e1 = -1.0 - 2.0 * k.s;
    let e2 = -2.0 * k.s;
    let mut total = 0.0;
    for el in mesh.elements.iter().filter(|e| e.in_omega()) {
        let h = el.len();
        let sl = (vals[el.right] - vals[el.left]) / h;
        // parametrize by t = |x - y|, u(y) = u_near + σ (t - t0)
        let (t0, t1, u_near, sigma) = if x <= el.a {
            (el.a - x, el.b - x, vals[el.left], sl)
        } else {
            (x - el.b, x - el.a, vals[el.right], -sl)
        };
        total += (ux - u_near + sigma * t0) * power_integral(t0, t1, e1) - sigma * power_integral(t0, t1, e2);
    }
    Ok(k.a_ns * total)
}

/// `c(x) = (∫_Ω |x - y|^{-N-2s} dy)^{-1}` for `x` in the closure of Σ₂ away from Ω.
pub fn reflect_normalizer(p: &DomainPartition, x: f64) -> Result<f64> {
    if !p.in_sigma2_closure(x) || p.in_omega_closure(x) {
        return Err(Error::Domain(format!("x = {x} is not a Σ₂ point at positive distance from Ω")));
    }
    let mass: f64 = p.omega.iter().map(|&iv| interval_kernel_mass(x, iv, p.s)).sum();
    Ok(1.0 / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, Grading};
    use crate::quadrature::QuadSpec;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn half_order_constant_is_inverse_pi() {
        assert_relative_eq!(normalization_constant(0.5, 1).unwrap(), 1.0 / PI, max_relative = 1e-14);
        assert!(normalization_constant(1e-9, 1).unwrap() < 1e-8);
        assert!(normalization_constant(1.0, 1).is_err());
    }

    #[test]
    fn kernel_values() {
        let k = KernelParams::new(0.5).unwrap();
        assert_relative_eq!(k.eval(0.0, 2.0).unwrap(), 1.0 / (4.0 * PI), max_relative = 1e-14);
        assert_eq!(k.eval(0.3, -0.7).unwrap(), k.eval(-0.7, 0.3).unwrap());
        assert!(k.eval(1.0, 1.0).is_err());
        assert!(k.eval(0.0, 1.0).unwrap() > k.eval(0.0, 1.5).unwrap());
    }

    #[test]
    fn reflect_normalizer_examples() {
        let p = DomainPartition::standard(0.5);
        assert_relative_eq!(reflect_normalizer(&p, 2.0).unwrap(), 1.5, max_relative = 1e-14);
        assert!(reflect_normalizer(&p, 0.0).is_err());
        assert!(reflect_normalizer(&p, 1.0).is_err());
        // growth like |x|^{1+2s}/|Ω|
        let far = DomainPartition::new(
            p.omega.clone(),
            vec![Interval { lo: f64::NEG_INFINITY, hi: -1.0 }, Interval { lo: 1e4, hi: f64::INFINITY }],
            vec![Interval { lo: 1.0, hi: 1e4 }],
            0.3,
        );
        let x = 5e3;
        let c = reflect_normalizer(&far, x).unwrap();
        assert_relative_eq!(c, x.powf(1.6) / 2.0, max_relative = 1e-3);
    }

    #[test]
    fn neumann_of_exterior_indicator() {
        let p = DomainPartition::standard(0.5);
        let m = Arc::new(build_mesh(&p, 8, 4, Grading::Uniform).unwrap());
        let k = KernelParams::new(0.5).unwrap();
        // u = 0 on Ω, u(1.5) = 1: N_s u(1.5) = a ∫_Ω |1.5 - y|^{-2} dy = a / c(1.5)
        let mut vals = vec![0.0; m.n_nodes()];
        let i = m.nodes.iter().position(|&x| x == 1.5).unwrap();
        vals[i] = 1.0;
        let u = Field::from_nodal(m.clone(), vals, 0.0);
        let n = neumann_derivative(&k, &u, 1.5).unwrap();
        assert_relative_eq!(n, k.a_ns / reflect_normalizer(&p, 1.5).unwrap(), max_relative = 1e-13);
        let c = Field::constant(m.clone(), 3.0);
        assert!(neumann_derivative(&k, &c, 1.7).unwrap().abs() < 1e-13);
        assert!(neumann_derivative(&k, &c, 0.5).is_err());
    }

    #[test]
    fn pv_of_constant_vanishes() {
        let p = DomainPartition::standard(0.3);
        let m = Arc::new(build_mesh(&p, 8, 4, Grading::Uniform).unwrap());
        let k = KernelParams::new(0.3).unwrap();
        let rules = Rules::new(QuadSpec::default());
        let c = Field::constant(m, 2.5);
        assert!(pv_fractional_laplacian(&k, &c, 0.1234, &rules).unwrap().abs() < 1e-10);
    }
}
