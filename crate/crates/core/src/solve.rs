//! Elliptic solves, the first eigenpair and time stepping for the mixed
//! (and pure Dirichlet) problems.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::assembly::{dirichlet_lift, LoadVector, MassKind, OperatorSet, Payoff};
use crate::domain::{DofSet, Mode};
use crate::error::{Error, Result};
use crate::field::Field;

/// Operators restricted to the active DoFs of one mode, with `A` factorized.
pub struct ModeOps<'a> {
    pub ops: &'a OperatorSet,
    pub mode: Mode,
    pub dofs: DofSet,
    pub a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn restrict(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

fn rel_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let bn = b.norm();
    if bn == 0.0 {
        return (a * x).norm();
    }
    (a * x - b).norm() / bn
}

impl<'a> ModeOps<'a> {
    pub fn new(ops: &'a OperatorSet, mode: Mode) -> Result<Self> {
        let dofs = ops.mesh.dofs(mode);
        if dofs.is_empty() {
            return Err(Error::SingularMatrix(format!("{mode:?} mode has no active DoFs")));
        }
        let a = restrict(&ops.a_full, &dofs.nodes);
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::SingularMatrix(format!("{mode:?} stiffness is not positive definite"))
        })?;
        Ok(Self { ops, mode, dofs, a, chol })
    }

    /// Ω-mass restricted to the active DoFs (zero rows on Neumann-exterior DoFs).
    pub fn mass(&self, kind: MassKind) -> DMatrix<f64> {
        match kind {
            MassKind::Consistent => restrict(&self.ops.m_omega, &self.dofs.nodes),
            MassKind::Lumped => DMatrix::from_diagonal(&DVector::from_iterator(
                self.dofs.len(),
                self.dofs.nodes.iter().map(|&i| self.ops.m_omega_lumped[i]),
            )),
        }
    }

    pub fn active_load(&self, load: &LoadVector) -> DVector<f64> {
        DVector::from_iterator(self.dofs.len(), self.dofs.nodes.iter().map(|&i| load.values[i]))
    }

    pub fn to_field(&self, coeffs: &DVector<f64>) -> Field {
        Field::from_active(self.ops.mesh.clone(), &self.dofs, coeffs.as_slice())
    }

    pub fn coeffs(&self, u: &Field) -> DVector<f64> {
        DVector::from_vec(u.active(&self.dofs))
    }

    /// `A x = b` with one step of iterative refinement if needed.
    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.chol.solve(b);
        if rel_residual(&self.a, &x, b) > 1e-12 {
            let r = b - &self.a * &x;
            x += self.chol.solve(&r);
        }
        let res = rel_residual(&self.a, &x, b);
        if !res.is_finite() || res > 1e-10 {
            return Err(Error::SingularMatrix(format!("relative residual {res:.3e} after refinement")));
        }
        Ok(x)
    }

    pub fn solve(&self, load: &LoadVector) -> Result<Field> {
        Ok(self.to_field(&self.solve_vec(&self.active_load(load))?))
    }

    /// Replace Neumann-exterior values of `x` by the A-harmonic extension of
    /// the Ω-coupled values.
    pub fn harmonic_extension(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let ext = &self.dofs.exterior;
        if ext.is_empty() {
            return Ok(x.clone());
        }
        let om = &self.dofs.omega_coupled;
        let aee = DMatrix::from_fn(ext.len(), ext.len(), |i, j| self.a[(ext[i], ext[j])]);
        let rhs = DVector::from_fn(ext.len(), |i, _| -om.iter().map(|&j| self.a[(ext[i], j)] * x[j]).sum::<f64>());
        let ue = aee
            .cholesky()
            .ok_or_else(|| Error::SingularMatrix("exterior block not positive definite".into()))?
            .solve(&rhs);
        let mut out = x.clone();
        for (k, &p) in ext.iter().enumerate() {
            out[p] = ue[k];
        }
        Ok(out)
    }
}

/// Solve `A u = F` on the active DoFs of `mode`.
pub fn solve_elliptic(mode: Mode, ops: &OperatorSet, load: &LoadVector) -> Result<Field> {
    ModeOps::new(ops, mode)?.solve(load)
}

/// Mixed solve with Dirichlet datum `h` on Σ₁.
pub fn solve_with_payoff(ops: &OperatorSet, load: &LoadVector, h: &Payoff) -> Result<Field> {
    let (lifted, boundary) = dirichlet_lift(ops, load, h)?;
    let u = solve_elliptic(Mode::Mixed, ops, &lifted)?;
    let mut vals = u.values().to_vec();
    for (v, b) in vals.iter_mut().zip(boundary.values()) {
        *v += b;
    }
    Ok(Field::from_nodal(ops.mesh.clone(), vals, boundary.exterior()))
}

/// Load of `f ≡ 1` on Ω.
pub fn unit_load(ops: &OperatorSet) -> LoadVector {
    crate::assembly::assemble_load(&ops.mesh, &|_| 1.0, &ops.quad, "f=1")
}

/// Torsion function `ξ̄₀` of the mixed problem.
pub fn solve_xi0(ops: &OperatorSet) -> Result<Field> {
    solve_elliptic(Mode::Mixed, ops, &unit_load(ops))
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenPair {
    pub mode: Mode,
    pub mass: MassKind,
    pub lambda1: f64,
    #[serde(skip)]
    pub chi: Field,
    /// `‖Aχ - λMχ‖ / (λ‖Mχ‖)` at exit.
    pub residual: f64,
    pub iterations: usize,
}

const EIGEN_MAX_ITER: usize = 5000;

/// Smallest eigenpair of `A x = λ M_Ω x` by inverse iteration.
///
/// Each step solves with the full active `A`, so Neumann-exterior values come
/// out A-harmonically extended and the iteration runs on the Schur-complement
/// pencil without forming it.
pub fn solve_eigen(mode: Mode, ops: &OperatorSet, mass: MassKind, tol: f64) -> Result<EigenPair> {
    let mo = ModeOps::new(ops, mode)?;
    let m = mo.mass(mass);
    let n = mo.dofs.len();
    let mut x = DVector::zeros(n);
    for &p in &mo.dofs.omega_coupled {
        x[p] = 1.0;
    }
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 1..=EIGEN_MAX_ITER {
        let z = mo.chol.solve(&(&m * &x));
        let mz = &m * &z;
        let zmz = z.dot(&mz);
        if !(zmz > 0.0) {
            return Err(Error::Convergence("iterate lost its Ω component".into()));
        }
        let az = &mo.a * &z;
        lambda = z.dot(&az) / zmz;
        let scale = zmz.sqrt();
        x = z / scale;
        residual = (az - &mz * lambda).norm() / (lambda * mz.norm());
        if residual < tol {
            if x.sum() < 0.0 {
                x = -x;
            }
            return Ok(EigenPair { mode, mass, lambda1: lambda, chi: mo.to_field(&x), residual, iterations: it });
        }
    }
    Err(Error::Convergence(format!(
        "inverse iteration stalled at residual {residual:.3e} (λ ≈ {lambda}) after {EIGEN_MAX_ITER} steps"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stepper {
    ImplicitEuler,
    Trapezoidal,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub stepper: Stepper,
    pub mass: MassKind,
    pub dt: f64,
    /// `(uᵀ M u)^{1/2}` with the stepping mass, per time.
    pub l2_omega: Vec<f64>,
}

impl Trajectory {
    /// Index of the stored time closest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.dt).round() as usize;
        k.min(self.times.len() - 1)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "value", "t"])?;
        for (t, f) in self.times.iter().zip(&self.fields) {
            for (x, v) in f.mesh().nodes.iter().zip(f.values()) {
                wr.write_record([format!("{x:.17e}"), format!("{v:.17e}"), format!("{t:.17e}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Integrate `M u' + A u = 0` (Neumann-exterior rows algebraic) from `u0`.
///
/// Exterior values of `u0` are replaced by their A-harmonic extension, so the
/// constraint holds from the first stored state on.
pub fn solve_parabolic(ops: &OperatorSet, u0: &Field, t_end: f64, dt: f64, stepper: Stepper, mass: MassKind) -> Result<Trajectory> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::Step(format!("invalid time step {dt} or horizon {t_end}")));
    }
    let mo = ModeOps::new(ops, Mode::Mixed)?;
    let m = mo.mass(mass);
    let steps = (t_end / dt).round() as usize;
    let theta = match stepper {
        Stepper::ImplicitEuler => 1.0,
        Stepper::Trapezoidal => 0.5,
    };
    let lhs = &m / dt + &mo.a * theta;
    let rhs_op = &m / dt - &mo.a * (1.0 - theta);
    let chol = lhs.cholesky().ok_or_else(|| Error::Step("step matrix not positive definite".into()))?;
    let mut x = mo.harmonic_extension(&mo.coeffs(u0))?;
    let norm = |x: &DVector<f64>| x.dot(&(&m * x)).max(0.0).sqrt();
    let mut traj = Trajectory {
        times: vec![0.0],
        fields: vec![mo.to_field(&x)],
        stepper,
        mass,
        dt,
        l2_omega: vec![norm(&x)],
    };
    for k in 1..=steps {
        x = chol.solve(&(&rhs_op * &x));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Step(format!("non-finite state at step {k}")));
        }
        traj.times.push(k as f64 * dt);
        traj.l2_omega.push(norm(&x));
        traj.fields.push(mo.to_field(&x));
    }
    Ok(traj)
}

/// Amplification factor of one step for an eigenmode with eigenvalue `lambda`.
pub fn step_factor(stepper: Stepper, lambda: f64, dt: f64) -> f64 {
    match stepper {
        Stepper::ImplicitEuler => 1.0 / (1.0 + lambda * dt),
        Stepper::Trapezoidal => (1.0 - 0.5 * lambda * dt) / (1.0 + 0.5 * lambda * dt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_load, assemble_stiffness};
    use crate::domain::{build_mesh, DomainPartition, Grading};
    use crate::kernel::KernelParams;
    use crate::quadrature::QuadSpec;
    use std::sync::Arc;

    fn ops(p: DomainPartition, n: usize, m: usize) -> OperatorSet {
        let s = p.s;
        let mesh = Arc::new(build_mesh(&p, n, m, Grading::default()).unwrap());
        assemble_stiffness(mesh, KernelParams::new(s).unwrap(), QuadSpec::default()).unwrap()
    }

    #[test]
    fn zero_load_gives_zero() {
        let o = ops(DomainPartition::standard(0.4), 16, 8);
        let z = assemble_load(&o.mesh, &|_| 0.0, &o.quad, "0");
        assert_eq!(solve_elliptic(Mode::Mixed, &o, &z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn unit_payoff_gives_unit_solution() {
        for s in [0.3, 0.5, 0.7] {
            let o = ops(DomainPartition::standard(s), 16, 8);
            let z = assemble_load(&o.mesh, &|_| 0.0, &o.quad, "0");
            let u = solve_with_payoff(&o, &z, &Payoff::constant(1.0)).unwrap();
            let err = u.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "s = {s}: max |u - 1| = {err:.3e}");
        }
    }

    #[test]
    fn xi0_is_positive_and_symmetric() {
        let o = ops(DomainPartition::symmetric(0.5), 16, 8);
        let xi = solve_xi0(&o).unwrap();
        let nodes = &o.mesh.nodes;
        for i in o.mesh.omega_interior_nodes() {
            assert!(xi.values()[i] > 0.0);
            let j = nodes.iter().position(|&y| (y + nodes[i]).abs() < 1e-12).unwrap();
            assert!((xi.values()[i] - xi.values()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenpair_is_normalized_and_nonnegative() {
        let o = ops(DomainPartition::standard(0.5), 16, 8);
        let e = solve_eigen(Mode::Mixed, &o, MassKind::Consistent, 1e-11).unwrap();
        let mo = ModeOps::new(&o, Mode::Mixed).unwrap();
        let c = mo.coeffs(&e.chi);
        let m = mo.mass(MassKind::Consistent);
        assert!((c.dot(&(&m * &c)) - 1.0).abs() < 1e-12);
        assert!(c.iter().all(|&v| v >= -1e-12));
        let d = solve_eigen(Mode::Dirichlet, &o, MassKind::Consistent, 1e-11).unwrap();
        assert!(e.lambda1 > 0.0 && e.lambda1 <= d.lambda1);
    }

    #[test]
    fn zero_initial_state_stays_zero() {
        let o = ops(DomainPartition::standard(0.5), 16, 8);
        let u0 = Field::zeros(o.mesh.clone());
        let tr = solve_parabolic(&o, &u0, 0.5, 0.1, Stepper::ImplicitEuler, MassKind::Lumped).unwrap();
        assert_eq!(tr.fields.len(), 6);
        assert!(tr.fields.iter().all(|f| f.max_abs() == 0.0));
    }
}
