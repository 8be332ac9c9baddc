//! Numerical certificates: measured constants plus a verdict for each
//! inequality, computed on one discretization. Refinement stability is
//! judged afterwards by [`certify_stability`] over a mesh sweep.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_load, assemble_weighted_form, LoadVector, MassKind, OperatorSet, Payoff};
use crate::domain::{boundary_distance, DofClass, DomainPartition, Grading, Interval, Mesh, Mode, Region};
use crate::error::{Error, Result};
use crate::field::{torsion_profile, Field};
use crate::kernel::{neumann_derivative, pv_fractional_laplacian};
use crate::quadrature::{QuadSpec, Rules};
use crate::solve::{solve_eigen, solve_parabolic, solve_with_payoff, step_factor, unit_load, EigenPair, ModeOps, Stepper, Trajectory};
use crate::walker::{build_chain, estimate_payoff};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub digest: String,
    pub tolerance: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl Certificate {
    fn new(name: &str, digest: String, tolerance: f64) -> Self {
        Self { name: name.into(), constants: BTreeMap::new(), digest, tolerance, pass: false, notes: Vec::new() }
    }

    fn set(&mut self, key: &str, v: f64) {
        self.constants.insert(key.into(), v);
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn get(&self, key: &str) -> f64 {
        self.constants.get(key).copied().unwrap_or(f64::NAN)
    }
}

/// Short hash of the textual inputs of a certificate.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

fn ops_digest(ops: &OperatorSet, extra: &[&str]) -> String {
    let s = format!("{}", ops.kernel.s);
    let mut parts = vec![ops.mesh_hash.as_str(), s.as_str()];
    parts.extend_from_slice(extra);
    digest(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FamilyKind {
    /// One to three smooth bumps inside Ω.
    RandomBumps,
    /// Random bumps on top of a positive constant on Ω.
    BumpsWithFloor,
    /// The indicator of Ω.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bump {
    pub center: f64,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.radius;
        if t.abs() < 1.0 {
            self.amplitude * (1.0 - 1.0 / (1.0 - t * t)).exp()
        } else {
            0.0
        }
    }
}

/// Nonnegative function on closure(Ω), zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Member {
    pub bumps: Vec<Bump>,
    pub floor: f64,
    omega: Vec<Interval>,
}

impl Member {
    pub fn eval(&self, x: f64) -> f64 {
        if !self.omega.iter().any(|iv| iv.contains_closed(x)) {
            return 0.0;
        }
        self.floor + self.bumps.iter().map(|b| b.eval(x)).sum::<f64>()
    }

    pub fn scaled(&self, a: f64) -> Member {
        Member {
            bumps: self.bumps.iter().map(|b| Bump { amplitude: a * b.amplitude, ..b.clone() }).collect(),
            floor: a * self.floor,
            omega: self.omega.clone(),
        }
    }

    /// Nodal interpolant on the active DoFs of `mode`.
    pub fn field(&self, mesh: &std::sync::Arc<Mesh>, mode: Mode) -> Field {
        let d = mesh.dofs(mode);
        let vals: Vec<f64> = d.nodes.iter().map(|&i| self.eval(mesh.nodes[i])).collect();
        Field::from_active(mesh.clone(), &d, &vals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionFamily {
    pub kind: FamilyKind,
    pub count: usize,
    pub seed: u64,
    pub members: Vec<Member>,
}

impl FunctionFamily {
    pub fn generate(kind: FamilyKind, count: usize, seed: u64, omega: &[Interval]) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("function family needs at least one member".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = omega.iter().map(Interval::len).sum();
        let mut members = Vec::with_capacity(count);
        for _ in 0..count {
            let (bumps, floor) = match kind {
                FamilyKind::Constant => (Vec::new(), 1.0),
                FamilyKind::RandomBumps | FamilyKind::BumpsWithFloor => {
                    let nb = rng.random_range(1..=3);
                    let bumps = (0..nb)
                        .map(|_| {
                            let mut pick = rng.random::<f64>() * total;
                            let iv = *omega
                                .iter()
                                .find(|iv| {
                                    pick -= iv.len();
                                    pick <= 0.0
                                })
                                .unwrap_or(omega.last().unwrap());
                            let radius = iv.len() * rng.random_range(0.15..0.35);
                            let center = rng.random_range(iv.lo + radius..iv.hi - radius);
                            Bump { center, radius, amplitude: rng.random_range(0.5..2.0) }
                        })
                        .collect();
                    let floor = if kind == FamilyKind::BumpsWithFloor { rng.random_range(0.2..0.5) } else { 0.0 };
                    (bumps, floor)
                }
            };
            members.push(Member { bumps, floor, omega: omega.to_vec() });
        }
        Ok(Self { kind, count, seed, members })
    }

    pub fn descriptor(&self) -> String {
        format!("{:?}/{}/{}", self.kind, self.count, self.seed)
    }
}

/// `∫_Ω f` with geometric grading toward ∂Ω and a split at the kink of δ.
pub fn integrate_omega(mesh: &Mesh, rules: &Rules, mut f: impl FnMut(f64) -> f64) -> f64 {
    let p = &mesh.partition;
    let on_boundary = |x: f64| p.omega.iter().any(|iv| iv.lo == x || iv.hi == x);
    let mut total = 0.0;
    for el in mesh.elements.iter().filter(|e| e.in_omega()) {
        let mut cuts = vec![el.a, el.b];
        cuts.extend(p.omega.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).filter(|&m| m > el.a && m < el.b));
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            total += rules.graded(w[0], w[1], on_boundary(w[0]), on_boundary(w[1]), &mut f);
        }
    }
    total
}

/// `∫` over elements of `region`, graded toward both ends of every element.
fn integrate_elements(mesh: &Mesh, rules: &Rules, region: Region, mut f: impl FnMut(f64) -> f64) -> f64 {
    mesh.elements
        .iter()
        .filter(|e| e.region == region)
        .map(|e| rules.graded(e.a, e.b, true, true, &mut f))
        .sum()
}

/// Nodes strictly inside Ω where pointwise ratios are taken.
fn ratio_nodes(mesh: &Mesh) -> Vec<usize> {
    mesh.omega_interior_nodes()
}

fn min_ratio(mesh: &Mesh, num: &Field, den: impl Fn(usize) -> f64) -> f64 {
    ratio_nodes(mesh).into_iter().map(|i| num.values()[i] / den(i)).fold(f64::INFINITY, f64::min)
}

fn ops_rules(ops: &OperatorSet) -> Rules {
    Rules::new(ops.quad)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// First mixed eigenvalue and the Poincaré bound on sampled fields.
pub fn certify_poincare(ops: &OperatorSet, samples: &FunctionFamily, tol: f64) -> Result<Certificate> {
    let mut c = Certificate::new("poincare", ops_digest(ops, &[&samples.descriptor()]), 1e-10);
    let mo = ModeOps::new(ops, Mode::Mixed)?;
    let m = mo.mass(MassKind::Consistent);
    let eig = solve_eigen(Mode::Mixed, ops, MassKind::Consistent, tol)?;
    let dir = solve_eigen(Mode::Dirichlet, ops, MassKind::Consistent, tol)?;
    let lam = eig.lambda1;
    let rq = |x: &DVector<f64>| x.dot(&(&mo.a * x)) / x.dot(&(&m * x));
    let chi = mo.coeffs(&eig.chi);
    let chi_gap = (rq(&chi) - lam).abs() / lam;
    let mut min_q = f64::INFINITY;
    for mem in &samples.members {
        let x = mo.coeffs(&mem.field(&ops.mesh, Mode::Mixed));
        min_q = min_q.min(rq(&x));
    }
    let a = ops.kernel.a_ns;
    c.set("lambda1", lam);
    c.set("lambda1_over_a", lam / a);
    c.set("lambda1_dirichlet", dir.lambda1);
    c.set("eigen_residual", eig.residual);
    c.set("rayleigh_identity_error", chi_gap);
    c.set("min_sample_quotient", min_q);
    c.set("iterations", eig.iterations as f64);
    c.pass = lam > 0.0 && min_q >= lam * (1.0 - 1e-10) && chi_gap < 1e-8 && lam <= dir.lambda1;
    Ok(c)
}

/// Hardy quotient `∫_Ω φ²/δ^{2s} / [φ]²` over fields vanishing off Ω.
pub fn certify_hardy(ops: &OperatorSet, samples: &FunctionFamily) -> Result<Certificate> {
    let mut c = Certificate::new("hardy", ops_digest(ops, &[&samples.descriptor()]), 1e-12);
    let mesh = &ops.mesh;
    let s = ops.kernel.s;
    let rules = ops_rules(ops);
    let mo = ModeOps::new(ops, Mode::Dirichlet)?;
    let scale = 2.0 / ops.kernel.a_ns;
    let quotient = |phi: &Field| -> Result<f64> {
        let x = mo.coeffs(phi);
        let semi = scale * x.dot(&(&mo.a * &x));
        let p = &mesh.partition;
        let num = integrate_omega(mesh, &rules, |y| {
            let d = boundary_distance(p, y).unwrap_or(0.0);
            if d == 0.0 { 0.0 } else { phi.eval(y).powi(2) * d.powf(-2.0 * s) }
        });
        Ok(num / semi)
    };
    let mut fields: Vec<Field> = samples.members.iter().map(|m| m.field(mesh, Mode::Dirichlet)).collect();
    let parabola = {
        let d = mesh.dofs(Mode::Dirichlet);
        let vals: Vec<f64> = d
            .nodes
            .iter()
            .map(|&i| {
                let x = mesh.nodes[i];
                mesh.partition.omega.iter().filter(|iv| iv.contains(x)).map(|iv| (x - iv.lo) * (iv.hi - x)).sum()
            })
            .collect();
        Field::from_active(mesh.clone(), &d, &vals)
    };
    fields.push(parabola);
    let mut sup: f64 = 0.0;
    let mut scaling: f64 = 0.0;
    for f in &fields {
        let q = quotient(f)?;
        let q2 = quotient(&f.scaled(2.0))?;
        scaling = scaling.max(rel_diff(q, q2));
        sup = sup.max(q);
    }
    c.set("sup_ratio", sup);
    c.set("parabola_ratio", quotient(fields.last().unwrap())?);
    c.set("scaling_error", scaling);
    c.pass = sup.is_finite() && sup > 0.0 && scaling < 1e-12;
    Ok(c)
}

/// Exponent `q` with `q/2 = 1 + r s / N`, after checking `0 ≤ r ≤ 2*_s`.
pub fn sobolev_exponent(s: f64, r: f64, r_ceiling: f64) -> Result<f64> {
    let crit = if s < 0.5 { 2.0 / (1.0 - 2.0 * s) } else { r_ceiling };
    if !(0.0..=crit).contains(&r) {
        return Err(Error::Domain(format!("r = {r} outside [0, {crit}] for s = {s}")));
    }
    Ok(2.0 * (1.0 + r * s))
}

/// Empirical constant of `(∫_Ω u^r |φ|^q)^{1/q} ≤ C (∬_Q u(x)u(y)(φ(x)-φ(y))² k + ∫_Ω u²φ²)^{1/2}`.
pub fn certify_weighted_sobolev(ops: &OperatorSet, u: &Field, samples: &FunctionFamily, r: f64, r_ceiling: f64) -> Result<Certificate> {
    let s = ops.kernel.s;
    let q = sobolev_exponent(s, r, r_ceiling)?;
    let mut c = Certificate::new("weighted_sobolev", ops_digest(ops, &[&samples.descriptor(), &format!("r={r}")]), 1e-12);
    let mesh = &ops.mesh;
    let rules = ops_rules(ops);
    let b = assemble_weighted_form(u, ops.quad)?;
    let ratio = |phi: &Field| -> f64 {
        let x = DVector::from_column_slice(phi.values());
        let lhs = integrate_omega(mesh, &rules, |y| u.eval(y).max(0.0).powf(r) * phi.eval(y).abs().powf(q)).powf(1.0 / q);
        let l2 = integrate_omega(mesh, &rules, |y| (u.eval(y) * phi.eval(y)).powi(2));
        lhs / (x.dot(&(&b * &x)) + l2).sqrt()
    };
    let mut fields: Vec<Field> = samples.members.iter().map(|m| m.field(mesh, Mode::Mixed)).collect();
    let d = mesh.dofs(Mode::Mixed);
    fields.push(Field::from_active(mesh.clone(), &d, &vec![1.0; d.len()]));
    let mut sup: f64 = 0.0;
    let mut scaling: f64 = 0.0;
    for f in &fields {
        let a = ratio(f);
        scaling = scaling.max(rel_diff(a, ratio(&f.scaled(2.0))));
        sup = sup.max(a);
    }
    c.set("r", r);
    c.set("q", q);
    c.set("sup_ratio", sup);
    c.set("constant_field_ratio", ratio(fields.last().unwrap()));
    c.set("scaling_error", scaling);
    c.pass = sup.is_finite() && sup > 0.0 && scaling < 1e-12;
    Ok(c)
}

/// `sup_Ω (v/u) / ‖g‖_{L^p}` where `v` solves the mixed problem with data `g`.
pub fn certify_linfty_ratio(ops: &OperatorSet, f: &Member, g_family: &FunctionFamily, p: f64) -> Result<Certificate> {
    let s = ops.kernel.s;
    if p <= 1.0 / s {
        return Err(Error::Domain(format!("p = {p} must exceed N/s = {}", 1.0 / s)));
    }
    let mut c = Certificate::new("linfty_ratio", ops_digest(ops, &[&g_family.descriptor(), &format!("p={p}")]), 1e-12);
    let mesh = &ops.mesh;
    let rules = ops_rules(ops);
    let mo = ModeOps::new(ops, Mode::Mixed)?;
    let solve = |m: &Member| mo.solve(&assemble_load(mesh, &|x| m.eval(x), &ops.quad, "g"));
    let u = solve(f)?;
    let lp = |m: &Member| integrate_omega(mesh, &rules, |x| m.eval(x).abs().powf(p)).powf(1.0 / p);
    let sup_ratio = |v: &Field| ratio_nodes(mesh).into_iter().map(|i| v.values()[i] / u.values()[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut sup: f64 = 0.0;
    for g in &g_family.members {
        sup = sup.max(sup_ratio(&solve(g)?) / lp(g));
    }
    let self_check = sup_ratio(&u);
    c.set("sup_ratio", sup);
    c.set("self_ratio", self_check);
    c.set("self_ratio_bound", 1.0 / lp(f));
    c.pass = sup.is_finite() && sup > 0.0 && (self_check - 1.0).abs() < 1e-10;
    Ok(c)
}

/// Hopf constant `min_Ω u / (ξ̄₀ ∫_Ω f ξ̄₀)` over a family of sources.
pub fn certify_elliptic_hopf(ops: &OperatorSet, xi0: &Field, family: &FunctionFamily) -> Result<Certificate> {
    let mut c = Certificate::new("elliptic_hopf", ops_digest(ops, &[&family.descriptor()]), 1e-10);
    let mesh = &ops.mesh;
    let mo = ModeOps::new(ops, Mode::Mixed)?;
    let xi = xi0.values();
    let c_of = |m: &dyn Fn(f64) -> f64| -> Result<f64> {
        let load = assemble_load(mesh, m, &ops.quad, "f");
        let u = mo.solve(&load)?;
        let norm = load.pair(xi0);
        Ok(min_ratio(mesh, &u, |i| xi[i] * norm))
    };
    let mut min_c = f64::INFINITY;
    let mut per = Vec::new();
    for m in &family.members {
        let v = c_of(&|x| m.eval(x))?;
        per.push(v);
        min_c = min_c.min(v);
    }
    let unit = unit_load(ops);
    let c_unit = c_of(&|_| 1.0)?;
    let identity = (c_unit * unit.pair(xi0) - 1.0).abs();
    let first = &family.members[0];
    let scaling = rel_diff(per[0], c_of(&|x| 2.0 * first.eval(x))?);
    let a = ops.kernel.a_ns;
    c.set("min_c", min_c);
    c.set("min_c_over_a", min_c / a);
    c.set("c_unit", c_unit);
    c.set("unit_identity_error", identity);
    c.set("scaling_error", scaling);
    c.pass = min_c > 0.0 && identity < 1e-10 && scaling < 1e-10;
    Ok(c)
}

/// `C_up = max χ̄₁/ξ̄₀`, `C_down = max ξ̄₀/χ̄₁` on interior Ω nodes.
pub fn certify_eigen_comparison(ops: &OperatorSet, xi0: &Field, eig: &EigenPair) -> Result<Certificate> {
    let mut c = Certificate::new("eigen_comparison", ops_digest(ops, &[&format!("{:?}", eig.mass)]), 0.0);
    let mesh = &ops.mesh;
    let (chi, xi) = (eig.chi.values(), xi0.values());
    let nodes = ratio_nodes(mesh);
    let c_up = nodes.iter().map(|&i| chi[i] / xi[i]).fold(f64::NEG_INFINITY, f64::max);
    let c_down = nodes.iter().map(|&i| xi[i] / chi[i]).fold(f64::NEG_INFINITY, f64::max);
    let m = &ops.m_omega;
    let (xv, cv) = (DVector::from_column_slice(xi), DVector::from_column_slice(chi));
    let cx = cv.dot(&(m * &xv));
    let floor_up = cx / xv.dot(&(m * &xv));
    let floor_down = cx / cv.dot(&(m * &cv));
    c.set("c_up", c_up);
    c.set("c_down", c_down);
    c.set("c", c_up.max(c_down));
    c.set("product", c_up * c_down);
    c.set("floor_up", floor_up);
    c.set("floor_down", floor_down);
    if c_up < floor_up || c_down < floor_down {
        c.note("crude integral floor exceeds a nodal maximum (interface node values dominate)");
    }
    c.pass = c_up.is_finite() && c_down.is_finite() && c_up > 0.0 && c_down > 0.0 && c_up * c_down >= 1.0 - 1e-12;
    Ok(c)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Time grid in units of `1/λ₁` used by the parabolic certificates.
pub const PARABOLIC_GRID: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 2.0, 3.0];

/// Parabolic run settings shared by the certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParabolicSpec {
    /// Step size in units of `1/λ₁`.
    pub dt_lambda: f64,
    pub stepper: Stepper,
    pub mass: MassKind,
}

impl Default for ParabolicSpec {
    fn default() -> Self {
        Self { dt_lambda: 0.05, stepper: Stepper::ImplicitEuler, mass: MassKind::Lumped }
    }
}

fn run_to(ops: &OperatorSet, u0: &Field, lambda: f64, grid: &[f64], spec: ParabolicSpec) -> Result<Trajectory> {
    let t_end = grid.iter().cloned().fold(0.0, f64::max) / lambda;
    solve_parabolic(ops, u0, t_end, spec.dt_lambda / lambda, spec.stepper, spec.mass)
}

/// `c(t) = min_Ω u(·,t) / (ξ̄₀ ∫_Ω u₀ ξ̄₀)` on a time grid for a family of data.
pub fn certify_parabolic_hopf(ops: &OperatorSet, xi0: &Field, eig: &EigenPair, family: &FunctionFamily, grid: &[f64], spec: ParabolicSpec) -> Result<Certificate> {
    let mut c = Certificate::new("parabolic_hopf", ops_digest(ops, &[&family.descriptor(), &format!("{spec:?}")]), 0.0);
    let mesh = &ops.mesh;
    let lam = eig.lambda1;
    let xi = xi0.values();
    let xv = DVector::from_column_slice(xi);
    let mut mins = vec![f64::INFINITY; grid.len()];
    let mut min_val: f64 = 0.0;
    for m in &family.members {
        let u0 = m.field(mesh, Mode::Mixed);
        let norm = DVector::from_column_slice(u0.values()).dot(&(&ops.m_omega * &xv));
        let tr = run_to(ops, &u0, lam, grid, spec)?;
        let umax = u0.max_abs();
        for f in &tr.fields {
            min_val = min_val.min(f.values().iter().cloned().fold(f64::INFINITY, f64::min) / umax);
        }
        for (k, &g) in grid.iter().enumerate() {
            let u = &tr.fields[tr.index_at(g / lam)];
            mins[k] = mins[k].min(min_ratio(mesh, u, |i| xi[i] * norm));
        }
    }
    for (k, &g) in grid.iter().enumerate() {
        c.set(&format!("c_emp(t={g}/lambda1)"), mins[k]);
    }
    // small-t exponent: log c + λ t against log t on t ≤ 1/λ
    let small: Vec<usize> = (0..grid.len()).filter(|&k| grid[k] <= 1.0 && mins[k] > 0.0).collect();
    if small.len() >= 2 {
        let x: Vec<f64> = small.iter().map(|&k| (grid[k] / lam).ln()).collect();
        let y: Vec<f64> = small.iter().map(|&k| mins[k].ln() + grid[k]).collect();
        c.set("small_t_slope", fit_slope(&x, &y));
    }
    let s = ops.kernel.s;
    c.set("exponent_one_over_two_gamma", (1.0 + 2.0 * s) / (4.0 * s));
    c.set("min_normalized_value", min_val);
    c.note("small-t slope is recorded for comparison only");
    c.pass = mins.iter().all(|&v| v > 0.0);
    Ok(c)
}

/// Parabolic positivity: `u₀ ≥ 0 ⇒ u ≥ -1e-10 ‖u₀‖∞` at every step.
pub fn certify_parabolic_positivity(ops: &OperatorSet, lambda: f64, family: &FunctionFamily, grid: &[f64], spec: ParabolicSpec) -> Result<Certificate> {
    let mut c = Certificate::new("parabolic_positivity", ops_digest(ops, &[&family.descriptor(), &format!("{spec:?}")]), 1e-10);
    let mut worst: f64 = 0.0;
    let mut decreasing = true;
    for m in &family.members {
        let u0 = m.field(&ops.mesh, Mode::Mixed);
        let tr = run_to(ops, &u0, lambda, grid, spec)?;
        let umax = u0.max_abs();
        for f in &tr.fields {
            worst = worst.min(f.values().iter().cloned().fold(f64::INFINITY, f64::min) / umax);
        }
        decreasing &= tr.l2_omega.windows(2).all(|w| w[1] < w[0]);
    }
    c.set("min_normalized_value", worst);
    c.set("l2_strictly_decreasing", if decreasing { 1.0 } else { 0.0 });
    c.pass = worst >= -1e-10 && decreasing;
    Ok(c)
}

/// Decay of `u₀ = χ̄₁`: nodewise `u e^{λt}/χ̄₁` at `t = 1/λ` and the slope of
/// `log ∫ u χ̄₁` on `[1/λ, 3/λ]`, at `dt = 1/(10λ)` and after one halving.
pub fn certify_eigen_decay(ops: &OperatorSet, eig: &EigenPair, xi0: &Field, stepper: Stepper) -> Result<Certificate> {
    let mut c = Certificate::new("eigen_decay", ops_digest(ops, &[&format!("{stepper:?}")]), 0.01);
    let mesh = &ops.mesh;
    let lam = eig.lambda1;
    let nodes = ratio_nodes(mesh);
    let chi = eig.chi.values();
    let mv = if eig.mass == MassKind::Lumped {
        ops.mass(MassKind::Lumped)
    } else {
        ops.m_omega.clone()
    };
    let cv = DVector::from_column_slice(chi);
    let mut verdicts = Vec::new();
    for (label, dt_lambda) in [("dt0", 0.1), ("dt0/2", 0.05)] {
        let dt = dt_lambda / lam;
        let tr = solve_parabolic(ops, &eig.chi, 3.0 / lam, dt, stepper, eig.mass)?;
        let k1 = tr.index_at(1.0 / lam);
        let t1 = tr.times[k1];
        let u = tr.fields[k1].values();
        let ratios: Vec<f64> = nodes.iter().map(|&i| u[i] * (lam * t1).exp() / chi[i]).collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut ts, mut ys) = (Vec::new(), Vec::new());
        for (t, f) in tr.times.iter().zip(&tr.fields) {
            if *t >= 1.0 / lam - 1e-12 {
                ts.push(*t);
                ys.push(DVector::from_column_slice(f.values()).dot(&(&mv * &cv)).ln());
            }
        }
        let slope = fit_slope(&ts, &ys);
        let slope_err = (slope / -lam - 1.0).abs();
        c.set(&format!("ratio_min[{label}]"), lo);
        c.set(&format!("ratio_max[{label}]"), hi);
        c.set(&format!("slope_rel_error[{label}]"), slope_err);
        verdicts.push(lo >= 0.99 && hi <= 1.01 && slope_err < 0.02);
        if label == "dt0/2" {
            // u = ρⁿ χ̄₁ exactly, so c(t) ∫χ̄₁ξ̄₀ / ρⁿ = min(χ̄₁/ξ̄₀) = 1/C_down
            let xi = xi0.values();
            let norm = cv.dot(&(&ops.m_omega * DVector::from_column_slice(xi)));
            let rho = step_factor(stepper, lam, dt).powi(k1 as i32);
            let c_emp = min_ratio(mesh, &tr.fields[k1], |i| xi[i] * norm);
            let c_down = nodes.iter().map(|&i| xi[i] / chi[i]).fold(f64::NEG_INFINITY, f64::max);
            c.set("bracket_identity_error", (c_emp * norm / rho * c_down - 1.0).abs());
        }
    }
    c.set("lambda1", lam);
    c.pass = verdicts[1];
    if !verdicts[0] {
        c.note("initial step size did not meet the 1% band; halved step used");
    }
    Ok(c)
}

/// `θ_{2j}(t) = ∫_Ω u² w^{2j}` with `w = v/u`, `v` the discrete decay of χ̄₁.
pub fn monitor_theta(ops: &OperatorSet, traj: &Trajectory, eig: &EigenPair, j_list: &[u32]) -> Result<Certificate> {
    let mut c = Certificate::new("theta_monotone", ops_digest(ops, &[&format!("{:?}/{}", traj.stepper, traj.dt)]), 1e-8);
    let rho = step_factor(traj.stepper, eig.lambda1, traj.dt);
    let m = &ops.m_omega_lumped;
    let nodes: Vec<usize> = (0..ops.n_nodes()).filter(|&i| m[i] > 0.0 && ops.mesh.classes[i] != DofClass::Eliminated).collect();
    let chi = eig.chi.values();
    let mut pass = true;
    for &j in j_list {
        let mut theta = Vec::with_capacity(traj.fields.len());
        for (n, f) in traj.fields.iter().enumerate() {
            let u = f.values();
            let vn = rho.powi(n as i32);
            let mut acc = 0.0;
            for &i in &nodes {
                if !(u[i] > 0.0) {
                    return Err(Error::Ratio(format!("u = {} at node x = {} (step {n})", u[i], ops.mesh.nodes[i])));
                }
                let w = vn * chi[i] / u[i];
                acc += m[i] * u[i] * u[i] * w.powi(2 * j as i32);
            }
            theta.push(acc);
        }
        let worst = theta.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max) / theta[0];
        c.set(&format!("theta_{}(0)", 2 * j), theta[0]);
        c.set(&format!("theta_{}(end)", 2 * j), *theta.last().unwrap());
        c.set(&format!("max_step_increase_{}", 2 * j), worst);
        pass &= worst < 1e-8;
    }
    c.pass = pass;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeltaMode {
    Elliptic,
    Parabolic,
}

/// `min_Ω u / (δ^s ∫ data δ^s)`, for the elliptic solution or along the flow.
pub fn certify_delta_lower_bounds(ops: &OperatorSet, family: &FunctionFamily, mode: DeltaMode, eig: Option<&EigenPair>, grid: &[f64], spec: ParabolicSpec) -> Result<Certificate> {
    let name = match mode {
        DeltaMode::Elliptic => "delta_lower_bound_elliptic",
        DeltaMode::Parabolic => "delta_lower_bound_parabolic",
    };
    let mut c = Certificate::new(name, ops_digest(ops, &[&family.descriptor()]), 0.0);
    let mesh = &ops.mesh;
    let p = &mesh.partition;
    let s = ops.kernel.s;
    let rules = ops_rules(ops);
    let ds: Vec<f64> = mesh.nodes.iter().map(|&x| boundary_distance(p, x).unwrap_or(0.0).powf(s)).collect();
    let weight = |g: &dyn Fn(f64) -> f64| integrate_omega(mesh, &rules, |x| g(x) * boundary_distance(p, x).unwrap_or(0.0).powf(s));
    let mut worst = f64::INFINITY;
    match mode {
        DeltaMode::Elliptic => {
            let mo = ModeOps::new(ops, Mode::Mixed)?;
            for m in &family.members {
                let u = mo.solve(&assemble_load(mesh, &|x| m.eval(x), &ops.quad, "f"))?;
                let w = weight(&|x| m.eval(x));
                worst = worst.min(min_ratio(mesh, &u, |i| ds[i] * w));
            }
            let unit = mo.solve(&unit_load(ops))?;
            c.set("unit_source", min_ratio(mesh, &unit, |i| ds[i] * weight(&|_| 1.0)));
        }
        DeltaMode::Parabolic => {
            let eig = eig.ok_or_else(|| Error::Config("parabolic δ^s bound needs the eigenpair".into()))?;
            let lam = eig.lambda1;
            let mut data: Vec<Field> = vec![eig.chi.clone()];
            data.extend(family.members.iter().map(|m| m.field(mesh, Mode::Mixed)));
            for (k, u0) in data.iter().enumerate() {
                let w = weight(&|x| u0.eval(x));
                let tr = run_to(ops, u0, lam, grid, spec)?;
                let mut member_min = f64::INFINITY;
                for &g in grid {
                    member_min = member_min.min(min_ratio(mesh, &tr.fields[tr.index_at(g / lam)], |i| ds[i] * w));
                }
                if k == 0 {
                    c.set("eigenfunction_data", member_min);
                }
                worst = worst.min(member_min);
            }
        }
    }
    c.set("min_c", worst);
    c.pass = worst > 0.0 && worst.is_finite();
    Ok(c)
}

/// Mixed solutions dominate Dirichlet ones and are nonnegative for `f ≥ 0`.
pub fn certify_comparison(ops: &OperatorSet, family: &FunctionFamily) -> Result<Certificate> {
    let mut c = Certificate::new("comparison", ops_digest(ops, &[&family.descriptor()]), 1e-10);
    let mesh = &ops.mesh;
    let mixed = ModeOps::new(ops, Mode::Mixed)?;
    let dir = ModeOps::new(ops, Mode::Dirichlet)?;
    let mut worst_gap: f64 = f64::INFINITY;
    let mut worst_sign: f64 = f64::INFINITY;
    let unit = unit_load(ops);
    let mut loads = vec![unit];
    loads.extend(family.members.iter().map(|m| assemble_load(mesh, &|x| m.eval(x), &ops.quad, "f")));
    for load in &loads {
        let um = mixed.solve(load)?;
        let ud = dir.solve(load)?;
        let scale = um.max_abs();
        for (a, b) in um.values().iter().zip(ud.values()) {
            worst_gap = worst_gap.min((a - b) / scale);
        }
        worst_sign = worst_sign.min(um.values().iter().cloned().fold(f64::INFINITY, f64::min) / scale);
    }
    c.set("min_normalized_gap", worst_gap);
    c.set("min_normalized_value", worst_sign);
    c.pass = worst_gap >= -1e-10 && worst_sign >= -1e-10;
    Ok(c)
}

/// Green identity: `uᵀ A φ = ∫_Ω φ (-Δ)^s u + ∫_{Σ₂} φ N_s u`.
pub fn certify_green_identity(ops: &OperatorSet, pairs: &[(Field, Field)]) -> Result<Certificate> {
    let mut c = Certificate::new("green_identity", ops_digest(ops, &[&format!("{} pairs", pairs.len())]), 1e-6);
    let mesh = &ops.mesh;
    let rules = ops_rules(ops);
    let k = ops.kernel;
    let mut worst: f64 = 0.0;
    for (n, (u, phi)) in pairs.iter().enumerate() {
        let form = ops.energy(u.values(), phi.values());
        let mut err = None;
        let interior = integrate_elements(mesh, &rules, Region::Omega, |x| match pv_fractional_laplacian(&k, u, x, &rules) {
            Ok(v) => phi.eval(x) * v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        });
        let exterior = integrate_elements(mesh, &rules, Region::Sigma2, |x| match neumann_derivative(&k, u, x) {
            Ok(v) => phi.eval(x) * v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let rel = rel_diff(form, interior + exterior);
        c.set(&format!("form[{n}]"), form);
        c.set(&format!("pointwise[{n}]"), interior + exterior);
        worst = worst.max(rel);
    }
    c.set("max_rel_error", worst);
    c.pass = worst < 1e-6;
    Ok(c)
}

/// `K_s` with `(-Δ)^s [K_s (1 - x²)_+^s] = 1`, from the pointwise evaluator.
pub fn torsion_constant(s: f64, quad: QuadSpec) -> Result<f64> {
    let k = crate::kernel::KernelParams::new(s)?;
    Ok(1.0 / pv_fractional_laplacian(&k, &torsion_profile(s), 0.0, &Rules::new(quad))?)
}

/// Relative `L²(Ω)` error of the Dirichlet solve for `f ≡ 1` on `Ω = (-1, 1)`
/// against `K_s (1 - x²)^s`.
pub fn torsion_error(ops: &OperatorSet, k_s: f64) -> Result<f64> {
    let p = &ops.mesh.partition;
    if p.omega.len() != 1 || p.omega[0] != (Interval { lo: -1.0, hi: 1.0 }) {
        return Err(Error::Config("torsion oracle needs Ω = (-1, 1)".into()));
    }
    let s = ops.kernel.s;
    let u = ModeOps::new(ops, Mode::Dirichlet)?.solve(&unit_load(ops))?;
    let rules = ops_rules(ops);
    let exact = |x: f64| k_s * (1.0 - x * x).max(0.0).powf(s);
    let e2 = integrate_omega(&ops.mesh, &rules, |x| (u.eval(x) - exact(x)).powi(2));
    let n2 = integrate_omega(&ops.mesh, &rules, |x| exact(x).powi(2));
    Ok((e2 / n2).sqrt())
}

/// Torsion oracle over a sweep: errors strictly decreasing and the finest below `tol`.
pub fn certify_torsion_oracle(sweep: &[&OperatorSet], tol: f64) -> Result<Certificate> {
    let first = sweep.first().ok_or_else(|| Error::Config("empty mesh sweep".into()))?;
    let hashes: Vec<&str> = sweep.iter().map(|o| o.mesh_hash.as_str()).collect();
    let mut c = Certificate::new("torsion_oracle", digest(&hashes), tol);
    let k_s = torsion_constant(first.kernel.s, first.quad)?;
    c.set("K_s", k_s);
    let mut errs = Vec::new();
    for o in sweep {
        let e = torsion_error(o, k_s)?;
        c.set(&format!("rel_l2_error[n={}]", o.mesh.elements.iter().filter(|e| e.in_omega()).count()), e);
        errs.push(e);
    }
    c.pass = errs.windows(2).all(|w| w[1] < w[0]) && *errs.last().unwrap() < tol;
    Ok(c)
}

/// Mesh node closest to `x`.
pub fn nearest_node(mesh: &Mesh, x: f64) -> usize {
    (0..mesh.n_nodes()).min_by(|&a, &b| (mesh.nodes[a] - x).abs().total_cmp(&(mesh.nodes[b] - x).abs())).unwrap_or(0)
}

/// Walker settings shared by the walker certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkSpec {
    pub window: Interval,
    pub n_bins: usize,
    pub n_walkers: usize,
    pub seed: u64,
}

/// Payoff configurations used by [`certify_walker`].
pub fn walker_payoffs(w: &WalkSpec) -> Result<Vec<(String, Payoff)>> {
    let smooth = |x: f64| 1.0 / (1.0 + x * x);
    let ramp = |x: f64| (x.abs() / w.window.hi.abs().max(w.window.lo.abs())).min(1.0);
    Ok(vec![
        ("step".into(), Payoff { window: None, bins: Vec::new(), far_left: Some(0.2), far_right: Some(1.0) }),
        ("smooth".into(), Payoff::from_fn(w.window, w.n_bins, smooth, Some(smooth(w.window.lo)), Some(smooth(w.window.hi)))?),
        ("ramp".into(), Payoff::from_fn(w.window, w.n_bins, ramp, Some(1.0), Some(1.0))?),
    ])
}

/// Dense chain solve against Monte Carlo within 3σ for each payoff, the
/// constant payoff exactly, and the Galerkin solution as a reported gap.
pub fn certify_walker(ops: &OperatorSet, payoffs: &[(String, Payoff)], w: &WalkSpec) -> Result<Certificate> {
    let names: Vec<&str> = payoffs.iter().map(|p| p.0.as_str()).collect();
    let mut c = Certificate::new("walker_duality", ops_digest(ops, &[&names.join(","), &format!("{w:?}")]), 3.0);
    let mesh = &ops.mesh;
    let chain = build_chain(mesh.clone(), &ops.kernel, Some(w.window), w.n_bins)?;
    let p = &mesh.partition;
    let start = nearest_node(mesh, 0.5 * (p.omega[0].lo + p.omega[0].hi));
    let st = chain.state_of(start).ok_or_else(|| Error::Domain("walker start node is not transient".into()))?;
    c.set("x0", mesh.nodes[start]);
    let mut pass = true;
    let unit = chain.payoff_vector(&Payoff::constant(1.0))?;
    let est = estimate_payoff(&chain, start, &unit, w.n_walkers, w.seed)?;
    let dual = chain.solve_duality(&unit)?;
    let unit_err = (est.mean - 1.0).abs().max((dual[st] - 1.0).abs());
    c.set("unit_payoff_error", unit_err);
    c.set("unit_payoff_std_err", est.std_err);
    pass &= unit_err < 1e-12 && est.std_err == 0.0;
    let zero = LoadVector { values: DVector::zeros(mesh.n_nodes()), source: "0".into() };
    for (name, h) in payoffs {
        let pv = chain.payoff_vector(h)?;
        let dual = chain.solve_duality(&pv)?[st];
        let est = estimate_payoff(&chain, start, &pv, w.n_walkers, w.seed)?;
        let z = (est.mean - dual).abs() / est.std_err.max(f64::MIN_POSITIVE);
        let galerkin = solve_with_payoff(ops, &zero, h)?.values()[start];
        c.set(&format!("duality[{name}]"), dual);
        c.set(&format!("monte_carlo[{name}]"), est.mean);
        c.set(&format!("std_err[{name}]"), est.std_err);
        c.set(&format!("z_score[{name}]"), z);
        c.set(&format!("galerkin_gap[{name}]"), (galerkin - dual).abs());
        pass &= z <= 3.0;
    }
    c.note("galerkin_gap compares two discretizations and is reported only");
    c.pass = pass;
    Ok(c)
}

/// Symmetric configuration with payoff 0 on the left tail and 1 on the right:
/// the expected payoff at the centre is 1/2.
pub fn certify_walker_symmetric(s: f64, n_omega: usize, grading: Grading, w: &WalkSpec) -> Result<Certificate> {
    let p = DomainPartition::symmetric(s);
    let mesh = std::sync::Arc::new(crate::domain::build_mesh(&p, n_omega, n_omega / 2, grading)?);
    let mut c = Certificate::new("walker_symmetric", digest(&[&mesh.hash(), &format!("{w:?}")]), 3.0);
    let k = crate::kernel::KernelParams::new(s)?;
    let chain = build_chain(mesh.clone(), &k, None, 0)?;
    let h = Payoff { window: None, bins: Vec::new(), far_left: Some(0.0), far_right: Some(1.0) };
    let pv = chain.payoff_vector(&h)?;
    let start = nearest_node(&mesh, 0.0);
    if mesh.nodes[start] != 0.0 {
        return Err(Error::Config("symmetric walker check needs a mesh node at the centre".into()));
    }
    let st = chain.state_of(start).ok_or_else(|| Error::Domain("centre node is not transient".into()))?;
    let est = estimate_payoff(&chain, start, &pv, w.n_walkers, w.seed)?;
    let dual = chain.solve_duality(&pv)?[st];
    let z = (est.mean - 0.5).abs() / est.std_err;
    c.set("monte_carlo", est.mean);
    c.set("std_err", est.std_err);
    c.set("z_score", z);
    c.set("duality_error", (dual - 0.5).abs());
    c.pass = z <= 3.0 && (dual - 0.5).abs() < 1e-10;
    Ok(c)
}

/// Refinement stability of a measured constant across a mesh sweep: the two
/// finest values differ by less than `tol` relative.
pub fn certify_stability(name: &str, values: &[f64], tol: f64) -> Certificate {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let mut c = Certificate::new(&format!("{name}_stability"), digest(&refs), tol);
    for (k, v) in values.iter().enumerate() {
        c.set(&format!("value[{k}]"), *v);
    }
    let n = values.len();
    if n < 2 {
        c.note("fewer than two meshes");
        return c;
    }
    let drift = (values[n - 1] - values[n - 2]).abs() / values[n - 1].abs();
    c.set("drift", drift);
    c.pass = values.iter().all(|v| v.is_finite() && *v > 0.0) && drift < tol;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_stiffness;
    use crate::domain::build_mesh;
    use crate::kernel::KernelParams;
    use crate::solve::solve_xi0;
    use std::sync::Arc;

    fn ops(p: DomainPartition, n: usize) -> OperatorSet {
        let s = p.s;
        let mesh = Arc::new(build_mesh(&p, n, n / 2, Grading::default()).unwrap());
        assemble_stiffness(mesh, KernelParams::new(s).unwrap(), QuadSpec::default()).unwrap()
    }

    #[test]
    fn families_are_nonnegative_and_supported_in_omega() {
        let p = DomainPartition::new(
            vec![Interval { lo: -1.0, hi: 0.0 }, Interval { lo: 0.5, hi: 1.0 }],
            vec![Interval { lo: f64::NEG_INFINITY, hi: -1.0 }, Interval { lo: 2.0, hi: f64::INFINITY }],
            vec![Interval { lo: 0.0, hi: 0.5 }, Interval { lo: 1.0, hi: 2.0 }],
            0.5,
        );
        let fam = FunctionFamily::generate(FamilyKind::RandomBumps, 20, 3, &p.omega).unwrap();
        for m in &fam.members {
            assert!(!m.bumps.is_empty());
            for b in &m.bumps {
                assert!(p.omega.iter().any(|iv| b.center - b.radius >= iv.lo && b.center + b.radius <= iv.hi));
            }
            assert_eq!(m.eval(0.25), 0.0);
            assert_eq!(m.eval(1.5), 0.0);
        }
        assert_eq!(fam, FunctionFamily::generate(FamilyKind::RandomBumps, 20, 3, &p.omega).unwrap());
    }

    #[test]
    fn unit_source_hopf_identity() {
        let o = ops(DomainPartition::standard(0.5), 16);
        let xi = solve_xi0(&o).unwrap();
        let fam = FunctionFamily::generate(FamilyKind::RandomBumps, 3, 1, &o.mesh.partition.omega).unwrap();
        let c = certify_elliptic_hopf(&o, &xi, &fam).unwrap();
        assert!(c.pass, "{c:?}");
        assert!(c.get("unit_identity_error") < 1e-12);
    }

    #[test]
    fn eigen_ratio_is_even_on_symmetric_configuration() {
        let o = ops(DomainPartition::symmetric(0.5), 16);
        let xi = solve_xi0(&o).unwrap();
        let e = solve_eigen(Mode::Mixed, &o, MassKind::Consistent, 1e-12).unwrap();
        let nodes = &o.mesh.nodes;
        for i in o.mesh.omega_interior_nodes() {
            let j = nodes.iter().position(|&y| (y + nodes[i]).abs() < 1e-12).unwrap();
            let ri = e.chi.values()[i] / xi.values()[i];
            let rj = e.chi.values()[j] / xi.values()[j];
            assert!((ri - rj).abs() < 1e-8);
        }
        let c = certify_eigen_comparison(&o, &xi, &e).unwrap();
        assert!(c.pass && c.get("product") >= 1.0);
    }

    #[test]
    fn walker_certificates_small_mesh() {
        let o = ops(DomainPartition::standard(0.5), 16);
        let w = WalkSpec { window: Interval { lo: -4.0, hi: 4.0 }, n_bins: 8, n_walkers: 4000, seed: 11 };
        let c = certify_walker(&o, &walker_payoffs(&w).unwrap(), &w).unwrap();
        assert!(c.pass, "{c:?}");
        assert!(c.get("unit_payoff_error") < 1e-12);
        let c = certify_walker_symmetric(0.5, 16, Grading::default(), &w).unwrap();
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn stability_drift() {
        assert!(certify_stability("x", &[1.0, 1.1, 1.12], 0.05).pass);
        assert!(!certify_stability("x", &[1.0, 1.1, 1.5], 0.05).pass);
    }

    #[test]
    fn sobolev_exponent_admissibility() {
        assert_eq!(sobolev_exponent(0.4, 1.0, 4.0).unwrap(), 2.8);
        assert_eq!(sobolev_exponent(0.4, 0.0, 4.0).unwrap(), 2.0);
        assert!(sobolev_exponent(0.25, 5.0, 4.0).is_err());
        assert!(sobolev_exponent(0.75, 5.0, 4.0).is_err());
    }

    #[test]
    fn slope_fit_of_a_line() {
        assert!((fit_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-14);
    }
}
