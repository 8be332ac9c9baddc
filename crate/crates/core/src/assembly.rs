//! Galerkin matrices for the form over `Q = ℝ² ∖ (ℝ∖Ω)²`, mass matrices,
//! load vectors and the Dirichlet lift.
//!
//! Matrices are dense and indexed by *all* mesh nodes, eliminated ones
//! included; each solve mode restricts them to its active DoFs. The Σ₁ part of
//! the form never needs DoFs: with `u = 0` there it reduces to the reaction
//! term `a ∫_Ω u v κ` with `κ(x) = ∫_{Σ₁} |x - y|^{-1-2s} dy` in closed form.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{DofClass, Element, Interval, Mesh, Mode};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::KernelParams;
use crate::quadrature::{GaussRule, QuadSpec, Rules};

/// Power-weighted rules that depend on `s`, built once per assembly.
struct SingularRules {
    /// weight `t^{2-2s}` (radial variable of the Duffy maps)
    radial: GaussRule,
    /// weight `t^{1-2s}` (angular variable of the identical-element map, and
    /// the reaction term next to a Σ₁ endpoint)
    angular: GaussRule,
}

impl SingularRules {
    fn new(s: f64, spec: &QuadSpec) -> Result<Self> {
        let n = spec.singular_order;
        Ok(Self {
            radial: GaussRule::power(n, 2.0 - 2.0 * s)?,
            angular: GaussRule::power(n, 1.0 - 2.0 * s)?,
        })
    }
}

/// Local contribution of one element pair, over up to four distinct nodes.
#[derive(Debug, Clone, Copy)]
struct Local {
    nodes: [usize; 4],
    len: usize,
    m: [[f64; 4]; 4],
}

impl Local {
    fn new(nodes: &[usize]) -> Self {
        let mut n = [0; 4];
        n[..nodes.len()].copy_from_slice(nodes);
        Self { nodes: n, len: nodes.len(), m: [[0.0; 4]; 4] }
    }

    #[inline]
    fn add(&mut self, d: &[f64; 4], w: f64) {
        for i in 0..self.len {
            let wi = w * d[i];
            for j in 0..self.len {
                self.m[i][j] += wi * d[j];
            }
        }
    }

    fn scatter(&self, into: &mut DMatrix<f64>, scale: f64) {
        for i in 0..self.len {
            for j in 0..self.len {
                into[(self.nodes[i], self.nodes[j])] += scale * self.m[i][j];
            }
        }
    }
}

/// Nodal weight `w` interpolated on element `el`, or 1 without weight.
#[inline]
fn weight_at(w: Option<&[f64]>, el: &Element, x: f64) -> f64 {
    match w {
        None => 1.0,
        Some(v) => {
            let [l0, l1] = el.shape(x);
            l0 * v[el.left] + l1 * v[el.right]
        }
    }
}

/// `∬_{E×E} W (φ_i(x)-φ_i(y))(φ_j(x)-φ_j(y)) |x-y|^{-1-2s}`.
fn identical_pair(el: &Element, s: f64, sr: &SingularRules, w: Option<&[f64]>) -> Local {
    let mut loc = Local::new(&[el.left, el.right]);
    let h = el.len();
    // x = a + h p, y = x - h p v on the half x > y, doubled
    let mut acc = 0.0;
    for (p, wp) in sr.radial.nodes.iter().zip(&sr.radial.weights) {
        let x = el.a + h * p;
        for (v, wv) in sr.angular.nodes.iter().zip(&sr.angular.weights) {
            let y = x - h * p * v;
            acc += wp * wv * weight_at(w, el, x) * weight_at(w, el, y);
        }
    }
    let c = 2.0 * h.powf(1.0 - 2.0 * s) * acc;
    loc.add(&[1.0, -1.0, 0.0, 0.0], c);
    loc
}

/// Same integral over `E × F` with `E` immediately left of `F`.
fn touching_pair(e: &Element, f: &Element, s: f64, rules: &Rules, sr: &SingularRules, w: Option<&[f64]>) -> Local {
    let mut loc = Local::new(&[e.left, e.right, f.right]);
    let (he, hf) = (e.len(), f.len());
    let b = e.b;
    let ex = -1.0 - 2.0 * s;
    // two triangles: ξ = he u, η = hf u v and η = hf u, ξ = he u v
    let v_pieces = |pole: f64| rules.near_pieces(0.0, 1.0, &[pole]);
    for tri in 0..2 {
        let pole = if tri == 0 { -he / hf } else { -hf / he };
        for (v0, v1) in v_pieces(pole) {
            let lv = v1 - v0;
            for (tv, wv) in rules.gl.nodes.iter().zip(&rules.gl.weights) {
                let v = v0 + lv * tv;
                let (d, dist) = if tri == 0 {
                    ([1.0, v - 1.0, -v, 0.0], he + hf * v)
                } else {
                    ([v, 1.0 - v, -1.0, 0.0], he * v + hf)
                };
                let g = he * hf * dist.powf(ex);
                if w.is_none() {
                    // the radial factor integrates to 1/(3-2s) exactly
                    loc.add(&d, lv * wv * g / (3.0 - 2.0 * s));
                    continue;
                }
                for (u, wu) in sr.radial.nodes.iter().zip(&sr.radial.weights) {
                    let (xi, eta) = if tri == 0 { (he * u, hf * u * v) } else { (he * u * v, hf * u) };
                    let ww = weight_at(w, e, b - xi) * weight_at(w, f, b + eta);
                    loc.add(&d, lv * wv * wu * g * ww);
                }
            }
        }
    }
    loc
}

/// Same integral over well-separated `E × F` (no shared node).
fn separated_pair(e: &Element, f: &Element, s: f64, rules: &Rules, w: Option<&[f64]>) -> Local {
    let mut loc = Local::new(&[e.left, e.right, f.left, f.right]);
    let ex = -1.0 - 2.0 * s;
    let mut stack = vec![(e.a, e.b, f.a, f.b, 0usize)];
    while let Some((a1, b1, a2, b2, depth)) = stack.pop() {
        let (l1, l2) = (b1 - a1, b2 - a2);
        let gap = if b1 <= a2 { a2 - b1 } else { a1 - b2 };
        let big = l1.max(l2);
        if gap < rules.spec.near_ratio * big && depth < rules.spec.max_depth {
            if l1 >= l2 {
                let m = 0.5 * (a1 + b1);
                stack.push((a1, m, a2, b2, depth + 1));
                stack.push((m, b1, a2, b2, depth + 1));
            } else {
                let m = 0.5 * (a2 + b2);
                stack.push((a1, b1, a2, m, depth + 1));
                stack.push((a1, b1, m, b2, depth + 1));
            }
            continue;
        }
        let rule = rules.for_separation(gap / big);
        for (tx, wx) in rule.nodes.iter().zip(&rule.weights) {
            let x = a1 + l1 * tx;
            let [p0, p1] = e.shape(x);
            let wxw = weight_at(w, e, x);
            for (ty, wy) in rule.nodes.iter().zip(&rule.weights) {
                let y = a2 + l2 * ty;
                let [q0, q1] = f.shape(y);
                let k = (x - y).abs().powf(ex);
                loc.add(&[p0, p1, -q0, -q1], wx * wy * l1 * l2 * k * wxw * weight_at(w, f, y));
            }
        }
    }
    loc
}

/// `Σ_{E,F ⊂ Ω∪Σ₂, not both in Σ₂} ∬_{E×F} W (φ_i(x)-φ_i(y))(φ_j(x)-φ_j(y)) |x-y|^{-1-2s}`
/// over ordered pairs, as a full-node matrix.
fn pair_form(mesh: &Mesh, rules: &Rules, sr: &SingularRules, w: Option<&[f64]>) -> DMatrix<f64> {
    let s = mesh.s();
    let els = &mesh.elements;
    let pairs: Vec<(usize, usize)> = (0..els.len())
        .flat_map(|i| (i..els.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| els[i].in_omega() || els[j].in_omega())
        .collect();
    let locals: Vec<(Local, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (e, f) = (&els[i], &els[j]);
            if i == j {
                (identical_pair(e, s, sr, w), 1.0)
            } else if e.right == f.left {
                (touching_pair(e, f, s, rules, sr, w), 2.0)
            } else {
                (separated_pair(e, f, s, rules, w), 2.0)
            }
        })
        .collect();
    let n = mesh.n_nodes();
    let mut out = DMatrix::zeros(n, n);
    for (loc, scale) in &locals {
        loc.scatter(&mut out, *scale);
    }
    out
}

/// Piecewise-constant data on Σ₁: `(segment, value)` pairs covering Σ₁.
pub type Sigma1Segments = Vec<(Interval, f64)>;

/// Quadrature points on `el` for `∫_E g(x) Σ_c coeff_c |x - c|^{-2s} dx`.
///
/// Each point is `(x, w, pole)`. With `pole = None` the weight already holds
/// the power factor. Next to a pole `c` at an element end the rule carries
/// only `|x - c|^{1-2s}`, so the caller divides `g` by `|x - c|`; this is exact
/// for every `g = φ_i φ_j` that vanishes at `c`.
fn power_points(el: &Element, terms: &[(f64, f64)], s: f64, rules: &Rules, sr: &SingularRules) -> Vec<(f64, f64, Option<f64>)> {
    let mut pts = Vec::new();
    let h = el.len();
    for &(c, coeff) in terms {
        if c == el.a || c == el.b {
            let dir = if c == el.a { 1.0 } else { -1.0 };
            let scale = coeff * h.powf(2.0 - 2.0 * s);
            for (t, wt) in sr.angular.nodes.iter().zip(&sr.angular.weights) {
                pts.push((c + dir * h * t, scale * wt, Some(c)));
            }
        } else {
            for (p, q) in rules.near_pieces(el.a, el.b, &[c]) {
                for (t, wt) in rules.gl.nodes.iter().zip(&rules.gl.weights) {
                    let x = p + (q - p) * t;
                    pts.push((x, coeff * wt * (q - p) * (x - c).abs().powf(-2.0 * s), None));
                }
            }
        }
    }
    pts
}

/// Endpoint expansion of `∫_seg v |x - y|^{-1-2s} dy` for `x` on `el`:
/// `(1/2s) Σ ± v |x - c|^{-2s}` over the finite ends `c`.
fn segment_terms(el: &Element, segs: &[(Interval, f64)], s: f64) -> Vec<(f64, f64)> {
    let k = 1.0 / (2.0 * s);
    let mut terms = Vec::new();
    for &(iv, v) in segs {
        if v == 0.0 {
            continue;
        }
        let (near, far) = if el.b <= iv.lo { (iv.lo, iv.hi) } else { (iv.hi, iv.lo) };
        if near.is_finite() {
            terms.push((near, k * v));
        }
        if far.is_finite() {
            terms.push((far, -k * v));
        }
    }
    terms
}

/// `∫_Ω φ_i φ_j κ` with `κ(x) = ∫_{Σ₁} |x-y|^{-1-2s} dy`, and
/// `∫_Ω φ_i g` with `g(x) = ∫_{Σ₁} h(y) |x-y|^{-1-2s} dy` on the same points.
///
/// For a node sitting on ∂Σ₁ the entries `∫ φ_c² κ` and `∫ φ_c g` diverge when
/// `s ≥ 1/2`; they are left out then (no solve reads them) and added in
/// closed form otherwise.
fn sigma1_moments(mesh: &Mesh, segs: &[(Interval, f64)], rules: &Rules, sr: &SingularRules) -> (DMatrix<f64>, DVector<f64>) {
    let n = mesh.n_nodes();
    let s = mesh.s();
    let mut mat = DMatrix::zeros(n, n);
    let mut vec = DVector::zeros(n);
    for el in mesh.elements.iter().filter(|e| e.in_omega()) {
        let terms = segment_terms(el, segs, s);
        let (i, j) = (el.left, el.right);
        for (x, w, pole) in power_points(el, &terms, s, rules, sr) {
            let [l0, l1] = el.shape(x);
            match pole {
                None => {
                    mat[(i, i)] += w * l0 * l0;
                    mat[(i, j)] += w * l0 * l1;
                    mat[(j, i)] += w * l0 * l1;
                    mat[(j, j)] += w * l1 * l1;
                    vec[i] += w * l0;
                    vec[j] += w * l1;
                }
                Some(c) => {
                    let t = (x - c).abs();
                    // the far node's hat vanishes at c
                    let (near, far, ln, lf) = if c == el.a { (i, j, l0, l1) } else { (j, i, l1, l0) };
                    let wf = w * lf / t;
                    mat[(far, far)] += wf * lf;
                    mat[(near, far)] += wf * ln;
                    mat[(far, near)] += wf * ln;
                    vec[far] += wf;
                }
            }
        }
        if s < 0.5 {
            let h = el.len();
            let b1 = 1.0 / ((1.0 - 2.0 * s) * (2.0 - 2.0 * s));
            let b2 = 2.0 * b1 / (3.0 - 2.0 * s);
            for &(c, coeff) in &terms {
                let near = if c == el.a { i } else if c == el.b { j } else { continue };
                let hp = coeff * h.powf(1.0 - 2.0 * s);
                mat[(near, near)] += hp * b2;
                vec[near] += hp * b1;
            }
        }
    }
    (mat, vec)
}

/// Assembled operators of one discretization.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub mesh: Arc<Mesh>,
    pub kernel: KernelParams,
    pub quad: QuadSpec,
    /// Stiffness over all mesh nodes, `a_{N,s}` included.
    pub a_full: DMatrix<f64>,
    /// Consistent `∫_Ω φ_i φ_j`.
    pub m_omega: DMatrix<f64>,
    /// Row-sum lumped version of `m_omega`.
    pub m_omega_lumped: DVector<f64>,
    /// Consistent `∫_{Ω∪Σ₂} φ_i φ_j`.
    pub m_full: DMatrix<f64>,
    pub mesh_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MassRegion {
    Omega,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MassKind {
    Consistent,
    Lumped,
}

pub fn assemble_mass(mesh: &Mesh, region: MassRegion) -> DMatrix<f64> {
    let n = mesh.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for el in &mesh.elements {
        if region == MassRegion::Omega && !el.in_omega() {
            continue;
        }
        let h = el.len();
        let (i, j) = (el.left, el.right);
        m[(i, i)] += h / 3.0;
        m[(j, j)] += h / 3.0;
        m[(i, j)] += h / 6.0;
        m[(j, i)] += h / 6.0;
    }
    m
}

fn check_kernel(mesh: &Mesh, k: &KernelParams) -> Result<()> {
    if k.dim != mesh.partition.dim || k.s != mesh.s() {
        return Err(Error::Consistency(format!(
            "kernel (s = {}, N = {}) does not match mesh (s = {}, N = {})",
            k.s,
            k.dim,
            mesh.s(),
            mesh.partition.dim
        )));
    }
    Ok(())
}

/// Stiffness and mass matrices for `mesh`.
pub fn assemble_stiffness(mesh: Arc<Mesh>, k: KernelParams, quad: QuadSpec) -> Result<OperatorSet> {
    check_kernel(&mesh, &k)?;
    let rules = Rules::new(quad);
    let sr = SingularRules::new(k.s, &quad)?;
    let pair = pair_form(&mesh, &rules, &sr, None);
    let unit: Sigma1Segments = mesh.partition.sigma1.iter().map(|&iv| (iv, 1.0)).collect();
    let (kill, _) = sigma1_moments(&mesh, &unit, &rules, &sr);
    let a_full = (pair * (0.5 * k.a_ns) + kill * k.a_ns).symmetrize();
    if a_full.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("non-finite stiffness entry".into()));
    }
    let m_omega = assemble_mass(&mesh, MassRegion::Omega);
    let m_omega_lumped = DVector::from_iterator(mesh.n_nodes(), m_omega.row_iter().map(|r| r.sum()));
    let m_full = assemble_mass(&mesh, MassRegion::Full);
    let mesh_hash = mesh.hash();
    Ok(OperatorSet { mesh, kernel: k, quad, a_full, m_omega, m_omega_lumped, m_full, mesh_hash })
}

trait Symmetrize {
    fn symmetrize(self) -> Self;
}

impl Symmetrize for DMatrix<f64> {
    fn symmetrize(self) -> Self {
        let t = self.transpose();
        (self + t) * 0.5
    }
}

/// `∬_Q w(x) w(y) (φ_i(x)-φ_i(y))(φ_j(x)-φ_j(y)) |x-y|^{-1-2s}` for a field
/// `w` vanishing on Σ₁ (so the Σ₁ part drops out). No `a_{N,s}` factor.
pub fn assemble_weighted_form(w: &Field, quad: QuadSpec) -> Result<DMatrix<f64>> {
    let mesh = w.mesh();
    if w.exterior() != 0.0 {
        return Err(Error::Domain("weight must vanish outside the mesh".into()));
    }
    let rules = Rules::new(quad);
    let sr = SingularRules::new(mesh.s(), &quad)?;
    Ok(pair_form(mesh, &rules, &sr, Some(w.values())).symmetrize())
}

impl OperatorSet {
    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Consistent or lumped Ω-mass as a full-node matrix.
    pub fn mass(&self, kind: MassKind) -> DMatrix<f64> {
        match kind {
            MassKind::Consistent => self.m_omega.clone(),
            MassKind::Lumped => DMatrix::from_diagonal(&self.m_omega_lumped),
        }
    }

    /// `uᵀ A v` for full-node vectors.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        let v = DVector::from_column_slice(v);
        u.dot(&(&self.a_full * v))
    }

    /// Row-major CSV of `A` with a header carrying the mesh hash.
    pub fn write_stiffness_csv(&self, w: impl Write) -> Result<()> {
        write_matrix_csv(&self.a_full, &self.mesh_hash, w)
    }
}

pub fn write_matrix_csv(m: &DMatrix<f64>, hash: &str, mut w: impl Write) -> Result<()> {
    writeln!(w, "# mesh_hash={hash} rows={} cols={}", m.nrows(), m.ncols())?;
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.row_iter() {
        wr.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Largest positive off-diagonal entry of `a` restricted to `idx`
/// (`≤ 0` means the restriction has the sign pattern of an M-matrix).
pub fn max_offdiagonal(a: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            if p != q {
                worst = worst.max(a[(i, j)]);
            }
        }
    }
    worst
}

/// `F_i = ∫_Ω f φ_i` over all mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    pub values: DVector<f64>,
    pub source: String,
}

impl LoadVector {
    pub fn active(&self, mode: Mode, mesh: &Mesh) -> DVector<f64> {
        let d = mesh.dofs(mode);
        DVector::from_iterator(d.len(), d.nodes.iter().map(|&i| self.values[i]))
    }

    /// `∫_Ω f u` for a field on the same mesh.
    pub fn pair(&self, u: &Field) -> f64 {
        self.values.iter().zip(u.values()).map(|(a, b)| a * b).sum()
    }
}

pub fn assemble_load(mesh: &Mesh, f: &dyn Fn(f64) -> f64, quad: &QuadSpec, source: &str) -> LoadVector {
    let rule = GaussRule::legendre(quad.order);
    let mut v = DVector::zeros(mesh.n_nodes());
    for el in mesh.elements.iter().filter(|e| e.in_omega()) {
        let h = el.len();
        for (t, w) in rule.nodes.iter().zip(&rule.weights) {
            let x = el.a + h * t;
            let fx = w * h * f(x);
            v[el.left] += fx * (1.0 - t);
            v[el.right] += fx * t;
        }
    }
    LoadVector { values: v, source: source.to_string() }
}

/// Dirichlet datum on Σ₁: constant on uniform bins of a bounded window, plus
/// constant far-field values beyond it. Without a window, points left of the
/// origin take `far_left`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Payoff {
    pub window: Option<Interval>,
    pub bins: Vec<f64>,
    pub far_left: Option<f64>,
    pub far_right: Option<f64>,
}

impl Payoff {
    pub fn constant(c: f64) -> Self {
        Self { window: None, bins: Vec::new(), far_left: Some(c), far_right: Some(c) }
    }

    /// Samples `f` at bin midpoints of `window`.
    pub fn from_fn(window: Interval, n_bins: usize, f: impl Fn(f64) -> f64, far_left: Option<f64>, far_right: Option<f64>) -> Result<Self> {
        if n_bins == 0 || !window.is_bounded() {
            return Err(Error::Config("payoff window must be bounded with at least one bin".into()));
        }
        let h = window.len() / n_bins as f64;
        let bins = (0..n_bins).map(|k| f(window.lo + (k as f64 + 0.5) * h)).collect();
        Ok(Self { window: Some(window), bins, far_left, far_right })
    }

    fn far(&self, x: f64) -> Result<f64> {
        let (v, side) = match self.window {
            Some(w) if x >= w.hi => (self.far_right, "right"),
            Some(_) => (self.far_left, "left"),
            None if x > 0.0 => (self.far_right, "right"),
            None => (self.far_left, "left"),
        };
        v.ok_or_else(|| Error::Config(format!("payoff needs a {side} far-field value (Σ₁ extends to {x})")))
    }

    /// Pieces of Σ₁ on which the payoff is constant, in increasing order.
    pub fn segments(&self, sigma1: &[Interval]) -> Result<Sigma1Segments> {
        let mut out = Vec::new();
        for &c in sigma1 {
            let mut cuts = vec![c.lo, c.hi];
            if let Some(w) = self.window {
                let h = w.len() / self.bins.len() as f64;
                cuts.extend((0..=self.bins.len()).map(|k| if k == self.bins.len() { w.hi } else { w.lo + k as f64 * h }));
            }
            cuts.retain(|&t| t >= c.lo && t <= c.hi);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for p in cuts.windows(2) {
                let iv = Interval { lo: p[0], hi: p[1] };
                let mid = if iv.lo.is_infinite() {
                    iv.hi - 1.0
                } else if iv.hi.is_infinite() {
                    iv.lo + 1.0
                } else {
                    0.5 * (iv.lo + iv.hi)
                };
                out.push((iv, self.value(mid)?));
            }
        }
        Ok(out)
    }

    /// Value at a point of Σ₁ (bins are closed on the left).
    pub fn value(&self, x: f64) -> Result<f64> {
        match self.window {
            Some(w) if x >= w.lo && x < w.hi => {
                let k = ((x - w.lo) / w.len() * self.bins.len() as f64) as usize;
                Ok(self.bins[k.min(self.bins.len() - 1)])
            }
            _ => self.far(x),
        }
    }

    /// Value on the Σ₁ segment touching the boundary point `x`.
    pub fn boundary_value(&self, x: f64, sigma1: &[Interval]) -> Result<f64> {
        let segs = self.segments(sigma1)?;
        segs.iter()
            .find(|(iv, _)| iv.lo == x || iv.hi == x)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Domain(format!("x = {x} is not an endpoint of Σ₁")))
    }
}

/// Load correction and boundary field for the mixed problem with Dirichlet
/// datum `h` on Σ₁.
///
/// Returns `F + a ∫_Ω φ_i g - Σ_e A_{ie} h(x_e)` (with `g = ∫_{Σ₁} h k`) and the
/// field carrying `h(x_e)` at eliminated nodes; the mixed solution of the
/// corrected load plus that field solves the inhomogeneous problem.
pub fn dirichlet_lift(ops: &OperatorSet, load: &LoadVector, h: &Payoff) -> Result<(LoadVector, Field)> {
    let mesh = &ops.mesh;
    let segs = h.segments(&mesh.partition.sigma1)?;
    let rules = Rules::new(ops.quad);
    let sr = SingularRules::new(mesh.s(), &ops.quad)?;
    let (_, g) = sigma1_moments(mesh, &segs, &rules, &sr);
    let mut bvals = vec![0.0; mesh.n_nodes()];
    for (i, c) in mesh.classes.iter().enumerate() {
        if *c == DofClass::Eliminated {
            bvals[i] = h.boundary_value(mesh.nodes[i], &mesh.partition.sigma1)?;
        }
    }
    let hb = DVector::from_column_slice(&bvals);
    let values = &load.values + g * ops.kernel.a_ns - &ops.a_full * hb;
    let exterior = match (h.window, h.far_left, h.far_right) {
        (None, Some(l), Some(r)) if l == r => l,
        _ => 0.0,
    };
    let boundary = Field::from_nodal(mesh.clone(), bvals, exterior);
    Ok((LoadVector { values, source: format!("{} + lift", load.source) }, boundary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, DomainPartition, Grading};
    use approx::assert_relative_eq;

    fn ops(s: f64, n: usize, m: usize) -> OperatorSet {
        let p = DomainPartition::standard(s);
        let mesh = Arc::new(build_mesh(&p, n, m, Grading::Uniform).unwrap());
        assemble_stiffness(mesh, KernelParams::new(s).unwrap(), QuadSpec::default()).unwrap()
    }

    #[test]
    fn stiffness_is_symmetric_and_annihilates_constants_up_to_reaction() {
        let o = ops(0.5, 8, 4);
        let a = &o.a_full;
        let asym = (a - a.transpose()).amax() / a.amax();
        assert!(asym < 1e-12);
        // A·1 is the reaction term a∫φ_i κ, which vanishes on Σ₂ nodes
        let one = DVector::from_element(o.n_nodes(), 1.0);
        let r = a * one;
        for (i, el) in o.mesh.classes.iter().enumerate() {
            if *el == DofClass::NeumannExt {
                assert!(r[i].abs() < 1e-12 * a.amax(), "row {i}: {}", r[i]);
            } else {
                assert!(r[i] > 0.0);
            }
        }
    }

    #[test]
    fn disjoint_supports_give_nonpositive_entries() {
        let o = ops(0.3, 8, 4);
        let n = o.n_nodes();
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) >= 2 {
                    assert!(o.a_full[(i, j)] <= 0.0, "A[{i},{j}] = {}", o.a_full[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn mass_examples() {
        let p = DomainPartition::standard(0.5);
        let mesh = build_mesh(&p, 4, 2, Grading::Uniform).unwrap();
        let m = assemble_mass(&mesh, MassRegion::Omega);
        assert_relative_eq!(m.sum(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(m[(2, 2)], 2.0 * 0.5 / 3.0, max_relative = 1e-14);
        // Σ₂-only node rows vanish
        assert_eq!(m.row(5).amax(), 0.0);
        let full = assemble_mass(&mesh, MassRegion::Full);
        assert!(full.clone().cholesky().is_some());
        assert_relative_eq!(full.sum(), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn load_examples() {
        let p = DomainPartition::standard(0.5);
        let mesh = build_mesh(&p, 4, 2, Grading::Uniform).unwrap();
        let q = QuadSpec::default();
        let one = assemble_load(&mesh, &|_| 1.0, &q, "one");
        assert_relative_eq!(one.values.sum(), 2.0, max_relative = 1e-14);
        let zero = assemble_load(&mesh, &|_| 0.0, &q, "zero");
        assert_eq!(zero.values.amax(), 0.0);
        let bump = assemble_load(&mesh, &|x: f64| if x > 0.1 && x < 0.4 { 1.0 } else { 0.0 }, &q, "bump");
        for (i, v) in bump.values.iter().enumerate() {
            assert_eq!(*v != 0.0, i == 2 || i == 3, "node {i}");
        }
    }

    #[test]
    fn payoff_segments_cover_sigma1() {
        let p = DomainPartition::standard(0.5);
        let h = Payoff::from_fn(Interval { lo: -3.0, hi: 4.0 }, 7, |x| x, Some(-10.0), Some(10.0)).unwrap();
        let segs = h.segments(&p.sigma1).unwrap();
        let total: f64 = segs.iter().filter(|(iv, _)| iv.is_bounded()).map(|(iv, _)| iv.len()).sum();
        assert_relative_eq!(total, 2.0 + 2.0, max_relative = 1e-14);
        assert_eq!(segs.first().unwrap().1, -10.0);
        assert_eq!(segs.last().unwrap().1, 10.0);
        assert_eq!(h.boundary_value(-1.0, &p.sigma1).unwrap(), -1.5);
        assert!(Payoff { far_left: None, ..h.clone() }.segments(&p.sigma1).is_err());
    }
}
