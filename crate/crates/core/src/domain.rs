//! Geometry of the mixed problem: the open set Ω, the Dirichlet part Σ₁ and
//! the Neumann part Σ₂ of its complement, plus the piecewise-linear mesh over
//! Ω ∪ Σ₂ with its degree-of-freedom classification.
//!
//! Only the one-dimensional case is implemented. Σ₂ is required to be
//! bounded, so every discrete function vanishes identically outside the
//! computational box and no far-field truncation is needed.

use std::cmp::Ordering;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Open interval `(lo, hi)`. Endpoints may be infinite (only meaningful for Σ₁).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Measure(format!("interval ({lo}, {hi}) is empty")));
        }
        Ok(Self { lo, hi })
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Distance from `x` to the closed interval.
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Omega,
    Sigma1,
    Sigma2,
}

/// The configuration (Ω, Σ₁, Σ₂, s).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainPartition {
    pub omega: Vec<Interval>,
    pub sigma1: Vec<Interval>,
    pub sigma2: Vec<Interval>,
    pub s: f64,
    pub dim: usize,
}

impl DomainPartition {
    pub fn new(omega: Vec<Interval>, sigma1: Vec<Interval>, sigma2: Vec<Interval>, s: f64) -> Self {
        Self { omega, sigma1, sigma2, s, dim: 1 }
    }

    /// Ω = (-1, 1), Σ₂ = (1, 2), Σ₁ = (-∞, -1) ∪ (2, ∞).
    pub fn standard(s: f64) -> Self {
        Self::new(
            vec![Interval { lo: -1.0, hi: 1.0 }],
            vec![
                Interval { lo: f64::NEG_INFINITY, hi: -1.0 },
                Interval { lo: 2.0, hi: f64::INFINITY },
            ],
            vec![Interval { lo: 1.0, hi: 2.0 }],
            s,
        )
    }

    /// Ω = (-1, 1) with Neumann strips (-2, -1) and (1, 2) on both sides.
    pub fn symmetric(s: f64) -> Self {
        Self::new(
            vec![Interval { lo: -1.0, hi: 1.0 }],
            vec![
                Interval { lo: f64::NEG_INFINITY, hi: -2.0 },
                Interval { lo: 2.0, hi: f64::INFINITY },
            ],
            vec![Interval { lo: -2.0, hi: -1.0 }, Interval { lo: 1.0, hi: 2.0 }],
            s,
        )
    }

    pub fn measure_omega(&self) -> f64 {
        self.omega.iter().map(Interval::len).sum()
    }

    pub fn measure_sigma2(&self) -> f64 {
        self.sigma2.iter().map(Interval::len).sum()
    }

    pub fn in_omega_closure(&self, x: f64) -> bool {
        self.omega.iter().any(|i| i.contains_closed(x))
    }

    pub fn in_sigma2_closure(&self, x: f64) -> bool {
        self.sigma2.iter().any(|i| i.contains_closed(x))
    }

    /// All intervals tagged by region and sorted by left endpoint.
    pub fn tagged(&self) -> Vec<(Region, Interval)> {
        let mut all: Vec<(Region, Interval)> = self
            .omega
            .iter()
            .map(|&i| (Region::Omega, i))
            .chain(self.sigma1.iter().map(|&i| (Region::Sigma1, i)))
            .chain(self.sigma2.iter().map(|&i| (Region::Sigma2, i)))
            .collect();
        all.sort_by(|a, b| a.1.lo.partial_cmp(&b.1.lo).unwrap_or(Ordering::Equal));
        all
    }
}

/// Check every covering condition on the partition; returns it unchanged on success.
pub fn validate_partition(p: DomainPartition) -> Result<DomainPartition> {
    if !(p.s > 0.0 && p.s < 1.0) {
        return Err(Error::Domain(format!("fractional order s = {} outside (0, 1)", p.s)));
    }
    if p.dim != 1 {
        return Err(Error::Config(format!("dimension {} not supported (only N = 1)", p.dim)));
    }
    if p.omega.is_empty() {
        return Err(Error::Measure("Ω is empty".into()));
    }
    if p.sigma1.is_empty() {
        return Err(Error::Measure("Σ₁ has zero measure".into()));
    }
    if p.sigma2.is_empty() {
        return Err(Error::Measure("Σ₂ has zero measure".into()));
    }
    for (_, i) in p.tagged() {
        if i.lo.is_nan() || i.hi.is_nan() || i.lo >= i.hi {
            return Err(Error::Measure(format!("interval ({}, {}) is empty", i.lo, i.hi)));
        }
    }
    if let Some(i) = p.sigma2.iter().find(|i| !i.is_bounded()) {
        return Err(Error::UnboundedSigma2(format!(
            "Σ₂ component ({}, {}) is unbounded",
            i.lo, i.hi
        )));
    }
    if let Some(i) = p.omega.iter().find(|i| !i.is_bounded()) {
        return Err(Error::Config(format!("Ω component ({}, {}) is unbounded", i.lo, i.hi)));
    }

    let tagged = p.tagged();
    for w in tagged.windows(2) {
        let (ra, a) = w[0];
        let (rb, b) = w[1];
        if b.lo < a.hi {
            return Err(Error::Overlap(format!(
                "{ra:?} ({}, {}) and {rb:?} ({}, {}) intersect",
                a.lo, a.hi, b.lo, b.hi
            )));
        }
        if b.lo > a.hi {
            return Err(Error::Coverage(format!(
                "gap ({}, {}) belongs to no region",
                a.hi, b.lo
            )));
        }
        if ra == Region::Omega && rb == Region::Omega {
            return Err(Error::Coverage(format!(
                "point {} between two Ω components is not covered",
                a.hi
            )));
        }
    }
    let first = tagged.first().map(|t| t.1.lo).unwrap_or(0.0);
    let last = tagged.last().map(|t| t.1.hi).unwrap_or(0.0);
    if first != f64::NEG_INFINITY || last != f64::INFINITY {
        return Err(Error::Coverage(format!(
            "regions cover only ({first}, {last}) instead of the whole line"
        )));
    }
    Ok(p)
}

/// Element-size profile near Ω endpoints adjacent to Σ₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Grading {
    Uniform,
    /// Consecutive widths shrink by `ratio` toward the graded end over `layers`
    /// elements (then stay constant). `None` grades over a quarter of the segment.
    Geometric { ratio: f64, layers: Option<usize> },
}

impl Default for Grading {
    fn default() -> Self {
        Grading::Geometric { ratio: 0.85, layers: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DofClass {
    Interior,
    NeumannExt,
    Eliminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Element {
    pub left: usize,
    pub right: usize,
    pub a: f64,
    pub b: f64,
    pub region: Region,
}

impl Element {
    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn in_omega(&self) -> bool {
        self.region == Region::Omega
    }

    /// Values of the two local hat functions at `x`.
    #[inline]
    pub fn shape(&self, x: f64) -> [f64; 2] {
        let t = (x - self.a) / (self.b - self.a);
        [1.0 - t, t]
    }
}

/// Which boundary conditions the discrete space carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Zero on Σ₁, natural (nonlocal Neumann) on Σ₂.
    Mixed,
    /// Zero on all of ℝ ∖ Ω.
    Dirichlet,
}

/// Active node indices for one mode, split into Ω-coupled and Neumann-exterior parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DofSet {
    pub mode: Mode,
    /// Active mesh node indices, increasing.
    pub nodes: Vec<usize>,
    /// Positions (into `nodes`) whose hat functions touch Ω.
    pub omega_coupled: Vec<usize>,
    /// Positions (into `nodes`) of Neumann-exterior unknowns.
    pub exterior: Vec<usize>,
    /// mesh node → position in `nodes`.
    pub position: Vec<Option<usize>>,
}

impl DofSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    pub nodes: Vec<f64>,
    pub classes: Vec<DofClass>,
    pub elements: Vec<Element>,
    /// Node index → element to its right, if any.
    pub right_element: Vec<Option<usize>>,
    pub grading: Grading,
    pub partition: DomainPartition,
}

/// Split `total` into parts proportional to `lengths`, each at least `min`.
fn allocate(total: usize, lengths: &[f64], min: usize) -> Result<Vec<usize>> {
    let k = lengths.len();
    if total < min * k {
        return Err(Error::Config(format!(
            "{total} elements cannot give {min} to each of {k} components"
        )));
    }
    let sum: f64 = lengths.iter().sum();
    let spare = total - min * k;
    let raw: Vec<f64> = lengths.iter().map(|l| spare as f64 * l / sum).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| min + r.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

/// Relative widths of `n` elements, smallest first (at the graded end).
fn graded_widths(n: usize, grading: Grading) -> Vec<f64> {
    match grading {
        Grading::Uniform => vec![1.0; n],
        Grading::Geometric { ratio, layers } => {
            let m = layers.unwrap_or((n / 4).max(1));
            (0..n).map(|k| ratio.powi(-(k.min(m) as i32))).collect()
        }
    }
}

/// Node coordinates on `[lo, hi]` from relative widths; endpoints are exact.
fn place(lo: f64, hi: f64, widths: &[f64], reverse: bool) -> Vec<f64> {
    let total: f64 = widths.iter().sum();
    let n = widths.len();
    let mut xs = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    xs.push(lo);
    for k in 0..n {
        let w = if reverse { widths[n - 1 - k] } else { widths[k] };
        acc += w;
        xs.push(if k + 1 == n { hi } else { lo + (hi - lo) * acc / total });
    }
    xs
}

fn segment_nodes(iv: Interval, n: usize, grade_lo: bool, grade_hi: bool, grading: Grading) -> Vec<f64> {
    match (grade_lo, grade_hi) {
        (false, false) => place(iv.lo, iv.hi, &vec![1.0; n], false),
        (true, false) => place(iv.lo, iv.hi, &graded_widths(n, grading), false),
        (false, true) => place(iv.lo, iv.hi, &graded_widths(n, grading), true),
        (true, true) => {
            let nl = n / 2;
            let nr = n - nl;
            let mid = 0.5 * (iv.lo + iv.hi);
            let mut left = place(iv.lo, mid, &graded_widths(nl, grading), false);
            let right = place(mid, iv.hi, &graded_widths(nr, grading), true);
            left.pop();
            left.extend(right);
            left
        }
    }
}

/// Mesh Ω ∪ Σ₂ with `n_omega` elements over Ω and `n_sigma2` over Σ₂.
pub fn build_mesh(p: &DomainPartition, n_omega: usize, n_sigma2: usize, grading: Grading) -> Result<Mesh> {
    if n_omega < 4 {
        return Err(Error::Config(format!("n_omega = {n_omega} below minimum 4")));
    }
    if n_sigma2 < 2 {
        return Err(Error::Config(format!("n_sigma2 = {n_sigma2} below minimum 2")));
    }
    if let Grading::Geometric { ratio, .. } = grading {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("grading ratio {ratio} outside (0, 1]")));
        }
    }
    let p = validate_partition(p.clone())?;
    let omega_len: Vec<f64> = p.omega.iter().map(Interval::len).collect();
    let sigma_len: Vec<f64> = p.sigma2.iter().map(Interval::len).collect();
    let n_om = allocate(n_omega, &omega_len, 2)?;
    let n_sg = allocate(n_sigma2, &sigma_len, 1)?;

    // Blocks: maximal runs of Ω / Σ₂ intervals between Σ₁ components.
    let tagged = p.tagged();
    let mut blocks: Vec<Vec<(Region, Interval)>> = Vec::new();
    let mut current: Vec<(Region, Interval)> = Vec::new();
    for &(r, iv) in &tagged {
        if r == Region::Sigma1 {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push((r, iv));
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let count_for = |r: Region, iv: &Interval| -> usize {
        let (list, counts) = match r {
            Region::Omega => (&p.omega, &n_om),
            _ => (&p.sigma2, &n_sg),
        };
        let idx = list.iter().position(|c| c == iv).expect("interval from partition");
        counts[idx]
    };

    let mut nodes: Vec<f64> = Vec::new();
    let mut classes: Vec<DofClass> = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    for block in &blocks {
        let nb = block.len();
        let block_start = nodes.len();
        for (k, &(r, iv)) in block.iter().enumerate() {
            let n = count_for(r, &iv);
            let xs = if r == Region::Omega {
                segment_nodes(iv, n, k == 0, k + 1 == nb, grading)
            } else {
                segment_nodes(iv, n, false, false, grading)
            };
            let skip = if k == 0 { 0 } else { 1 };
            for &x in &xs[skip..] {
                nodes.push(x);
                classes.push(DofClass::Interior);
            }
            let base = nodes.len() - xs.len();
            for e in 0..n {
                let l = base + e;
                elements.push(Element { left: l, right: l + 1, a: nodes[l], b: nodes[l + 1], region: r });
            }
        }
        let block_end = nodes.len() - 1;
        for i in block_start..=block_end {
            classes[i] = if i == block_start || i == block_end {
                DofClass::Eliminated
            } else if p.in_omega_closure(nodes[i]) {
                DofClass::Interior
            } else {
                DofClass::NeumannExt
            };
        }
    }
    let mut right_element = vec![None; nodes.len()];
    for (e, el) in elements.iter().enumerate() {
        right_element[el.left] = Some(e);
    }
    Ok(Mesh { nodes, classes, elements, right_element, grading, partition: p })
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn s(&self) -> f64 {
        self.partition.s
    }

    /// Element containing `x` (closed), if `x` lies in Ω ∪ Σ₂.
    pub fn element_at(&self, x: f64) -> Option<usize> {
        let k = self.nodes.partition_point(|&n| n <= x);
        if k == 0 {
            return if self.nodes.first() == Some(&x) { self.right_element[0] } else { None };
        }
        let i = k - 1;
        if let Some(e) = self.right_element[i] {
            return Some(e);
        }
        // x is the last node of a block
        if self.nodes[i] == x && i > 0 {
            return self.right_element[i - 1];
        }
        None
    }

    /// True if node `i` lies strictly inside some Ω component.
    pub fn strictly_in_omega(&self, i: usize) -> bool {
        let x = self.nodes[i];
        self.partition.omega.iter().any(|iv| iv.contains(x))
    }

    /// Distance from `x ∈ closure(Ω)` to ∂Ω.
    pub fn boundary_distance(&self, x: f64) -> Result<f64> {
        boundary_distance(&self.partition, x)
    }

    pub fn dofs(&self, mode: Mode) -> DofSet {
        let mut nodes = Vec::new();
        let mut omega_coupled = Vec::new();
        let mut exterior = Vec::new();
        let mut position = vec![None; self.n_nodes()];
        for i in 0..self.n_nodes() {
            let active = match mode {
                Mode::Mixed => self.classes[i] != DofClass::Eliminated,
                Mode::Dirichlet => self.strictly_in_omega(i),
            };
            if !active {
                continue;
            }
            let pos = nodes.len();
            position[i] = Some(pos);
            nodes.push(i);
            if self.classes[i] == DofClass::NeumannExt {
                exterior.push(pos);
            } else {
                omega_coupled.push(pos);
            }
        }
        DofSet { mode, nodes, omega_coupled, exterior, position }
    }

    /// Indices of nodes strictly inside Ω (where pointwise ratios are taken).
    pub fn omega_interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.strictly_in_omega(i)).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.elements.iter().map(Element::len).sum()
    }

    /// Short content hash of the node layout, classes and order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.partition.s.to_le_bytes());
        for (x, c) in self.nodes.iter().zip(&self.classes) {
            h.update(x.to_le_bytes());
            h.update([*c as u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Distance from `x` to ∂Ω; `x` must lie in the closure of Ω.
pub fn boundary_distance(p: &DomainPartition, x: f64) -> Result<f64> {
    if !p.in_omega_closure(x) {
        return Err(Error::Domain(format!("x = {x} is not in the closure of Ω")));
    }
    Ok(p
        .omega
        .iter()
        .flat_map(|iv| [(x - iv.lo).abs(), (x - iv.hi).abs()])
        .fold(f64::INFINITY, f64::min))
}
