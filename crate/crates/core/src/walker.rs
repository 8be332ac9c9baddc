//! Jump chain of the probabilistic interpretation: from a point of Ω jump
//! with density ∝ |x - y|^{-1-2s}; landing in Σ₁ ends the walk with payoff
//! `h`, landing in Σ₂ sends the walker straight back into Ω with density
//! `c(x) |x - y|^{-1-2s}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_mass, MassRegion, Payoff};
use crate::domain::{DofClass, Interval, Mesh};
use crate::error::{Error, Result};
use crate::kernel::{interval_kernel_mass, reflect_normalizer, KernelParams};
use crate::quadrature::power_integral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StateKind {
    Omega,
    Sigma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Absorber {
    /// Eliminated mesh node on the boundary of Σ₁.
    Node(usize),
    /// A piece of Σ₁ on which the payoff is constant.
    Segment(Interval),
}

/// Row-stochastic chain over transient mesh nodes and absorbing Σ₁ pieces.
#[derive(Debug, Clone)]
pub struct JumpChain {
    pub mesh: Arc<Mesh>,
    pub s: f64,
    /// Mesh node of each transient state.
    pub states: Vec<usize>,
    pub kinds: Vec<StateKind>,
    pub absorbers: Vec<Absorber>,
    /// `rows[i][t]` over targets `t` = transient states then absorbers.
    pub rows: Vec<Vec<f64>>,
    cdf: Vec<Vec<f64>>,
}

/// `∫_Ω φ_j(y) |x - y|^{-1-2s} dy` for every mesh node `j`, `x` outside closure(Ω).
fn hat_masses(mesh: &Mesh, x: f64, s: f64) -> Vec<f64> {
    let (e1, e2) = (-1.0 - 2.0 * s, -2.0 * s);
    let mut out = vec![0.0; mesh.n_nodes()];
    for el in mesh.elements.iter().filter(|e| e.in_omega()) {
        let h = el.len();
        let (t0, t1, near, far) = if x <= el.a {
            (el.a - x, el.b - x, el.left, el.right)
        } else {
            (x - el.b, x - el.a, el.right, el.left)
        };
        // far hat = (t - t0)/h, near hat = 1 - (t - t0)/h
        let m0 = power_integral(t0, t1, e1);
        let m1 = power_integral(t0, t1, e2);
        let far_mass = (m1 - t0 * m0) / h;
        out[far] += far_mass;
        out[near] += m0 - far_mass;
    }
    out
}

/// Build the chain with `n_bins` absorbing bins on `window` (if any) and one
/// bin per remaining piece of Σ₁.
pub fn build_chain(mesh: Arc<Mesh>, k: &KernelParams, window: Option<Interval>, n_bins: usize) -> Result<JumpChain> {
    let p = &mesh.partition;
    let s = k.s;
    let grid = match window {
        Some(w) => {
            if n_bins == 0 {
                return Err(Error::Config("walker window needs at least one bin".into()));
            }
            if !p.sigma1.iter().any(|c| c.lo.max(w.lo) < c.hi.min(w.hi)) {
                return Err(Error::Config(format!("walker window ({}, {}) has no Σ₁ bins", w.lo, w.hi)));
            }
            Payoff::from_fn(w, n_bins, |_| 0.0, Some(0.0), Some(0.0))?
        }
        None => Payoff::constant(0.0),
    };
    let segments = grid.segments(&p.sigma1)?;

    let mut states = Vec::new();
    let mut kinds = Vec::new();
    let mut absorbers = Vec::new();
    let mut target_of = vec![usize::MAX; mesh.n_nodes()];
    for (i, c) in mesh.classes.iter().enumerate() {
        match c {
            DofClass::Interior => {
                target_of[i] = states.len();
                states.push(i);
                kinds.push(StateKind::Omega);
            }
            DofClass::NeumannExt => {
                target_of[i] = states.len();
                states.push(i);
                kinds.push(StateKind::Sigma2);
            }
            DofClass::Eliminated => {}
        }
    }
    let nt = states.len();
    for (i, c) in mesh.classes.iter().enumerate() {
        if *c == DofClass::Eliminated {
            target_of[i] = nt + absorbers.len();
            absorbers.push(Absorber::Node(i));
        }
    }
    let seg_base = nt + absorbers.len();
    absorbers.extend(segments.iter().map(|&(iv, _)| Absorber::Segment(iv)));
    let width = nt + absorbers.len();

    let weights: Vec<f64> = assemble_mass(&mesh, MassRegion::Full).row_iter().map(|r| r.sum()).collect();
    let e = -1.0 - 2.0 * s;
    let rows: Vec<Vec<f64>> = states
        .par_iter()
        .zip(&kinds)
        .map(|(&i, kind)| {
            let x = mesh.nodes[i];
            let mut row = vec![0.0; width];
            match kind {
                StateKind::Omega => {
                    for (j, &y) in mesh.nodes.iter().enumerate() {
                        if j != i {
                            row[target_of[j]] += (x - y).abs().powf(e) * weights[j];
                        }
                    }
                    for (b, &(iv, _)) in segments.iter().enumerate() {
                        row[seg_base + b] += interval_kernel_mass(x, iv, s);
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= total);
                }
                StateKind::Sigma2 => {
                    let c = reflect_normalizer(&mesh.partition, x).expect("Σ₂ state away from Ω");
                    for (j, m) in hat_masses(&mesh, x, s).into_iter().enumerate() {
                        if m != 0.0 {
                            row[target_of[j]] += c * m;
                        }
                    }
                }
            }
            row
        })
        .collect();
    let cdf = rows
        .iter()
        .map(|r| {
            let mut acc = 0.0;
            let mut c: Vec<f64> = r.iter().map(|v| {
                acc += v;
                acc
            }).collect();
            *c.last_mut().unwrap() = f64::INFINITY;
            c
        })
        .collect();
    Ok(JumpChain { mesh, s, states, kinds, absorbers, rows, cdf })
}

impl JumpChain {
    pub fn n_transient(&self) -> usize {
        self.states.len()
    }

    /// Transient state index of mesh node `node`.
    pub fn state_of(&self, node: usize) -> Option<usize> {
        self.states.iter().position(|&i| i == node)
    }

    /// Payoff of every absorber.
    pub fn payoff_vector(&self, h: &Payoff) -> Result<Vec<f64>> {
        let sigma1 = &self.mesh.partition.sigma1;
        self.absorbers
            .iter()
            .map(|a| match a {
                Absorber::Node(i) => h.boundary_value(self.mesh.nodes[*i], sigma1),
                Absorber::Segment(iv) => {
                    let mid = if iv.lo.is_infinite() {
                        iv.hi - 1.0
                    } else if iv.hi.is_infinite() {
                        iv.lo + 1.0
                    } else {
                        0.5 * (iv.lo + iv.hi)
                    };
                    h.value(mid)
                }
            })
            .collect()
    }

    /// Expected payoff from every transient state, by eliminating the Σ₂
    /// states and solving `(I - P_ΩΩ - P_ΩΣ₂ P_Σ₂Ω) u = P_ΩA h + P_ΩΣ₂ P_Σ₂A h` densely.
    pub fn solve_duality(&self, payoff: &[f64]) -> Result<Vec<f64>> {
        let nt = self.n_transient();
        let om: Vec<usize> = (0..nt).filter(|&i| self.kinds[i] == StateKind::Omega).collect();
        let sg: Vec<usize> = (0..nt).filter(|&i| self.kinds[i] == StateKind::Sigma2).collect();
        let absorbed = |i: usize| -> f64 { payoff.iter().enumerate().map(|(a, h)| self.rows[i][nt + a] * h).sum() };
        let bs: Vec<f64> = sg.iter().map(|&j| absorbed(j)).collect();
        let n = om.len();
        let mut m = DMatrix::identity(n, n);
        let mut rhs = DVector::zeros(n);
        for (a, &i) in om.iter().enumerate() {
            rhs[a] = absorbed(i);
            for (b, &j) in om.iter().enumerate() {
                m[(a, b)] -= self.rows[i][j];
            }
            for (q, &k) in sg.iter().enumerate() {
                let pik = self.rows[i][k];
                if pik == 0.0 {
                    continue;
                }
                rhs[a] += pik * bs[q];
                for (b, &j) in om.iter().enumerate() {
                    m[(a, b)] -= pik * self.rows[k][j];
                }
            }
        }
        let uo = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularMatrix("chain equations are singular (no absorption)".into()))?;
        let mut u = vec![0.0; nt];
        for (a, &i) in om.iter().enumerate() {
            u[i] = uo[a];
        }
        for (q, &k) in sg.iter().enumerate() {
            u[k] = bs[q] + om.iter().enumerate().map(|(a, &j)| self.rows[k][j] * uo[a]).sum::<f64>();
        }
        Ok(u)
    }

    fn sample(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let r: f64 = rng.random();
        self.cdf[state].partition_point(|&c| c <= r)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WalkEstimate {
    pub start_node: usize,
    pub x0: f64,
    pub mean: f64,
    pub std_err: f64,
    pub n_walkers: usize,
    pub seed: u64,
    pub mean_steps: f64,
}

pub const STEP_CAP: usize = 1_000_000;
const BATCH: usize = 1000;

/// Mean payoff of `n_walkers` walks started at mesh node `start`.
pub fn estimate_payoff(chain: &JumpChain, start: usize, payoff: &[f64], n_walkers: usize, seed: u64) -> Result<WalkEstimate> {
    let s0 = chain.state_of(start).filter(|&i| chain.kinds[i] == StateKind::Omega).ok_or_else(|| {
        Error::Domain(format!("start node {start} is not a transient Ω node"))
    })?;
    if payoff.len() != chain.absorbers.len() {
        return Err(Error::Consistency("one payoff per absorber required".into()));
    }
    if n_walkers < 2 {
        return Err(Error::Config("at least two walkers required".into()));
    }
    let nt = chain.n_transient();
    let batches = n_walkers.div_ceil(BATCH);
    let parts: Vec<Result<(f64, f64, u64)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BATCH.min(n_walkers - b * BATCH);
            let (mut sum, mut sq, mut steps) = (0.0, 0.0, 0u64);
            for _ in 0..count {
                let mut st = s0;
                let mut n = 0;
                let value = loop {
                    if n >= STEP_CAP {
                        return Err(Error::Nontermination(STEP_CAP));
                    }
                    let t = chain.sample(st, &mut rng);
                    n += 1;
                    if t >= nt {
                        break payoff[t - nt];
                    }
                    st = t;
                };
                sum += value;
                sq += value * value;
                steps += n as u64;
            }
            Ok((sum, sq, steps))
        })
        .collect();
    let (mut sum, mut sq, mut steps) = (0.0, 0.0, 0u64);
    for p in parts {
        let (a, b, c) = p?;
        sum += a;
        sq += b;
        steps += c;
    }
    let n = n_walkers as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(WalkEstimate {
        start_node: start,
        x0: chain.mesh.nodes[start],
        mean,
        std_err: (var / n).sqrt(),
        n_walkers,
        seed,
        mean_steps: steps as f64 / n,
    })
}
