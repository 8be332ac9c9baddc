//! Command-line pipelines: assemble the mesh sweep described by a
//! [`RunConfig`], run the requested stage and write the report and CSVs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_load, assemble_stiffness, MassKind, OperatorSet, Payoff};
use crate::config::{RunConfig, SRun};
use crate::domain::{build_mesh, Mode};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::KernelParams;
use crate::solve::{solve_eigen, solve_elliptic, solve_parabolic, solve_with_payoff, solve_xi0, unit_load, ModeOps, Stepper};
use crate::verify::*;

#[derive(Debug, Parser)]
#[command(name = "mixfrac", version, about = "Fractional Laplacian with mixed Dirichlet/Neumann exterior conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// INI configuration file; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace the partition and certificate list by a bundled suite.
    #[arg(long, global = true)]
    pub suite: Option<Suite>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Every certificate at s = 0.25 and 0.75, plus weighted Sobolev at s = 0.4.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Mixed problem with constant source and piecewise-constant Σ₁ datum.
    Solve,
    /// First eigenpairs of the mixed and Dirichlet problems.
    Eigen,
    /// Heat flow from the first member of the initial-data family.
    Parabolic,
    /// Jump-chain duality and Monte Carlo cross-checks.
    Walk,
    /// Every requested certificate over the mesh sweep.
    Verify,
}

/// Scalar outputs of a non-certificate stage.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub label: String,
    pub values: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool_version: String,
    pub command: Command,
    pub config_digest: String,
    pub results: Vec<RunResult>,
    pub certificates: Vec<Certificate>,
    pub skipped: Vec<String>,
    /// Wall-clock seconds per stage; the only field that varies between runs.
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }
}

/// Exit status for an error: 2 for configuration problems, 3 for numerics.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() { 2 } else { 3 }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    timing: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, label: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f();
        self.timing.insert(label, t.elapsed().as_secs_f64());
        r
    }

    fn write_field(&self, name: &str, u: &Field) -> Result<String> {
        let rel = format!("fields/{name}.csv");
        u.write_csv(BufWriter::new(File::create(self.out.join(&rel))?))?;
        Ok(rel)
    }
}

fn sweep(cfg: &RunConfig, s: f64) -> Result<Vec<OperatorSet>> {
    let p = cfg.partition_for(s);
    let k = KernelParams::new(s)?;
    cfg.meshes
        .par_iter()
        .map(|&(n, m)| assemble_stiffness(Arc::new(build_mesh(&p, n, m, cfg.grading)?), k, cfg.quad))
        .collect()
}

fn n_omega(ops: &OperatorSet) -> usize {
    ops.mesh.elements.iter().filter(|e| e.in_omega()).count()
}

fn tag(s: f64, ops: &OperatorSet) -> String {
    format!("s={s},n={}", n_omega(ops))
}

fn file_tag(s: f64, ops: &OperatorSet) -> String {
    format!("s{s}_n{}", n_omega(ops))
}

/// Run `command` with `cfg`, writing artifacts under the output directory.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Report> {
    let out = cfg.out_dir.clone();
    fs::create_dir_all(out.join("fields"))?;
    let mut ctx = Ctx { cfg, out, timing: BTreeMap::new() };
    let mut results = Vec::new();
    let mut certificates = Vec::new();
    let mut skipped = Vec::new();
    for r in &cfg.runs {
        let sw = ctx.timed(format!("assembly[s={}]", r.s), || sweep(cfg, r.s))?;
        match command {
            Command::Solve => results.extend(run_solve(&mut ctx, r.s, &sw)?),
            Command::Eigen => results.extend(run_eigen(&mut ctx, r.s, &sw)?),
            Command::Parabolic => results.extend(run_parabolic(&mut ctx, r.s, &sw)?),
            Command::Walk => certificates.extend(run_walk(&mut ctx, r.s, &sw)?),
            Command::Verify => {
                let (c, sk) = run_verify(&mut ctx, r, &sw)?;
                certificates.extend(c);
                skipped.extend(sk);
            }
        }
    }
    let report = Report {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command,
        config_digest: cfg.digest.clone(),
        results,
        certificates,
        skipped,
        timing: ctx.timing,
    };
    write_report(&report, &ctx.out)?;
    Ok(report)
}

fn write_report(report: &Report, out: &Path) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("report.json"))?), report)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["certificate", "constant", "value", "verdict"])?;
    for c in &report.certificates {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        for (k, v) in &c.constants {
            w.write_record([c.name.as_str(), k.as_str(), &format!("{v:e}"), verdict])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_solve(ctx: &mut Ctx, s: f64, sw: &[OperatorSet]) -> Result<Vec<RunResult>> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for ops in sw {
        let f = cfg.source_value;
        let load = assemble_load(&ops.mesh, &move |_| f, &ops.quad, &format!("{f}"));
        let u = if cfg.payoff_left == 0.0 && cfg.payoff_right == 0.0 {
            solve_elliptic(Mode::Mixed, ops, &load)?
        } else {
            let h = Payoff { window: None, bins: Vec::new(), far_left: Some(cfg.payoff_left), far_right: Some(cfg.payoff_right) };
            solve_with_payoff(ops, &load, &h)?
        };
        let file = ctx.write_field(&format!("solution_{}", file_tag(s, ops)), &u)?;
        let mut values = BTreeMap::new();
        values.insert("max".into(), u.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        values.insert("rows".into(), u.values().len() as f64);
        out.push(RunResult { label: format!("solve[{}]", tag(s, ops)), values, files: vec![file] });
    }
    Ok(out)
}

fn run_eigen(ctx: &mut Ctx, s: f64, sw: &[OperatorSet]) -> Result<Vec<RunResult>> {
    let tol = ctx.cfg.eigen_tol;
    let mut out = Vec::new();
    for ops in sw {
        let m = solve_eigen(Mode::Mixed, ops, MassKind::Consistent, tol)?;
        let d = solve_eigen(Mode::Dirichlet, ops, MassKind::Consistent, tol)?;
        let files = vec![
            ctx.write_field(&format!("chi1_mixed_{}", file_tag(s, ops)), &m.chi)?,
            ctx.write_field(&format!("chi1_dirichlet_{}", file_tag(s, ops)), &d.chi)?,
        ];
        let mut values = BTreeMap::new();
        values.insert("lambda1_mixed".into(), m.lambda1);
        values.insert("lambda1_dirichlet".into(), d.lambda1);
        values.insert("residual_mixed".into(), m.residual);
        values.insert("residual_dirichlet".into(), d.residual);
        out.push(RunResult { label: format!("eigen[{}]", tag(s, ops)), values, files });
    }
    Ok(out)
}

fn run_parabolic(ctx: &mut Ctx, s: f64, sw: &[OperatorSet]) -> Result<Vec<RunResult>> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for ops in sw {
        let fam = FunctionFamily::generate(cfg.initial_data.kind, 1, cfg.initial_data.seed, &ops.mesh.partition.omega)?;
        let eig = solve_eigen(Mode::Mixed, ops, cfg.parabolic.mass, cfg.eigen_tol)?;
        let lam = eig.lambda1;
        let t_end = cfg.time_grid.iter().cloned().fold(0.0, f64::max) / lam;
        let u0 = fam.members[0].field(&ops.mesh, Mode::Mixed);
        let tr = solve_parabolic(ops, &u0, t_end, cfg.parabolic.dt_lambda / lam, cfg.parabolic.stepper, cfg.parabolic.mass)?;
        let rel = format!("fields/trajectory_{}.csv", file_tag(s, ops));
        tr.write_csv(BufWriter::new(File::create(ctx.out.join(&rel))?))?;
        let mut values = BTreeMap::new();
        values.insert("lambda1".into(), lam);
        values.insert("t_end".into(), *tr.times.last().unwrap_or(&0.0));
        values.insert("l2_initial".into(), tr.l2_omega[0]);
        values.insert("l2_final".into(), *tr.l2_omega.last().unwrap_or(&0.0));
        out.push(RunResult { label: format!("parabolic[{}]", tag(s, ops)), values, files: vec![rel] });
    }
    Ok(out)
}

fn run_walk(ctx: &mut Ctx, s: f64, sw: &[OperatorSet]) -> Result<Vec<Certificate>> {
    let cfg = ctx.cfg;
    let ops = &sw[0];
    let payoffs = walker_payoffs(&cfg.walk)?;
    let mut a = ctx.timed(format!("walker[{}]", tag(s, ops)), || certify_walker(ops, &payoffs, &cfg.walk))?;
    a.name = format!("walker_duality[{}]", tag(s, ops));
    let mut b = ctx.timed(format!("walker_symmetric[s={s}]"), || certify_walker_symmetric(s, cfg.meshes[0].0, cfg.grading, &cfg.walk))?;
    b.name = format!("walker_symmetric[s={s},n={}]", cfg.meshes[0].0);
    Ok(vec![a, b])
}

/// Certificates computed on a single mesh.
fn per_mesh(cfg: &RunConfig, want: &dyn Fn(&str) -> bool, s: f64, ops: &OperatorSet) -> Result<(Vec<Certificate>, Field, Field)> {
    let omega = &ops.mesh.partition.omega;
    let sources = FunctionFamily::generate(cfg.sources.kind, cfg.sources.count, cfg.sources.seed, omega)?;
    let initial = FunctionFamily::generate(cfg.initial_data.kind, cfg.initial_data.count, cfg.initial_data.seed, omega)?;
    let xi0 = solve_xi0(ops)?;
    let eig = solve_eigen(Mode::Mixed, ops, cfg.parabolic.mass, cfg.eigen_tol)?;
    let grid = &cfg.time_grid;
    let spec = cfg.parabolic;
    let mut out = Vec::new();
    if want("poincare") {
        out.push(certify_poincare(ops, &sources, cfg.eigen_tol)?);
    }
    if want("hardy") {
        out.push(certify_hardy(ops, &sources)?);
    }
    if want("weighted_sobolev") {
        out.push(certify_weighted_sobolev(ops, &xi0, &sources, cfg.sobolev_r, cfg.sobolev_r_ceiling)?);
    }
    if want("linfty_ratio") {
        let p = cfg.linfty_p.unwrap_or(1.0 / s + 1.0);
        out.push(certify_linfty_ratio(ops, &initial.members[0], &sources, p)?);
    }
    if want("elliptic_hopf") {
        out.push(certify_elliptic_hopf(ops, &xi0, &sources)?);
    }
    if want("eigen_comparison") {
        out.push(certify_eigen_comparison(ops, &xi0, &eig)?);
    }
    if want("eigen_decay") {
        out.push(certify_eigen_decay(ops, &eig, &xi0, Stepper::Trapezoidal)?);
    }
    if want("parabolic_hopf") {
        out.push(certify_parabolic_hopf(ops, &xi0, &eig, &initial, grid, spec)?);
    }
    if want("parabolic_positivity") {
        out.push(certify_parabolic_positivity(ops, eig.lambda1, &initial, grid, spec)?);
    }
    if want("theta_monotone") {
        let t_end = grid.iter().cloned().fold(0.0, f64::max) / eig.lambda1;
        let mut worst: Option<Certificate> = None;
        for m in initial.members.iter().take(cfg.theta_runs) {
            let u0 = m.field(&ops.mesh, Mode::Mixed);
            let tr = solve_parabolic(ops, &u0, t_end, spec.dt_lambda / eig.lambda1, spec.stepper, spec.mass)?;
            let c = monitor_theta(ops, &tr, &eig, &cfg.theta_j)?;
            // keep the run with the largest step increase
            let key = |c: &Certificate| c.constants.iter().filter(|(k, _)| k.starts_with("max_step")).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            if worst.as_ref().is_none_or(|w| key(&c) > key(w) || (!c.pass && w.pass)) {
                worst = Some(c);
            }
        }
        if let Some(mut c) = worst {
            c.note(format!("worst of {} initial data", cfg.theta_runs.min(initial.members.len())));
            out.push(c);
        }
    }
    if want("comparison") {
        out.push(certify_comparison(ops, &sources)?);
    }
    if want("delta_lower_bound_elliptic") {
        out.push(certify_delta_lower_bounds(ops, &sources, DeltaMode::Elliptic, None, grid, spec)?);
    }
    if want("delta_lower_bound_parabolic") {
        out.push(certify_delta_lower_bounds(ops, &initial, DeltaMode::Parabolic, Some(&eig), grid, spec)?);
    }
    for c in &mut out {
        c.name = format!("{}[{}]", c.name, tag(s, ops));
    }
    Ok((out, xi0, eig.chi))
}

fn run_verify(ctx: &mut Ctx, r: &SRun, sw: &[OperatorSet]) -> Result<(Vec<Certificate>, Vec<String>)> {
    let cfg = ctx.cfg;
    let s = r.s;
    let want = |name: &str| r.certificates.iter().any(|c| c == name);
    let mut certs = Vec::new();
    let mut skipped = Vec::new();

    let per = ctx.timed(format!("per_mesh[s={s}]"), || {
        sw.par_iter().map(|ops| per_mesh(cfg, &want, s, ops)).collect::<Result<Vec<_>>>()
    })?;
    for (ops, (_, xi0, chi)) in sw.iter().zip(&per) {
        ctx.write_field(&format!("xi0_{}", file_tag(s, ops)), xi0)?;
        ctx.write_field(&format!("chi1_{}", file_tag(s, ops)), chi)?;
    }
    let by_name = |prefix: &str, key: &str| -> Vec<f64> {
        per.iter()
            .filter_map(|(cs, _, _)| cs.iter().find(|c| c.name.starts_with(&format!("{prefix}["))).map(|c| c.get(key)))
            .collect()
    };
    let mut stability = Vec::new();
    for (cert, key, drift_key) in [
        ("poincare", "lambda1", "lambda1"),
        ("elliptic_hopf", "min_c", "elliptic_hopf"),
        ("eigen_comparison", "c_up", "eigen_comparison"),
        ("eigen_comparison", "c_down", "eigen_comparison"),
        ("hardy", "sup_ratio", "hardy"),
        ("weighted_sobolev", "sup_ratio", "weighted_sobolev"),
    ] {
        if want(cert) && sw.len() >= 2 {
            let mut c = certify_stability(&format!("{cert}.{key}"), &by_name(cert, key), cfg.drift[drift_key]);
            c.name = format!("{}[s={s}]", c.name);
            stability.push(c);
        }
    }
    for (cs, _, _) in per {
        certs.extend(cs);
    }
    certs.extend(stability);

    if want("torsion_oracle") {
        let refs: Vec<&OperatorSet> = sw.iter().collect();
        match ctx.timed(format!("torsion[s={s}]"), || certify_torsion_oracle(&refs, cfg.torsion_tol)) {
            Ok(mut c) => {
                c.name = format!("{}[s={s}]", c.name);
                certs.push(c);
            }
            Err(Error::Config(msg)) => skipped.push(format!("torsion_oracle[s={s}]: {msg}")),
            Err(e) => return Err(e),
        }
    }
    if want("green_identity") {
        let mut c = ctx.timed(format!("green[s={s}]"), || green_certificate(cfg, s))?;
        c.name = format!("{}[s={s},n={}]", c.name, cfg.green_mesh);
        certs.push(c);
    }
    if want("walker_duality") || want("walker_symmetric") {
        for c in run_walk(ctx, s, sw)? {
            if want(c.name.split('[').next().unwrap_or("")) {
                certs.push(c);
            }
        }
    }
    Ok((certs, skipped))
}

/// Green identity on a coarse mesh for three smooth pairs from the discrete space.
fn green_certificate(cfg: &RunConfig, s: f64) -> Result<Certificate> {
    let p = cfg.partition_for(s);
    let n = cfg.green_mesh;
    let mesh = Arc::new(build_mesh(&p, n, (n / 2).max(1), cfg.grading)?);
    let ops = assemble_stiffness(mesh.clone(), KernelParams::new(s)?, cfg.quad)?;
    let mo = ModeOps::new(&ops, Mode::Mixed)?;
    let d = mesh.dofs(Mode::Mixed);
    let wave: Vec<f64> = d.nodes.iter().map(|&i| (1.3 * mesh.nodes[i]).cos()).collect();
    let wave = Field::from_active(mesh.clone(), &d, &wave);
    let xi0 = mo.solve(&unit_load(&ops))?;
    let eig = solve_eigen(Mode::Mixed, &ops, MassKind::Consistent, cfg.eigen_tol)?;
    let fam = FunctionFamily::generate(cfg.sources.kind, 1, cfg.sources.seed, &p.omega)?;
    let bump = fam.members[0].field(&mesh, Mode::Mixed);
    let pairs = vec![(xi0.clone(), wave.clone()), (eig.chi.clone(), bump), (wave, xi0)];
    certify_green_identity(&ops, &pairs)
}
