//! End-to-end acceptance run: the full certificate sweep at s = 0.25, 0.5,
//! 0.75 (plus the weighted Sobolev bound at s = 0.4) on meshes 64/128/256,
//! with one PASS/FAIL line per criterion.

use std::io::Write;
use std::path::Path;

use mixfrac::cli::{run, Command, Report};
use mixfrac::config::{RunConfig, SRun, CERTIFICATES};
use mixfrac::quadrature::QuadSpec;
use mixfrac::verify::{torsion_constant, Certificate};

/// Lanczos approximation (g = 7, 9 terms), independent of the library's Gamma.
fn gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let sum = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * sum
}

/// `(-Δ)^s (1 - x²)_+^s = 4^s Γ(1+s) Γ(1/2+s) / Γ(1/2)` on (-1, 1).
fn torsion_closed_form(s: f64) -> f64 {
    gamma(0.5) / (4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 + s))
}

/// Exact integral over [lo, hi] of the piecewise-linear field in a CSV.
fn integrate_csv(path: &Path, lo: f64, hi: f64) -> f64 {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let pts: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    pts.windows(2)
        .filter(|w| w[0].0 >= lo && w[1].0 <= hi)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

struct Sheet {
    lines: Vec<(usize, bool, String)>,
}

impl Sheet {
    fn record(&mut self, n: usize, title: &str, checks: &[(bool, String)]) {
        let ok = !checks.is_empty() && checks.iter().all(|c| c.0);
        let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
        let detail = if ok { String::new() } else { format!(" (failed: {})", failed.join("; ")) };
        self.lines.push((n, ok, format!("{title}{detail}")));
    }
}

fn certs<'a>(r: &'a Report, prefix: &str) -> Vec<&'a Certificate> {
    r.certificates.iter().filter(|c| c.name.starts_with(&format!("{prefix}["))).collect()
}

fn cert<'a>(r: &'a Report, name: &str) -> &'a Certificate {
    r.certificates.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("missing certificate {name}"))
}

fn drift(values: &[f64]) -> f64 {
    let n = values.len();
    (values[n - 1] - values[n - 2]).abs() / values[n - 1].abs()
}

const S_VALUES: [f64; 3] = [0.25, 0.5, 0.75];
const MESHES: [usize; 3] = [64, 128, 256];

fn per_mesh(r: &Report, prefix: &str, s: f64, key: &str) -> Vec<f64> {
    MESHES.iter().map(|n| cert(r, &format!("{prefix}[s={s},n={n}]")).get(key)).collect()
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default_config();
    let all: Vec<String> = CERTIFICATES.iter().map(|c| c.to_string()).collect();
    cfg.runs = S_VALUES.iter().map(|&s| SRun { s, certificates: all.clone() }).collect();
    cfg.runs.push(SRun { s: 0.4, certificates: vec!["weighted_sobolev".into()] });
    cfg.out_dir = dir.path().to_path_buf();
    let r = run(Command::Verify, &cfg).expect("verify run");
    let mut sheet = Sheet { lines: Vec::new() };

    // 1: torsion oracle
    let mut checks = Vec::new();
    for s in S_VALUES {
        let k_lib = torsion_constant(s, QuadSpec::default()).unwrap();
        let k_ref = torsion_closed_form(s);
        checks.push(((k_lib / k_ref - 1.0).abs() < 1e-6, format!("K_s at s={s}: {k_lib} vs {k_ref}")));
        let c = cert(&r, &format!("torsion_oracle[s={s}]"));
        let e: Vec<f64> = MESHES.iter().map(|n| c.get(&format!("rel_l2_error[n={n}]"))).collect();
        checks.push((e[0] > e[1] && e[1] > e[2], format!("errors not decreasing at s={s}: {e:?}")));
        checks.push((e[2] < 0.05, format!("error {} at s={s}, n=256", e[2])));
    }
    sheet.record(1, "torsion oracle equivalence", &checks);

    // 2: Green identity
    let mut checks = Vec::new();
    for s in S_VALUES {
        let c = &certs(&r, "green_identity").into_iter().find(|c| c.name.starts_with(&format!("green_identity[s={s},"))).unwrap().clone();
        let pairs = c.constants.keys().filter(|k| k.starts_with("form[")).count();
        checks.push((pairs == 3, format!("{pairs} pairs at s={s}")));
        checks.push((c.get("max_rel_error") < 1e-6, format!("relative error {} at s={s}", c.get("max_rel_error"))));
    }
    sheet.record(2, "Green-type identity", &checks);

    // 3: Poincaré and the first eigenvalue
    let mut checks = Vec::new();
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("poincare[s={s},n={n}]"));
            let (lm, ld) = (c.get("lambda1"), c.get("lambda1_dirichlet"));
            checks.push((lm > 0.0 && lm <= ld, format!("λ mixed {lm} vs Dirichlet {ld} at s={s}, n={n}")));
            checks.push((c.get("eigen_residual") < 1e-10, format!("residual {} at s={s}, n={n}", c.get("eigen_residual"))));
            checks.push((c.pass, format!("sample quotient below λ at s={s}, n={n}")));
        }
        let d = drift(&per_mesh(&r, "poincare", s, "lambda1"));
        checks.push((d < 0.10, format!("λ drift {d} at s={s}")));
    }
    sheet.record(3, "Poincaré inequality and first eigenvalue", &checks);

    // 4: elliptic Hopf
    let mut checks = Vec::new();
    checks.push((cfg.sources.count == 20, "family size".into()));
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("elliptic_hopf[s={s},n={n}]"));
            checks.push((c.get("min_c") > 0.0, format!("min c {} at s={s}, n={n}", c.get("min_c"))));
            let xi = dir.path().join(format!("fields/xi0_s{s}_n{n}.csv"));
            let identity = (c.get("c_unit") * integrate_csv(&xi, -1.0, 1.0) - 1.0).abs();
            checks.push((identity < 1e-10, format!("unit source identity off by {identity} at s={s}, n={n}")));
        }
        let d = drift(&per_mesh(&r, "elliptic_hopf", s, "min_c"));
        checks.push((d < 0.25, format!("min c drift {d} at s={s}")));
    }
    sheet.record(4, "elliptic Hopf lower bound", &checks);

    // 5: eigenfunction versus torsion function
    let mut checks = Vec::new();
    for s in S_VALUES {
        for key in ["c_up", "c_down"] {
            let v = per_mesh(&r, "eigen_comparison", s, key);
            checks.push((v.iter().all(|x| x.is_finite() && *x > 0.0), format!("{key} {v:?} at s={s}")));
            checks.push((drift(&v) < 0.15, format!("{key} drift {} at s={s}", drift(&v))));
        }
    }
    sheet.record(5, "eigenfunction comparison constants", &checks);

    // 6: decay of the first eigenmode
    let mut checks = Vec::new();
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("eigen_decay[s={s},n={n}]"));
            let (lo, hi) = (c.get("ratio_min[dt0/2]"), c.get("ratio_max[dt0/2]"));
            checks.push((lo >= 0.99 && hi <= 1.01, format!("ratio band [{lo}, {hi}] at s={s}, n={n}")));
            let e = c.get("slope_rel_error[dt0/2]");
            checks.push((e < 0.02, format!("slope error {e} at s={s}, n={n}")));
        }
    }
    sheet.record(6, "eigenmode decay", &checks);

    // 7: parabolic Hopf
    let mut checks = Vec::new();
    checks.push((cfg.initial_data.count == 10, "family size".into()));
    checks.push((cfg.time_grid.first() == Some(&0.1), "grid starts at 0.1/λ".into()));
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("parabolic_hopf[s={s},n={n}]"));
            let vals: Vec<f64> = c.constants.iter().filter(|(k, _)| k.starts_with("c_emp")).map(|(_, v)| *v).collect();
            checks.push((vals.len() == cfg.time_grid.len() && vals.iter().all(|v| *v > 0.0), format!("c(t) {vals:?} at s={s}, n={n}")));
        }
    }
    sheet.record(7, "parabolic Hopf lower bound", &checks);

    // 8: θ monotonicity
    let mut checks = Vec::new();
    checks.push((cfg.theta_runs == 3 && cfg.theta_j == vec![1, 2], "θ₂, θ₄ over 3 data".into()));
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("theta_monotone[s={s},n={n}]"));
            for key in ["max_step_increase_2", "max_step_increase_4"] {
                checks.push((c.get(key) < 1e-8, format!("{key} = {} at s={s}, n={n}", c.get(key))));
            }
        }
    }
    sheet.record(8, "θ monotonicity", &checks);

    // 9: comparison and δ^s bounds
    let mut checks = Vec::new();
    for s in S_VALUES {
        for n in MESHES {
            let c = cert(&r, &format!("comparison[s={s},n={n}]"));
            checks.push((c.get("min_normalized_gap") >= -1e-10, format!("gap {} at s={s}, n={n}", c.get("min_normalized_gap"))));
            for name in ["delta_lower_bound_elliptic", "delta_lower_bound_parabolic"] {
                let c = cert(&r, &format!("{name}[s={s},n={n}]"));
                checks.push((c.get("min_c") > 0.0, format!("{name} {} at s={s}, n={n}", c.get("min_c"))));
            }
        }
    }
    sheet.record(9, "comparison principle and δ^s lower bounds", &checks);

    // 10: walker
    let mut checks = Vec::new();
    checks.push((cfg.walk.n_walkers == 100_000, "walker count".into()));
    for s in S_VALUES {
        let c = cert(&r, &format!("walker_duality[s={s},n=64]"));
        let z: Vec<f64> = c.constants.iter().filter(|(k, _)| k.starts_with("z_score")).map(|(_, v)| *v).collect();
        checks.push((z.len() == 3 && z.iter().all(|v| *v <= 3.0), format!("z scores {z:?} at s={s}")));
        checks.push((c.get("unit_payoff_error") < 1e-12 && c.get("unit_payoff_std_err") == 0.0, format!("unit payoff at s={s}")));
        let c = cert(&r, &format!("walker_symmetric[s={s},n=64]"));
        checks.push((c.get("z_score") <= 3.0, format!("symmetric z {} at s={s}", c.get("z_score"))));
    }
    sheet.record(10, "walker duality and Monte Carlo cross-check", &checks);

    // 11: Hardy and weighted Sobolev
    let mut checks = Vec::new();
    for s in S_VALUES {
        for name in ["hardy", "weighted_sobolev"] {
            let v = per_mesh(&r, name, s, "sup_ratio");
            let sc = per_mesh(&r, name, s, "scaling_error");
            checks.push((v.iter().all(|x| x.is_finite() && *x > 0.0), format!("{name} sup {v:?} at s={s}")));
            checks.push((sc.iter().all(|x| *x < 1e-12), format!("{name} scaling {sc:?} at s={s}")));
            checks.push((drift(&v) < 0.25, format!("{name} drift {} at s={s}", drift(&v))));
        }
    }
    let q = per_mesh(&r, "weighted_sobolev", 0.4, "q");
    let v = per_mesh(&r, "weighted_sobolev", 0.4, "sup_ratio");
    checks.push((q.iter().all(|q| (q - 2.8).abs() < 1e-15), format!("q {q:?} at s=0.4")));
    checks.push((v.iter().all(|x| x.is_finite() && *x > 0.0) && drift(&v) < 0.25, format!("s=0.4 sup {v:?}")));
    sheet.record(11, "Hardy and weighted Sobolev constants", &checks);

    // libtest captures print!, so write to the process stdout directly
    let mut out = std::io::stdout().lock();
    for (n, ok, line) in &sheet.lines {
        writeln!(out, "{} criterion {n:>2}: {line}", if *ok { "PASS" } else { "FAIL" }).unwrap();
    }
    writeln!(out, "certificate verdicts: {} of {} PASS", r.certificates.iter().filter(|c| c.pass).count(), r.certificates.len()).unwrap();
    drop(out);
    assert!(sheet.lines.iter().all(|l| l.1), "acceptance criteria failed");
    assert!(r.all_pass(), "a certificate failed: {:?}", r.certificates.iter().filter(|c| !c.pass).map(|c| &c.name).collect::<Vec<_>>());
}
