//! Run configuration: a flat INI file with section headers.
//!
//! Every key has a default, so an empty file describes the standard
//! experiment on Ω = (-1, 1), Σ₂ = (1, 2) at s = 1/2.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assembly::MassKind;
use crate::domain::{validate_partition, DomainPartition, Grading, Interval};
use crate::error::{Error, Result};
use crate::quadrature::QuadSpec;
use crate::solve::Stepper;
use crate::verify::{FamilyKind, ParabolicSpec, WalkSpec, PARABOLIC_GRID};

/// Certificates known to `verify`, in report order.
pub const CERTIFICATES: [&str; 17] = [
    "torsion_oracle",
    "green_identity",
    "poincare",
    "hardy",
    "weighted_sobolev",
    "linfty_ratio",
    "elliptic_hopf",
    "eigen_comparison",
    "eigen_decay",
    "parabolic_hopf",
    "parabolic_positivity",
    "theta_monotone",
    "comparison",
    "delta_lower_bound_elliptic",
    "delta_lower_bound_parabolic",
    "walker_duality",
    "walker_symmetric",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub count: usize,
    pub seed: u64,
}

/// One value of `s` and the certificates requested for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SRun {
    pub s: f64,
    pub certificates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Partition with `s` taken from the first run.
    pub partition: DomainPartition,
    pub runs: Vec<SRun>,
    /// `(n_omega, n_sigma2)` per mesh, coarse to fine.
    pub meshes: Vec<(usize, usize)>,
    pub grading: Grading,
    pub quad: QuadSpec,
    pub eigen_tol: f64,
    pub sources: FamilySpec,
    pub initial_data: FamilySpec,
    pub time_grid: Vec<f64>,
    pub parabolic: ParabolicSpec,
    pub theta_runs: usize,
    pub theta_j: Vec<u32>,
    pub sobolev_r: f64,
    pub sobolev_r_ceiling: f64,
    pub linfty_p: Option<f64>,
    pub green_mesh: usize,
    pub walk: WalkSpec,
    pub source_value: f64,
    pub payoff_left: f64,
    pub payoff_right: f64,
    pub drift: BTreeMap<String, f64>,
    pub torsion_tol: f64,
    pub out_dir: PathBuf,
    /// SHA-256 of the canonicalized config text.
    pub digest: String,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse(key, t)).collect()
}

fn parse_bound(key: &str, t: &str) -> Result<f64> {
    match t.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => parse(key, other),
    }
}

/// `lo:hi, lo:hi, ...` with `inf` allowed.
pub fn parse_intervals(key: &str, v: &str) -> Result<Vec<Interval>> {
    v.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (lo, hi) = t.split_once(':').ok_or_else(|| Error::Config(format!("{key}: expected lo:hi, got {t:?}")))?;
            Ok(Interval { lo: parse_bound(key, lo)?, hi: parse_bound(key, hi)? })
        })
        .collect()
}

fn parse_family_kind(key: &str, v: &str) -> Result<FamilyKind> {
    match v.trim() {
        "bumps" => Ok(FamilyKind::RandomBumps),
        "bumps_with_floor" => Ok(FamilyKind::BumpsWithFloor),
        "constant" => Ok(FamilyKind::Constant),
        other => Err(Error::Config(format!("{key}: unknown family {other:?}"))),
    }
}

/// Canonical text: sections and keys sorted, values trimmed.
fn canonical(ini: &Ini) -> String {
    let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (sec, props) in ini.iter() {
        let entry = map.entry(sec.unwrap_or("").to_string()).or_default();
        for (k, v) in props.iter() {
            entry.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut out = String::new();
    for (sec, props) in map.iter().filter(|(_, p)| !p.is_empty()) {
        out.push_str(&format!("[{sec}]\n"));
        for (k, v) in props {
            out.push_str(&format!("{k}={v}\n"));
        }
    }
    out
}

struct Table<'a> {
    ini: &'a Ini,
    used: BTreeSet<(String, String)>,
}

impl<'a> Table<'a> {
    fn get(&mut self, sec: &str, key: &str) -> Option<&'a str> {
        self.used.insert((sec.into(), key.into()));
        self.ini.section(Some(sec)).and_then(|p| p.get(key))
    }

    fn or<T: FromStr>(&mut self, sec: &str, key: &str, default: T) -> Result<T> {
        match self.get(sec, key) {
            Some(v) => parse(&format!("{sec}.{key}"), v),
            None => Ok(default),
        }
    }

    fn unknown(&self) -> Option<String> {
        for (sec, props) in self.ini.iter() {
            for (k, _) in props.iter() {
                let sec = sec.unwrap_or("");
                if !self.used.contains(&(sec.to_string(), k.to_string())) {
                    return Some(format!("{sec}.{k}"));
                }
            }
        }
        None
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn default_config() -> Self {
        Self::from_str("").expect("empty config is valid")
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let digest = hex::encode(Sha256::digest(canonical(&ini).as_bytes()));
        let mut t = Table { ini: &ini, used: BTreeSet::new() };

        let s_values: Vec<f64> = match t.get("partition", "s") {
            Some(v) => parse_list("partition.s", v)?,
            None => vec![0.5],
        };
        if s_values.is_empty() {
            return Err(Error::Config("partition.s is empty".into()));
        }
        let std = DomainPartition::standard(s_values[0]);
        let mut intervals = |key: &str, default: Vec<Interval>| -> Result<Vec<Interval>> {
            match t.get("partition", key) {
                Some(v) => parse_intervals(&format!("partition.{key}"), v),
                None => Ok(default),
            }
        };
        let omega = intervals("omega", std.omega)?;
        let sigma1 = intervals("sigma1", std.sigma1)?;
        let sigma2 = intervals("sigma2", std.sigma2)?;
        let mut partition = DomainPartition::new(omega, sigma1, sigma2, s_values[0]);
        for &s in &s_values {
            partition.s = s;
            partition = validate_partition(partition)?;
        }
        partition.s = s_values[0];

        let certificates: Vec<String> = match t.get("verify", "certificates") {
            Some(v) if v.trim() != "all" => v.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect(),
            _ => CERTIFICATES.iter().map(|c| c.to_string()).collect(),
        };
        if let Some(bad) = certificates.iter().find(|c| !CERTIFICATES.contains(&c.as_str())) {
            return Err(Error::Config(format!("unknown certificate {bad:?}")));
        }
        let runs = s_values.iter().map(|&s| SRun { s, certificates: certificates.clone() }).collect();

        let n_omega: Vec<usize> = match t.get("mesh", "n_omega") {
            Some(v) => parse_list("mesh.n_omega", v)?,
            None => vec![64, 128, 256],
        };
        let n_sigma2: Vec<usize> = match t.get("mesh", "n_sigma2") {
            Some(v) => parse_list("mesh.n_sigma2", v)?,
            None => n_omega.iter().map(|n| (n / 2).max(1)).collect(),
        };
        if n_omega.is_empty() || n_omega.len() != n_sigma2.len() {
            return Err(Error::Config("mesh.n_omega and mesh.n_sigma2 need the same nonzero length".into()));
        }
        let meshes: Vec<(usize, usize)> = n_omega.into_iter().zip(n_sigma2).collect();
        let grading = match t.get("mesh", "grading").map(str::trim) {
            None | Some("geometric") => {
                let ratio = t.or("mesh", "grading_ratio", 0.85)?;
                let layers = match t.get("mesh", "grading_layers") {
                    Some(v) => Some(parse("mesh.grading_layers", v)?),
                    None => None,
                };
                Grading::Geometric { ratio, layers }
            }
            Some("uniform") => Grading::Uniform,
            Some(other) => return Err(Error::Config(format!("mesh.grading: unknown value {other:?}"))),
        };

        let d = QuadSpec::default();
        let quad = QuadSpec {
            order: t.or("quadrature", "order", d.order)?,
            singular_order: t.or("quadrature", "singular_order", d.singular_order)?,
            near_ratio: t.or("quadrature", "near_ratio", d.near_ratio)?,
            graded_levels: t.or("quadrature", "graded_levels", d.graded_levels)?,
            max_depth: t.or("quadrature", "max_depth", d.max_depth)?,
        };
        let eigen_tol = t.or("solver", "eigen_tol", 1e-10)?;

        let seed: u64 = t.or("families", "seed", 20240601)?;
        let sources = FamilySpec {
            kind: match t.get("families", "source_kind") {
                Some(v) => parse_family_kind("families.source_kind", v)?,
                None => FamilyKind::RandomBumps,
            },
            count: t.or("families", "source_count", 20)?,
            seed: t.or("families", "source_seed", seed)?,
        };
        let initial_data = FamilySpec {
            kind: match t.get("families", "initial_kind") {
                Some(v) => parse_family_kind("families.initial_kind", v)?,
                None => FamilyKind::BumpsWithFloor,
            },
            count: t.or("families", "initial_count", 10)?,
            seed: t.or("families", "initial_seed", seed.wrapping_add(1))?,
        };

        let time_grid = match t.get("parabolic", "grid") {
            Some(v) => parse_list("parabolic.grid", v)?,
            None => PARABOLIC_GRID.to_vec(),
        };
        let stepper = match t.get("parabolic", "stepper").map(str::trim) {
            None | Some("implicit_euler") => Stepper::ImplicitEuler,
            Some("trapezoidal") => Stepper::Trapezoidal,
            Some(other) => return Err(Error::Config(format!("parabolic.stepper: unknown value {other:?}"))),
        };
        let mass = match t.get("parabolic", "mass").map(str::trim) {
            None | Some("lumped") => MassKind::Lumped,
            Some("consistent") => MassKind::Consistent,
            Some(other) => return Err(Error::Config(format!("parabolic.mass: unknown value {other:?}"))),
        };
        let parabolic = ParabolicSpec { dt_lambda: t.or("parabolic", "dt_lambda", 0.05)?, stepper, mass };
        let theta_runs = t.or("parabolic", "theta_runs", 3)?;
        let theta_j = match t.get("parabolic", "theta_j") {
            Some(v) => parse_list("parabolic.theta_j", v)?,
            None => vec![1, 2],
        };

        let sobolev_r = t.or("sobolev", "r", 1.0)?;
        let sobolev_r_ceiling = t.or("sobolev", "r_ceiling", 4.0)?;
        let linfty_p = match t.get("sobolev", "p") {
            Some(v) => Some(parse("sobolev.p", v)?),
            None => None,
        };
        let green_mesh = t.or("verify", "green_mesh", 16)?;
        let torsion_tol = t.or("verify", "torsion_tol", 0.05)?;
        let mut drift = BTreeMap::new();
        for (name, default) in [("lambda1", 0.10), ("elliptic_hopf", 0.25), ("eigen_comparison", 0.15), ("hardy", 0.25), ("weighted_sobolev", 0.25)] {
            drift.insert(name.to_string(), t.or("verify", &format!("drift_{name}"), default)?);
        }

        let window = match t.get("walker", "window") {
            Some(v) => {
                let ivs = parse_intervals("walker.window", v)?;
                match ivs.as_slice() {
                    [iv] if iv.is_bounded() && iv.lo < iv.hi => *iv,
                    _ => return Err(Error::Config("walker.window must be one bounded interval".into())),
                }
            }
            None => Interval { lo: -6.0, hi: 6.0 },
        };
        let walk = WalkSpec {
            window,
            n_bins: t.or("walker", "bins", 24)?,
            n_walkers: t.or("walker", "walkers", 100_000)?,
            seed: t.or("walker", "seed", seed.wrapping_add(2))?,
        };

        let source_value = t.or("problem", "source", 1.0)?;
        let payoff_left = t.or("problem", "payoff_left", 0.0)?;
        let payoff_right = t.or("problem", "payoff_right", 0.0)?;
        let out_dir = PathBuf::from(t.get("output", "dir").unwrap_or("out").trim());

        if let Some(k) = t.unknown() {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        if sources.count == 0 || initial_data.count == 0 {
            return Err(Error::Config("families need at least one member".into()));
        }
        Ok(Self {
            partition,
            runs,
            meshes,
            grading,
            quad,
            eigen_tol,
            sources,
            initial_data,
            time_grid,
            parabolic,
            theta_runs,
            theta_j,
            sobolev_r,
            sobolev_r_ceiling,
            linfty_p,
            green_mesh,
            walk,
            source_value,
            payoff_left,
            payoff_right,
            drift,
            torsion_tol,
            out_dir,
            digest,
        })
    }

    /// Replace every seed by `seed` and its offsets.
    pub fn override_seed(&mut self, seed: u64) {
        self.sources.seed = seed;
        self.initial_data.seed = seed.wrapping_add(1);
        self.walk.seed = seed.wrapping_add(2);
        self.digest = hex::encode(Sha256::digest(format!("{}\nseed={seed}", self.digest).as_bytes()));
    }

    /// The bundled experiment: every certificate at s = 0.25 and 0.75 on the
    /// standard geometry, plus the weighted Sobolev bound at s = 0.4.
    pub fn paper_suite(&mut self) {
        let all: Vec<String> = CERTIFICATES.iter().map(|c| c.to_string()).collect();
        self.partition = DomainPartition::standard(0.25);
        self.runs = vec![
            SRun { s: 0.25, certificates: all.clone() },
            SRun { s: 0.75, certificates: all },
            SRun { s: 0.4, certificates: vec!["weighted_sobolev".into()] },
        ];
        self.digest = hex::encode(Sha256::digest(format!("{}\nsuite=paper", self.digest).as_bytes()));
    }

    pub fn partition_for(&self, s: f64) -> DomainPartition {
        DomainPartition { s, ..self.partition.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_standard_experiment() {
        let c = RunConfig::default_config();
        assert_eq!(c.partition, DomainPartition::standard(0.5));
        assert_eq!(c.meshes, vec![(64, 32), (128, 64), (256, 128)]);
        assert_eq!(c.runs[0].certificates.len(), CERTIFICATES.len());
    }

    #[test]
    fn intervals_with_infinity() {
        let v = parse_intervals("k", " -inf:-1, 2:inf").unwrap();
        assert_eq!(v, vec![Interval { lo: f64::NEG_INFINITY, hi: -1.0 }, Interval { lo: 2.0, hi: f64::INFINITY }]);
        assert!(parse_intervals("k", "1-2").is_err());
    }

    #[test]
    fn digest_ignores_layout() {
        let a = RunConfig::from_str("[partition]\ns = 0.3\n[mesh]\nn_omega = 8\n").unwrap();
        let b = RunConfig::from_str("[mesh]\n n_omega =8\n\n[partition]\ns=0.3").unwrap();
        assert_eq!(a.digest, b.digest);
        let c = RunConfig::from_str("[partition]\ns = 0.31\n[mesh]\nn_omega = 8\n").unwrap();
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn errors_are_config_errors() {
        let overlap = RunConfig::from_str("[partition]\nomega = -1:1\nsigma2 = 0.5:2\n").unwrap_err();
        assert!(matches!(overlap, Error::Overlap(_)), "{overlap:?}");
        assert!(RunConfig::from_str("[mesh]\nbogus = 1\n").unwrap_err().is_config());
        assert!(RunConfig::from_str("[verify]\ncertificates = nope\n").unwrap_err().is_config());
    }
}
