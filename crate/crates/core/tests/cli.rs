//! The binary: exit statuses, CSV contracts and reproducibility.

use std::path::Path;
use std::process::Command;

fn mixfrac(args: &[&str], config: &str, dir: &Path) -> std::process::Output {
    let cfg = dir.join("run.ini");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mixfrac"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

const SMALL: &str = "[mesh]\nn_omega = 16, 32\n[walker]\nwalkers = 4000\n[verify]\ngreen_mesh = 8\n";

#[test]
fn malformed_partition_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixfrac(&["verify"], "[partition]\nomega = -1:1\nsigma2 = 0.5:2\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap error"));
    let out = mixfrac(&["solve"], "[partition]\nomega = -1:one\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_emits_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixfrac(&["solve"], "[mesh]\nn_omega = 16\nn_sigma2 = 6\n", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("out/fields/solution_s0.5_n16.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,value"));
    assert_eq!(lines.count(), 16 + 6 + 1);
}

#[test]
fn verify_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixfrac(&["verify"], SMALL, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["certificates"].as_array().unwrap().len() > 20);
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);

    let again = tempfile::tempdir().unwrap();
    mixfrac(&["verify"], SMALL, again.path());
    assert_eq!(summary, std::fs::read_to_string(again.path().join("out/summary.csv")).unwrap());
    let f = "out/fields/xi0_s0.5_n32.csv";
    assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
}

#[test]
fn eigen_parabolic_and_walk_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["eigen", "parabolic", "walk"] {
        let out = mixfrac(&[cmd], SMALL, dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let traj = std::fs::read_to_string(dir.path().join("out/fields/trajectory_s0.5_n16.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("x,value,t"));
}

#[test]
fn readme_example_config_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```ini\n").unwrap() + 7;
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let cfg = mixfrac::config::RunConfig::from_str(block).unwrap();
    assert_eq!(cfg.meshes, vec![(64, 32), (128, 64), (256, 128)]);
    assert_eq!(cfg.linfty_p, Some(5.0));
    assert_eq!(cfg.partition, mixfrac::domain::DomainPartition::standard(0.5));
}
