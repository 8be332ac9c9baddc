use std::process::ExitCode;

use clap::Parser;
use mixfrac::cli::{exit_code, run, Cli, Suite};
use mixfrac::config::RunConfig;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default_config()),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(Suite::Paper) = cli.suite {
        cfg.paper_suite();
    }
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match run(cli.command, &cfg) {
        Ok(report) => {
            for c in &report.certificates {
                println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
            }
            for r in &report.results {
                let vals: Vec<String> = r.values.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
                println!("{} {}", r.label, vals.join(" "));
            }
            for s in &report.skipped {
                println!("SKIP {s}");
            }
            println!("report: {}", cfg.out_dir.join("report.json").display());
            if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
