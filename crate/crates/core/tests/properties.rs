//! Randomized invariants.

use std::sync::Arc;

use mixfrac::assembly::{assemble_stiffness, Payoff};
use mixfrac::config::RunConfig;
use mixfrac::domain::{build_mesh, DomainPartition, Grading, Interval};
use mixfrac::kernel::KernelParams;
use mixfrac::quadrature::QuadSpec;
use mixfrac::verify::{FamilyKind, FunctionFamily};
use mixfrac::walker::build_chain;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_is_symmetric_and_decreasing(s in 0.05f64..0.95, x in -5.0f64..5.0, d in 0.01f64..3.0) {
        let k = KernelParams::new(s).unwrap();
        let a = k.eval(x, x + d).unwrap();
        prop_assert_eq!(a, k.eval(x + d, x).unwrap());
        prop_assert!(a > k.eval(x, x + 2.0 * d).unwrap());
    }

    #[test]
    fn families_vanish_off_omega(seed in any::<u64>(), x in -4.0f64..4.0) {
        let p = DomainPartition::standard(0.5);
        let fam = FunctionFamily::generate(FamilyKind::BumpsWithFloor, 5, seed, &p.omega).unwrap();
        for m in &fam.members {
            let v = m.eval(x);
            prop_assert!(v >= 0.0);
            if x.abs() > 1.0 {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v >= m.floor);
            }
        }
    }

    #[test]
    fn chain_rows_are_stochastic(s in 0.1f64..0.9, n in 4usize..12) {
        let p = DomainPartition::standard(s);
        let mesh = Arc::new(build_mesh(&p, n, (n / 2).max(1), Grading::default()).unwrap());
        let chain = build_chain(mesh, &KernelParams::new(s).unwrap(), Some(Interval { lo: -3.0, hi: 4.0 }), 5).unwrap();
        for row in &chain.rows {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn constant_payoff_lift_is_constant(s in 0.15f64..0.85, c in -3.0f64..3.0) {
        let p = DomainPartition::standard(s);
        let mesh = Arc::new(build_mesh(&p, 8, 4, Grading::default()).unwrap());
        let ops = assemble_stiffness(mesh.clone(), KernelParams::new(s).unwrap(), QuadSpec::default()).unwrap();
        let zero = mixfrac::assembly::LoadVector { values: nalgebra::DVector::zeros(mesh.n_nodes()), source: "0".into() };
        let u = mixfrac::solve::solve_with_payoff(&ops, &zero, &Payoff::constant(c)).unwrap();
        prop_assert!(u.values().iter().all(|v| (v - c).abs() < 1e-8 * c.abs().max(1.0)));
    }

    #[test]
    fn config_digest_ignores_key_order(s in 0.1f64..0.9, n in 4usize..64) {
        let a = RunConfig::from_str(&format!("[partition]\ns = {s}\nomega = -1:1\n[mesh]\nn_omega = {n}\n")).unwrap();
        let b = RunConfig::from_str(&format!("[mesh]\nn_omega={n}\n[partition]\nomega=-1:1\ns={s}\n")).unwrap();
        prop_assert_eq!(a.digest, b.digest);
    }
}
