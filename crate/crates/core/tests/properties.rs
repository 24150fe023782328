mod support;

use fusion_core::bspline::{eval_basis, eval_spline};
use fusion_core::{compute_gamma, fused_objective, BasisSpec, CoefficientSet, Family};
use proptest::prelude::*;
use support::{basis_oracle, random_dataset};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_is_a_partition_of_unity(degree in 1usize..=5, spans in 1usize..=40, u in 0.0f64..=1.0) {
        let spec = BasisSpec::new(0.0, 23.0, degree, spans).unwrap();
        let t = 23.0 * u;
        let b = eval_basis(&spec, t).unwrap();
        prop_assert_eq!(b.len(), spans + degree);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|&v| v >= 0.0));
        for (g, w) in b.iter().zip(basis_oracle(&spec, t)) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_of_constant_coefficients_is_constant(c in -50.0f64..50.0, u in 0.0f64..=1.0) {
        let spec = BasisSpec::with_dimension(0.0, 23.0, 3, 35).unwrap();
        let v = eval_spline(&spec, &[c; 35], 23.0 * u).unwrap();
        prop_assert!((v - c).abs() < 1e-10 * c.abs().max(1.0));
    }

    #[test]
    fn objective_ignores_unit_labels(seed in 0u64..1000, shift in 1usize..4) {
        let ds = random_dataset(8, Family::Gaussian, seed);
        let basis = BasisSpec::with_dimension(0.0, 23.0, 3, 6).unwrap();
        let cache = compute_gamma(&ds, &basis).unwrap();
        let units = 4;
        let values: Vec<f64> = (0..units * 6).map(|k| ((k as u64 * 7919 + seed) % 13) as f64 / 13.0 - 0.5).collect();
        let coefs = CoefficientSet::from_shared(units, 1, 6, 0.3, values.clone()).unwrap();
        let unit_of: Vec<usize> = (0..8).map(|i| i % units).collect();
        // relabel unit u as (u + shift) mod units
        let mut moved = vec![0.0; values.len()];
        for u in 0..units {
            let v = (u + shift) % units;
            moved[v * 6..(v + 1) * 6].copy_from_slice(&values[u * 6..(u + 1) * 6]);
        }
        let relabeled = CoefficientSet::from_shared(units, 1, 6, 0.3, moved).unwrap();
        let unit_of2: Vec<usize> = unit_of.iter().map(|u| (u + shift) % units).collect();
        let a = fused_objective(&coefs, &ds, &cache, &unit_of, 0.4, 0.2).unwrap();
        let b = fused_objective(&relabeled, &ds, &cache, &unit_of2, 0.4, 0.2).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn bernoulli_loss_is_convex(y in 0u8..=1, eta in -30.0f64..30.0) {
        let (_, h) = Family::Bernoulli.grad_hess(f64::from(y), eta).unwrap();
        prop_assert!(h > 0.0);
        let f = |e: f64| Family::Bernoulli.nll(f64::from(y), e).unwrap();
        prop_assert!(f(eta) <= 0.5 * (f(eta - 0.5) + f(eta + 0.5)) + 1e-12);
    }
}
