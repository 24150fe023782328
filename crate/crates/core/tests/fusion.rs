mod support;

use fusion_core::baselines::fit_sflm;
use fusion_core::fusionfit::{
    extract_subgroups, fused_objective_surrogate, FusionGraph, Splitting,
};
use fusion_core::linalg::dot;
use fusion_core::model::Partition;
use fusion_core::tuner::{tune, Criterion, GridSpec};
use fusion_core::{
    compute_gamma, fit_fused, fused_objective, lambda_max, BasisSpec, CoefficientSet, DesignCache,
    Family, FitResult, FunctionalDataset, PenaltyConfig, PreclusterResult, Units,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{objective_oracle, random_dataset};

fn design(ds: &FunctionalDataset, l: usize) -> DesignCache {
    compute_gamma(ds, &BasisSpec::with_dimension(0.0, 23.0, 3, l).unwrap()).unwrap()
}

fn tight(lambda: f64, phi: f64) -> PenaltyConfig {
    let mut c = PenaltyConfig::new(lambda, phi);
    c.rho = 0.05;
    c.adaptive_rho = true;
    c.relaxation = 1.6;
    c.tol_primal = 1e-9;
    c.tol_dual = 1e-9;
    c.max_iters = 200_000;
    c
}

/// Subgroups of a fit as sets of subject ids.
fn id_groups(fit: &FitResult) -> Vec<Vec<String>> {
    let labels = fit.subject_labels(0);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); k];
    for (id, &g) in fit.subject_ids.iter().zip(&labels) {
        groups[g].push(id.clone());
    }
    for g in &mut groups {
        g.sort();
    }
    groups.sort();
    groups
}

fn hand_precluster(assignment: Vec<usize>, k: usize, l: usize) -> PreclusterResult {
    PreclusterResult {
        k,
        assignment,
        group_coefs: CoefficientSet::zeros(k, 1, l, 0.0),
        sse_trajectory: Vec::new(),
        objective_trajectory: Vec::new(),
        iterations: 0,
        converged: true,
        restart: 0,
        seed: 0,
    }
}

#[test]
fn objective_at_zero_is_half_the_variance() {
    let ds = random_dataset(20, Family::Gaussian, 1);
    let cache = design(&ds, 8);
    let ybar = ds.y().iter().sum::<f64>() / 20.0;
    let coefs = CoefficientSet::zeros(20, 1, 8, ybar);
    let unit_of: Vec<usize> = (0..20).collect();
    let got = fused_objective(&coefs, &ds, &cache, &unit_of, 3.0, 2.0).unwrap();
    let want = ds.y().iter().map(|y| (y - ybar) * (y - ybar)).sum::<f64>() / 40.0;
    assert!((got - want).abs() < 1e-14);
}

#[test]
fn identical_units_carry_no_fusion_cost() {
    let ds = random_dataset(4, Family::Gaussian, 2);
    let cache = design(&ds, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shared: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coefs =
        CoefficientSet::from_shared(2, 1, 6, 0.1, [shared.clone(), shared].concat()).unwrap();
    let unit_of = [0, 0, 1, 1];
    let a = fused_objective(&coefs, &ds, &cache, &unit_of, 0.0, 0.5).unwrap();
    let b = fused_objective(&coefs, &ds, &cache, &unit_of, 7.0, 0.5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn objective_matches_the_dense_oracle() {
    for (seed, l, family) in [
        (3, 4, Family::Gaussian),
        (4, 6, Family::Bernoulli),
        (5, 7, Family::Gaussian),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(9, family, seed);
        let basis = BasisSpec::with_dimension(0.0, 23.0, 3, l).unwrap();
        let cache = compute_gamma(&ds, &basis).unwrap();
        let units = 3;
        let values: Vec<f64> = (0..units * l)
            .map(|_| rng.random_range(-0.3..0.3))
            .collect();
        let coefs = CoefficientSet::from_shared(units, 1, l, 0.2, values).unwrap();
        let unit_of: Vec<usize> = (0..9).map(|i| i % units).collect();
        let eta: Vec<f64> = (0..9)
            .map(|i| 0.2 + dot(cache.gamma(i, 0), coefs.coef(unit_of[i], 0)))
            .collect();
        let (lambda, phi) = (0.7, 1.3);
        let got = fused_objective(&coefs, &ds, &cache, &unit_of, lambda, phi).unwrap();
        let want = objective_oracle(&basis, &coefs, &ds, &eta, lambda, phi);
        assert!((got - want).abs() < 1e-8, "L={l}: {got} vs {want}");
    }
}

#[test]
fn full_fusion_equals_the_homogeneous_fit() {
    let ds = random_dataset(30, Family::Gaussian, 6);
    let cache = design(&ds, 8);
    let phi = 0.1;
    let sflm = fit_sflm(&ds, &cache, phi).unwrap();
    let mut lambda = lambda_max(&ds, &cache, Units::Subjects, phi, 1e-8).unwrap();
    let fit = loop {
        let fit = fit_fused(&ds, &cache, Units::Subjects, &tight(lambda, phi)).unwrap();
        if fit.subgroup_counts() == [1] {
            break fit;
        }
        lambda *= 2.0;
    };
    assert!((fit.alpha_hat - sflm.alpha_hat).abs() < 1e-8);
    for u in 0..30 {
        for (a, b) in fit.coefs.coef(u, 0).iter().zip(sflm.coefs.coef(0, 0)) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn lambda_max_is_where_everything_fuses() {
    for family in [Family::Gaussian, Family::Bernoulli] {
        let ds = random_dataset(16, family, 7);
        let cache = design(&ds, 6);
        let lmax = lambda_max(&ds, &cache, Units::Subjects, 0.05, 1e-8).unwrap();
        assert!(lmax > 0.0);
        let above = fit_fused(&ds, &cache, Units::Subjects, &tight(1.02 * lmax, 0.05)).unwrap();
        assert_eq!(above.subgroup_counts(), vec![1], "{family:?}");
        let below = fit_fused(&ds, &cache, Units::Subjects, &tight(0.3 * lmax, 0.05)).unwrap();
        assert!(below.subgroup_counts()[0] > 1, "{family:?}");
    }
}

#[test]
fn unpenalized_group_fit_matches_normal_equations() {
    let ds = random_dataset(40, Family::Gaussian, 8);
    let l = 6;
    let cache = design(&ds, l);
    let assignment: Vec<usize> = (0..40)
        .map(|i| usize::from(i % 3 == 0 || i >= 30))
        .collect();
    let pre = hand_precluster(assignment.clone(), 2, l);
    let mut config = tight(0.0, 0.0);
    config.ridge = 0.0;
    let fit = fit_fused(&ds, &cache, Units::Groups(&pre), &config).unwrap();

    let cols = 1 + 2 * l;
    let mut x = DMatrix::<f64>::zeros(40, cols);
    for i in 0..40 {
        x[(i, 0)] = 1.0;
        for k in 0..l {
            x[(i, 1 + assignment[i] * l + k)] = cache.gamma(i, 0)[k];
        }
    }
    let y = DVector::from_column_slice(ds.y());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let sol = xtx.lu().solve(&xty).unwrap();
    let scale = sol.amax();
    assert!((fit.alpha_hat - sol[0]).abs() < 1e-8 * scale.max(1.0));
    for g in 0..2 {
        for k in 0..l {
            let got = fit.coefs.coef(g, 0)[k];
            let want = sol[1 + g * l + k];
            assert!(
                (got - want).abs() < 1e-8 * scale.max(1.0),
                "group {g}, {k}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn both_splittings_reach_the_same_optimum() {
    let ds = random_dataset(10, Family::Gaussian, 9);
    let cache = design(&ds, 6);
    let lmax = lambda_max(&ds, &cache, Units::Subjects, 0.1, 1e-8).unwrap();
    let mut objectives = Vec::new();
    let mut partitions = Vec::new();
    for splitting in [Splitting::PerUnit, Splitting::Pairwise] {
        let mut c = tight(0.2 * lmax, 0.1);
        c.splitting = splitting;
        c.refit = false;
        let fit = fit_fused(&ds, &cache, Units::Subjects, &c).unwrap();
        assert!(fit.diagnostics.converged, "{splitting:?}");
        objectives.push(
            fused_objective_surrogate(&fit.coefs, &ds, &cache, &fit.unit_of, c.lambda, c.phi)
                .unwrap(),
        );
        partitions.push(fit.partitions.clone());
    }
    assert!(
        (objectives[0] - objectives[1]).abs() <= 1e-6 * objectives[0].abs(),
        "{objectives:?}"
    );
    assert_eq!(partitions[0], partitions[1]);
}

#[test]
fn subgroups_do_not_depend_on_subject_order() {
    let ds = random_dataset(14, Family::Gaussian, 10);
    let cache = design(&ds, 6);
    let lmax = lambda_max(&ds, &cache, Units::Subjects, 0.1, 1e-8).unwrap();
    let c = tight(0.15 * lmax, 0.1);
    let fit = fit_fused(&ds, &cache, Units::Subjects, &c).unwrap();
    let perm: Vec<usize> = (0..14).map(|i| (i * 5 + 3) % 14).collect();
    let shuffled = ds.select(&perm).unwrap();
    let cache2 = design(&shuffled, 6);
    let fit2 = fit_fused(&shuffled, &cache2, Units::Subjects, &c).unwrap();
    assert!(fit.subgroup_counts()[0] > 1 && fit.subgroup_counts()[0] < 14);
    assert_eq!(id_groups(&fit), id_groups(&fit2));
}

#[test]
fn degrees_of_freedom_shrink_along_the_path() {
    let ds = random_dataset(24, Family::Gaussian, 11);
    let cache = design(&ds, 6);
    let base = tight(0.0, 0.0);
    let grid = GridSpec::relative(0.0, 3.0, 10, vec![0.1]);
    let r = tune(
        &ds,
        &cache,
        Units::Subjects,
        &grid,
        Criterion::Bic { c: 1.0 },
        &base,
        None,
    )
    .unwrap();
    // the path runs from the largest λ down
    let dfs: Vec<usize> = r.path.iter().map(|p| p.df).collect();
    assert!(dfs.windows(2).all(|w| w[0] <= w[1]), "{dfs:?}");
    assert_eq!(dfs[0], 7);
}

#[test]
fn one_point_grid_returns_that_point() {
    let ds = random_dataset(12, Family::Gaussian, 12);
    let cache = design(&ds, 6);
    let grid = GridSpec {
        lambdas: vec![0.01],
        phis: vec![0.5],
        relative: false,
    };
    let r = tune(
        &ds,
        &cache,
        Units::Subjects,
        &grid,
        Criterion::default(),
        &PenaltyConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!((r.config.lambda, r.config.phi), (0.01, 0.5));
    assert_eq!(r.path.len(), 1);
    let empty = GridSpec {
        lambdas: vec![],
        phis: vec![0.5],
        relative: false,
    };
    assert!(tune(
        &ds,
        &cache,
        Units::Subjects,
        &empty,
        Criterion::default(),
        &PenaltyConfig::default(),
        None
    )
    .is_err());
}

#[test]
fn prediction_identities() {
    let ds = random_dataset(12, Family::Bernoulli, 13);
    let cache = design(&ds, 6);
    let fit = fit_fused(&ds, &cache, Units::Subjects, &tight(1e-3, 0.1)).unwrap();
    let fitted = fit.coefs.linear_predictor(&cache, &fit.unit_of).unwrap();
    let pred = fit.predict(&ds, &cache).unwrap();
    assert_eq!(pred.eta, fitted);
    assert!(pred
        .mean
        .iter()
        .zip(&pred.eta)
        .all(|(m, e)| (m - 1.0 / (1.0 + (-e).exp())).abs() < 1e-15));

    let mut zero = fit.clone();
    zero.coefs.values.iter_mut().for_each(|v| *v = 0.0);
    let p = zero.predict(&ds, &cache).unwrap();
    let alpha = zero.coefs.intercept(0);
    assert!(p.eta.iter().all(|&e| e == alpha));
    let unknown = random_dataset(3, Family::Bernoulli, 14)
        .with_outcomes(vec![0.0, 1.0, 0.0])
        .unwrap();
    let renamed = FunctionalDataset::new(
        1,
        23.0,
        unknown.grid().to_vec(),
        unknown.raw_values().to_vec(),
        unknown.y().to_vec(),
        Family::Bernoulli,
        vec!["x1".into(), "x2".into(), "x3".into()],
    )
    .unwrap();
    let cache3 = design(&renamed, 6);
    assert!(fit.predict(&renamed, &cache3).is_err());
}

#[test]
fn union_find_over_zero_pairs() {
    let mut g = FusionGraph::zeros(4, 1, 3);
    assert_eq!(extract_subgroups(&g), vec![Partition::single(4)]);
    g.node_values.iter_mut().for_each(|v| *v = 1.0);
    assert_eq!(extract_subgroups(&g), vec![Partition::singletons(4)]);
    for (k, &(a, b, _)) in g.pairs.clone().iter().enumerate() {
        if (a, b) == (0, 1) || (a, b) == (1, 2) {
            g.node_values[k * 3..(k + 1) * 3]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    let parts = extract_subgroups(&g);
    assert_eq!(parts[0].groups, vec![vec![0, 1, 2], vec![3]]);
}

#[test]
fn fused_units_share_identical_coefficients() {
    let ds = random_dataset(16, Family::Gaussian, 15);
    let cache = design(&ds, 6);
    let lmax = lambda_max(&ds, &cache, Units::Subjects, 0.1, 1e-8).unwrap();
    for refit in [true, false] {
        let mut c = tight(0.1 * lmax, 0.1);
        c.refit = refit;
        let fit = fit_fused(&ds, &cache, Units::Subjects, &c).unwrap();
        for group in &fit.partitions[0].groups {
            for &u in &group[1..] {
                assert_eq!(fit.coefs.coef(u, 0), fit.coefs.coef(group[0], 0));
            }
        }
        assert!(fit.diagnostics.objective_final <= fit.diagnostics.objective_initial);
    }
}
