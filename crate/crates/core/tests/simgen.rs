mod support;

use fusion_core::family::sigmoid;
use fusion_core::simgen::{
    draw_replicate, generate_setting1, generate_setting2, generate_setting2_with,
    generate_setting3, generate_setting3_with, subject_id, true_signal, Curve, SimOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use support::{basis_oracle, gauss5};

/// Covariate coefficients of subject `i`, drawn the way the generator
/// documents it: stream `(replicate << 40) | (0 << 32) | i`, `3 + N(0,1)`.
fn covariate_coefs(seed: u64, i: usize, replicate: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 40) | i as u64);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            3.0 + z
        })
        .collect::<Vec<f64>>()
}

fn spline_coefs(c: &Curve) -> &[f64] {
    match c {
        Curve::Spline { coefs, .. } => coefs,
        other => panic!("expected a spline, got {other:?}"),
    }
}

#[test]
fn fixed_seed_is_reproducible() {
    let (a, ta) = generate_setting1(40, 1.0, 7).unwrap();
    let (b, tb) = generate_setting1(40, 1.0, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(
        generate_setting2(10, 3).unwrap(),
        generate_setting2(10, 3).unwrap()
    );
    assert_eq!(
        generate_setting3(10, 1.0, 3).unwrap(),
        generate_setting3(10, 1.0, 3).unwrap()
    );
    let (c, _) = generate_setting1(40, 1.0, 8).unwrap();
    assert_ne!(a.y(), c.y());
}

#[test]
fn subjects_do_not_depend_on_sample_size() {
    let (small, _) = generate_setting2(10, 4).unwrap();
    let (large, _) = generate_setting2(40, 4).unwrap();
    // the first half of the small sample are sin subjects, as are the first 20 of the large one
    for i in 0..5 {
        assert_eq!(small.curve(i, 0), large.curve(i, 0));
        assert_eq!(small.y()[i], large.y()[i]);
    }
    assert_eq!(small.subject_ids()[0], subject_id(0));
    assert_eq!(subject_id(0), "s00001");
}

#[test]
fn block_coefficients_without_noise() {
    let (_, truth) = generate_setting1(8, 0.0, 1).unwrap();
    assert_eq!(truth.labels[0], vec![0, 0, 1, 1, 2, 2, 3, 3]);
    for (i, want) in [20.0, 20.0, 6.0, 6.0, -10.0, -10.0, -40.0, -40.0]
        .into_iter()
        .enumerate()
    {
        let c = spline_coefs(&truth.beta[i]);
        assert_eq!(c.len(), 35);
        assert!(c.iter().all(|&v| v == want));
    }
    assert_eq!(truth.beta[0], truth.beta[1]);
}

#[test]
fn block_means_with_noise() {
    let (_, truth) = generate_setting1(400, 1.0, 2).unwrap();
    for (g, centre) in [20.0, 6.0, -10.0, -40.0].into_iter().enumerate() {
        let members: Vec<usize> = (0..400).filter(|&i| truth.labels[0][i] == g).collect();
        let all: Vec<f64> = members
            .iter()
            .flat_map(|&i| spline_coefs(&truth.beta[i]).to_vec())
            .collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let sd =
            (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64).sqrt();
        // 3500 draws per block: the mean is within 4 standard errors
        assert!(
            (mean - centre).abs() < 4.0 / (all.len() as f64).sqrt(),
            "block {g}: {mean}"
        );
        assert!((sd - 1.0).abs() < 0.05, "block {g}: sd {sd}");
    }
}

#[test]
fn setting2_labels_sin_then_cos() {
    let (_, truth) = generate_setting2(10, 5).unwrap();
    assert_eq!(truth.beta[4], Curve::Sin);
    assert_eq!(truth.beta[5], Curve::Cos);
    assert_eq!(truth.labels[0], vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
}

#[test]
fn setting2_signal_matches_dense_quadrature() {
    let opts = SimOptions {
        noise_sd: 0.0,
        ..SimOptions::default()
    };
    let (ds, truth) = generate_setting2_with(6, 11, &opts).unwrap();
    let x_basis = truth.x_basis().unwrap();
    let signal = true_signal(&truth, 0).unwrap();
    for i in 0..6 {
        let v = covariate_coefs(11, i, 0, 26);
        let x = |t: f64| {
            basis_oracle(&x_basis, t)
                .iter()
                .zip(&v)
                .map(|(b, c)| b * c)
                .sum::<f64>()
        };
        // the stored hourly values are the smooth covariate
        for (k, &stored) in ds.curve(i, 0).iter().enumerate() {
            assert!((stored - x(k as f64)).abs() < 1e-10);
        }
        let beta = |t: f64| if i < 3 { t.sin() } else { t.cos() };
        let pieces = 2300;
        let want: f64 = (0..pieces)
            .map(|s| {
                gauss5(
                    |t| x(t) * beta(t),
                    23.0 * s as f64 / pieces as f64,
                    23.0 * (s + 1) as f64 / pieces as f64,
                )
            })
            .sum();
        assert!(
            (signal[i] - want).abs() < 1e-6,
            "subject {i}: {} vs {want}",
            signal[i]
        );
        assert_eq!(ds.y()[i], signal[i]);
    }
}

#[test]
fn replicates_redraw_covariates_for_the_same_subjects() {
    let (_, truth) = generate_setting1(8, 1.0, 3).unwrap();
    let r0 = draw_replicate(&truth, 0).unwrap();
    let r1 = draw_replicate(&truth, 1).unwrap();
    assert_eq!(r0.subject_ids(), r1.subject_ids());
    assert_ne!(r0.curve(0, 0), r1.curve(0, 0));
    assert_eq!(r0, generate_setting1(8, 1.0, 3).unwrap().0);
}

#[test]
fn setting3_outcome_rate_matches_the_model() {
    let (ds, truth) = generate_setting3(10_000, 1.0, 13).unwrap();
    assert!(ds.y().iter().all(|&y| y == 0.0 || y == 1.0));
    let signal = true_signal(&truth, 0).unwrap();
    let expected = signal
        .iter()
        .map(|&s| sigmoid(truth.alpha_true + s))
        .sum::<f64>()
        / 10_000.0;
    let observed = ds.y().iter().sum::<f64>() / 10_000.0;
    assert!(
        (observed - expected).abs() < 0.02,
        "{observed} vs {expected}"
    );
}

#[test]
fn setting3_zero_signal_is_a_fair_coin() {
    // β ≡ 0 through a zero centre is not a design option; a zero intercept and
    // zero signal must give probability one half
    assert_eq!(sigmoid(0.0), 0.5);
    let opts = SimOptions {
        alpha: 0.0,
        ..SimOptions::default()
    };
    let (_, truth) = generate_setting3_with(4, 0.0, 1, &opts).unwrap();
    assert_eq!(truth.alpha_true, 0.0);
    assert!(spline_coefs(&truth.beta[0]).iter().all(|&c| c == 3.0));
    assert!(spline_coefs(&truth.beta[3]).iter().all(|&c| c == -3.0));
}

#[test]
fn rejects_sizes_that_do_not_split_evenly() {
    assert!(generate_setting1(10, 1.0, 0).is_err());
    assert!(generate_setting2(9, 0).is_err());
    assert!(generate_setting3(0, 1.0, 0).is_err());
    assert!(generate_setting1(8, -1.0, 0).is_err());
}
