use fusion_core::bspline::BasisSpec;
use fusion_core::metrics::{
    auc, ise, multiday_roc, multiday_rpmse, omr, rmse, roc_suite, rpmse, smr, DayPooling,
};
use fusion_core::simgen::Curve;
use proptest::prelude::*;

#[test]
fn rpmse_examples() {
    assert_eq!(rpmse(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 0.0);
    assert_eq!(rpmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
    let v = rpmse(&[1.0, 2.0, 2.0], &[1.0, 2.0, 4.0]).unwrap();
    assert!((v - (4.0f64 / 3.0).sqrt() / 3.0f64.sqrt()).abs() < 1e-15);
    assert!((v - 0.6667).abs() < 5e-5);
    assert!(rpmse(&[0.0, 0.0], &[1.0, 1.0]).is_err());
}

#[test]
fn ise_examples() {
    let basis = BasisSpec::with_dimension(0.0, 23.0, 3, 10).unwrap();
    let beta = Curve::Spline {
        basis,
        coefs: (0..10).map(|k| k as f64 - 4.0).collect(),
    };
    let zero = Curve::Spline {
        basis,
        coefs: vec![0.0; 10],
    };
    assert_eq!(
        ise(
            std::slice::from_ref(&beta),
            std::slice::from_ref(&beta),
            (0.0, 23.0)
        )
        .unwrap(),
        0.0
    );
    assert!((ise(&[zero], &[beta], (0.0, 23.0)).unwrap() - 1.0).abs() < 1e-15);
    // ∫(cos - sin)² = T - (1 - cos 2T)/2 and ∫sin² = T/2 - sin(2T)/4
    let t: f64 = 23.0;
    let cos_minus_sin_sq = t - (1.0 - (2.0 * t).cos()) / 2.0;
    let sin_sq = t / 2.0 - (2.0 * t).sin() / 4.0;
    let want = (cos_minus_sin_sq / sin_sq).sqrt();
    let got = ise(&[Curve::Cos], &[Curve::Sin], (0.0, 23.0)).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn smr_examples() {
    assert_eq!(smr(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.0);
    assert_eq!(smr(&[5, 5, 2, 2, 9], &[0, 0, 1, 1, 2]).unwrap(), 0.0);
    assert_eq!(smr(&[1, 2, 2, 2], &[1, 1, 2, 2]).unwrap(), 0.25);
    // more estimated groups than true ones: the extra group's members are errors
    assert_eq!(smr(&[0, 1, 2, 2], &[0, 0, 1, 1]).unwrap(), 0.25);
}

#[test]
fn omr_examples() {
    assert_eq!(omr(&[1.0, 0.0], &[1.0, 0.0], 0.5).unwrap(), 0.0);
    assert_eq!(omr(&[1.0, 0.0, 0.0, 1.0], &[0.5; 4], 0.5).unwrap(), 0.5);
    assert!((omr(&[1.0, 0.0, 1.0], &[0.9, 0.6, 0.2], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn roc_examples() {
    assert_eq!(auc(&[1.0, 1.0, 0.0], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
    assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &[0.3; 4]).unwrap(), 0.5);
    assert_eq!(
        auc(&[1.0, 1.0, 0.0, 0.0], &[0.9, 0.4, 0.6, 0.1]).unwrap(),
        0.75
    );
    assert!(auc(&[1.0, 1.0], &[0.2, 0.3]).is_err());
    let r = roc_suite(&[1.0, 1.0, 0.0, 0.0], &[0.9, 0.4, 0.6, 0.1]).unwrap();
    assert_eq!((r.fnr, r.fpr, r.auc), (Some(0.5), Some(0.5), 0.75));
    let one = roc_suite(&[1.0, 1.0], &[0.9, 0.1]);
    assert!(one.is_err() || one.unwrap().fpr.is_none());
    let days = multiday_roc(
        &[vec![1.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]],
        &[vec![0.9, 0.1], vec![0.9, 0.4, 0.6, 0.1]],
    )
    .unwrap();
    assert_eq!(days.auc, 0.875);
    assert_eq!(days.fnr, Some(0.25));
}

#[test]
fn multiday_examples() {
    let y = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
    assert_eq!(
        multiday_rpmse(&y, &y, DayPooling::MeanOfRoots).unwrap(),
        0.0
    );
    let yhat = vec![vec![0.0, 3.0], vec![4.0, -1.0]];
    // per-day RMSE 1 and 3
    assert_eq!(
        multiday_rpmse(&y, &yhat, DayPooling::MeanOfRoots).unwrap(),
        2.0
    );
    assert!(
        (multiday_rpmse(&y, &yhat, DayPooling::RootOfMean).unwrap() - 5f64.sqrt()).abs() < 1e-15
    );
    let one = vec![vec![0.0, 3.0]];
    let same = multiday_rpmse(
        &[y[0].clone(), y[0].clone()],
        &[one[0].clone(), one[0].clone()],
        DayPooling::MeanOfRoots,
    )
    .unwrap();
    assert_eq!(same, rmse(&y[0], &one[0]).unwrap());
    assert!(multiday_rpmse(&y, &one, DayPooling::MeanOfRoots).is_err());
}

proptest! {
    #[test]
    fn smr_ignores_relabeling(labels in proptest::collection::vec(0usize..4, 1..40), shift in 1usize..7) {
        let truth: Vec<usize> = (0..labels.len()).map(|i| i % 3).collect();
        let relabeled: Vec<usize> = labels.iter().map(|l| (l + shift) * 11).collect();
        let truth_relabeled: Vec<usize> = truth.iter().map(|l| 2 - l).collect();
        let base = smr(&labels, &truth).unwrap();
        prop_assert_eq!(base, smr(&relabeled, &truth).unwrap());
        prop_assert_eq!(base, smr(&labels, &truth_relabeled).unwrap());
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn rpmse_is_scale_free(y in proptest::collection::vec(0.5f64..10.0, 1..30), noise in proptest::collection::vec(-1.0f64..1.0, 30), c in 0.1f64..100.0) {
        let yhat: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let (ys, yhs): (Vec<f64>, Vec<f64>) = y.iter().zip(&yhat).map(|(a, b)| (a * c, b * c)).unzip();
        let a = rpmse(&y, &yhat).unwrap();
        let b = rpmse(&ys, &yhs).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn auc_ignores_monotone_transforms(scores in proptest::collection::vec(0.0f64..1.0, 4..40)) {
        let y: Vec<f64> = (0..scores.len()).map(|i| (i % 2) as f64).collect();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&y, &scores).unwrap(), auc(&y, &warped).unwrap());
    }
}
