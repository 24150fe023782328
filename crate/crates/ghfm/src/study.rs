//! Simulation study: one replicate fits the fused model and every baseline on
//! a simulated training sample and scores them on fresh observations of the
//! same subjects.
//!
//! Replicate 0 of the simulated population is the training sample,
//! replicate 2 the validation sample used to pick `(λ, φ)`, and replicate 1
//! the test sample every reported number comes from.

use fusion_core::baselines::{fit_lm_glm, fit_resp, fit_sflm};
use fusion_core::fusionfit::Splitting;
use fusion_core::metrics::{ise, omr, rpmse, smr};
use fusion_core::simgen::{
    draw_replicate, generate_setting1_with, generate_setting2_with, generate_setting3_with, Curve,
    SimOptions, SyntheticTruth,
};
use fusion_core::tuner::{tune, Criterion, GridSpec, TuneResult, Validation};
use fusion_core::{
    compute_gamma, precluster, BasisSpec, DesignCache, Family, FitResult, FunctionalDataset,
    PenaltyConfig, PreclusterOptions, PreclusterResult, Units,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN: u64 = 0;
pub const TEST: u64 = 1;
pub const VALIDATION: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub setting: u8,
    pub n: usize,
    pub sigma_prime: f64,
    pub seed: u64,
    pub sim: SimOptions,
    /// Dimension and degree of the fitting basis.
    pub basis_dim: usize,
    pub degree: usize,
    /// Pre-clustering groups; `None` fuses subjects directly.
    pub preclusters: Option<usize>,
    pub restarts: usize,
    pub phis: Vec<f64>,
    /// `λ` grid as multiples of the fusing `λ`: `10^{-hi}..10^{-lo}`.
    pub lambda_decades: (f64, f64),
    pub lambda_count: usize,
    /// Solver settings; `λ` and `φ` are overwritten by the grid.
    pub solver: PenaltyConfig,
    /// Outcome clusters for the Resp baseline; defaults to the true count.
    pub resp_groups: Option<usize>,
}

impl StudyConfig {
    /// The grid and solver settings used for the published comparisons.
    pub fn standard(setting: u8, n: usize, sigma_prime: f64, seed: u64) -> StudyConfig {
        let mut solver = PenaltyConfig::new(0.0, 0.0);
        solver.rho = 1e-2;
        solver.adaptive_rho = true;
        solver.relaxation = 1.8;
        solver.max_iters = 3000;
        solver.splitting = Splitting::PerUnit;
        let (phis, lambda_count) = match setting {
            3 => (vec![1e-4, 1e2], 6),
            _ => (vec![1e-4, 1e-1, 1e2], 10),
        };
        StudyConfig {
            setting,
            n,
            sigma_prime,
            seed,
            sim: SimOptions::default(),
            basis_dim: 35,
            degree: 3,
            preclusters: if n > 500 { Some(100) } else { None },
            restarts: 5,
            phis,
            lambda_decades: (0.25, 2.5),
            lambda_count,
            solver,
            resp_groups: None,
        }
    }

    pub fn grid(&self, phi: f64) -> GridSpec {
        GridSpec::relative(
            self.lambda_decades.0,
            self.lambda_decades.1,
            self.lambda_count,
            vec![phi],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    /// RPMSE (Gaussian) or oMR (Bernoulli) on the test sample.
    pub error: f64,
    pub ise: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreclusterCheck {
    pub k: usize,
    pub phi: f64,
    /// Groups whose members share one true subgroup.
    pub pure_groups: usize,
    pub groups: usize,
    /// Whether the SSE trajectory decreased strictly at every step (within
    /// `1e-9` relative slack).
    pub sse_decreasing: bool,
    pub sse_trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub setting: u8,
    pub n: usize,
    pub sigma_prime: f64,
    pub seed: u64,
    pub basis_dim: usize,
    pub preclusters: Option<usize>,
    pub prop: MethodScore,
    pub sflm: MethodScore,
    /// `None` if no outcome clustering could be fitted.
    pub resp: Option<MethodScore>,
    pub lm: MethodScore,
    pub lambda: f64,
    pub subgroups: usize,
    pub smr: f64,
    pub converged: bool,
    /// Every pre-clustering run (one per `φ`), if pre-clustering was used.
    pub precluster_runs: Vec<PreclusterCheck>,
}

/// Simulated population and its three samples with design caches.
pub struct Samples {
    pub truth: SyntheticTruth,
    pub train: FunctionalDataset,
    pub validation: FunctionalDataset,
    pub test: FunctionalDataset,
    pub basis: BasisSpec,
    pub c_train: DesignCache,
    pub c_validation: DesignCache,
    pub c_test: DesignCache,
}

pub fn simulate(
    setting: u8,
    n: usize,
    sigma_prime: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    Ok(match setting {
        1 => generate_setting1_with(n, sigma_prime, seed, opts)?,
        2 => generate_setting2_with(n, seed, opts)?,
        3 => generate_setting3_with(n, sigma_prime, seed, opts)?,
        s => {
            return Err(Error::Usage(format!(
                "unknown setting {s}; expected 1, 2 or 3"
            )))
        }
    })
}

impl Samples {
    pub fn draw(cfg: &StudyConfig) -> Result<Samples> {
        let (train, truth) = simulate(cfg.setting, cfg.n, cfg.sigma_prime, cfg.seed, &cfg.sim)?;
        let validation = draw_replicate(&truth, VALIDATION)?;
        let test = draw_replicate(&truth, TEST)?;
        let basis = BasisSpec::with_dimension(0.0, train.domain_end(), cfg.degree, cfg.basis_dim)?;
        let c_train = compute_gamma(&train, &basis)?;
        let c_validation = compute_gamma(&validation, &basis)?;
        let c_test = compute_gamma(&test, &basis)?;
        Ok(Samples {
            truth,
            train,
            validation,
            test,
            basis,
            c_train,
            c_validation,
            c_test,
        })
    }
}

fn prediction_error(family: Family, y: &[f64], mean: &[f64]) -> Result<f64> {
    Ok(match family {
        Family::Gaussian => rpmse(y, mean)?,
        Family::Bernoulli => omr(y, mean, 0.5)?,
    })
}

/// Per-subject coefficient curves of a single-covariate fit.
pub fn subject_curves(fit: &FitResult) -> Vec<Curve> {
    fit.unit_of
        .iter()
        .map(|&u| Curve::Spline {
            basis: fit.basis,
            coefs: fit.coefs.coef(u, 0).to_vec(),
        })
        .collect()
}

fn fit_ise(fit: &FitResult, truth: &SyntheticTruth) -> Result<f64> {
    let domain = (fit.basis.domain_start, fit.basis.domain_end);
    Ok(ise(&subject_curves(fit), &truth.beta, domain)?)
}

fn score_on(fit: &FitResult, data: &FunctionalDataset, cache: &DesignCache) -> Result<f64> {
    let pred = fit.predict(data, cache)?;
    prediction_error(fit.family, data.y(), &pred.mean)
}

/// Fits a baseline at every `φ` and keeps the one with the best validation score.
fn tuned_baseline<F>(s: &Samples, phis: &[f64], fit: F) -> Result<Option<(FitResult, f64)>>
where
    F: Fn(f64) -> fusion_core::Result<FitResult>,
{
    let mut best: Option<(f64, FitResult, f64)> = None;
    for &phi in phis {
        let Ok(f) = fit(phi) else { continue };
        let v = score_on(&f, &s.validation, &s.c_validation)?;
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, f, phi));
        }
    }
    Ok(best.map(|(_, f, phi)| (f, phi)))
}

pub fn purity(assignment: &[usize], k: usize, labels: &[usize]) -> usize {
    let mut first: Vec<Option<usize>> = vec![None; k];
    let mut pure = vec![true; k];
    for (&g, &t) in assignment.iter().zip(labels) {
        match first[g] {
            None => first[g] = Some(t),
            Some(f) if f != t => pure[g] = false,
            _ => {}
        }
    }
    (0..k).filter(|&g| first[g].is_some() && pure[g]).count()
}

pub fn sse_strictly_decreasing(trajectory: &[f64]) -> bool {
    trajectory
        .windows(2)
        .all(|w| w[1] < w[0] + 1e-9 * w[0].abs().max(1.0))
}

pub fn precluster_check(pre: &PreclusterResult, phi: f64, labels: &[usize]) -> PreclusterCheck {
    PreclusterCheck {
        k: pre.k,
        phi,
        pure_groups: purity(&pre.assignment, pre.k, labels),
        groups: pre.group_sizes().iter().filter(|&&s| s > 0).count(),
        sse_decreasing: sse_strictly_decreasing(&pre.sse_trajectory),
        sse_trajectory: pre.sse_trajectory.clone(),
    }
}

/// Fused fit tuned on the validation sample over the `(λ, φ)` grid.
pub fn tuned_prop(
    s: &Samples,
    cfg: &StudyConfig,
) -> Result<(TuneResult, Option<PreclusterResult>, Vec<PreclusterCheck>)> {
    let mut best: Option<(f64, TuneResult, Option<PreclusterResult>)> = None;
    let mut checks = Vec::new();
    let val = Validation {
        dataset: &s.validation,
        cache: &s.c_validation,
    };
    for &phi in &cfg.phis {
        let pre = match cfg.preclusters {
            Some(k) => {
                let opts = PreclusterOptions {
                    seed: cfg.seed,
                    restarts: cfg.restarts,
                    ..Default::default()
                };
                let pre = precluster(&s.train, &s.c_train, k, phi, &opts)?;
                checks.push(precluster_check(&pre, phi, &s.truth.labels[0]));
                Some(pre)
            }
            None => None,
        };
        let units = match &pre {
            Some(p) => Units::Groups(p),
            None => Units::Subjects,
        };
        let r = tune(
            &s.train,
            &s.c_train,
            units,
            &cfg.grid(phi),
            Criterion::Holdout,
            &cfg.solver,
            Some(val),
        )?;
        let score = r.path.iter().map(|p| p.score).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, r, pre));
        }
    }
    let (_, r, pre) = best.ok_or_else(|| Error::Usage("empty φ grid".into()))?;
    Ok((r, pre, checks))
}

pub fn run_replicate(cfg: &StudyConfig) -> Result<ReplicateResult> {
    let s = Samples::draw(cfg)?;
    let (tuned, _, checks) = tuned_prop(&s, cfg)?;
    let fit = &tuned.fit;
    let prop = MethodScore {
        error: score_on(fit, &s.test, &s.c_test)?,
        ise: Some(fit_ise(fit, &s.truth)?),
        phi: Some(tuned.config.phi),
    };

    let (sflm_fit, sflm_phi) =
        tuned_baseline(&s, &cfg.phis, |phi| fit_sflm(&s.train, &s.c_train, phi))?
            .ok_or_else(|| Error::Numeric("homogeneous fit failed at every φ".into()))?;
    let sflm = MethodScore {
        error: score_on(&sflm_fit, &s.test, &s.c_test)?,
        ise: Some(fit_ise(&sflm_fit, &s.truth)?),
        phi: Some(sflm_phi),
    };

    let g = cfg.resp_groups.unwrap_or(s.truth.n_groups[0]);
    let resp = match tuned_baseline(&s, &cfg.phis, |phi| fit_resp(&s.train, &s.c_train, phi, g))? {
        Some((f, phi)) => Some(MethodScore {
            error: score_on(&f, &s.test, &s.c_test)?,
            ise: Some(fit_ise(&f, &s.truth)?),
            phi: Some(phi),
        }),
        None => None,
    };

    let lm_fit = fit_lm_glm(&s.train)?;
    let lm_pred = lm_fit.predict(&s.test)?;
    let lm = MethodScore {
        error: prediction_error(lm_fit.family, s.test.y(), &lm_pred.mean)?,
        ise: None,
        phi: None,
    };

    Ok(ReplicateResult {
        setting: cfg.setting,
        n: cfg.n,
        sigma_prime: cfg.sigma_prime,
        seed: cfg.seed,
        basis_dim: cfg.basis_dim,
        preclusters: cfg.preclusters,
        prop,
        sflm,
        resp,
        lm,
        lambda: tuned.config.lambda,
        subgroups: fit.subgroup_counts()[0],
        smr: smr(&fit.subject_labels(0), &s.truth.labels[0])?,
        converged: fit.diagnostics.converged,
        precluster_runs: checks,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
