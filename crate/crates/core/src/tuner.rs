//! Grid search over `(λ, φ)`.
//!
//! For every `φ` the `λ` values are visited from largest to smallest and each
//! fit starts from the previous solution.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::fdata::{DesignCache, FunctionalDataset};
use crate::fusionfit::{fit_fused_warm, lambda_max, AdmmState, PenaltyConfig, Units};
use crate::metrics::{omr, rpmse};
use crate::model::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Criterion {
    /// `n log(2 mean nll) + c df log n` with `df = Σ_j K̂_j L + 1`.
    Bic { c: f64 },
    /// Prediction error on a validation sample: RPMSE (Gaussian) or the
    /// misclassification rate (Bernoulli, ties broken by validation loss).
    Holdout,
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::Bic { c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    pub phis: Vec<f64>,
    /// When set, `lambdas` are multiples of [`lambda_max`] at each `φ`.
    #[serde(default)]
    pub relative: bool,
}

impl GridSpec {
    /// `λ ∈ 10^{-6..0}` (13 points) and `φ ∈ 10^{-8..-2}` (7 points), both
    /// scaled by `n^{-1/2}`.
    pub fn default_for(n: usize) -> GridSpec {
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        GridSpec {
            lambdas: log_grid(-6.0, 0.0, 13)
                .into_iter()
                .map(|v| v * scale)
                .collect(),
            phis: log_grid(-8.0, -2.0, 7)
                .into_iter()
                .map(|v| v * scale)
                .collect(),
            relative: false,
        }
    }

    /// `count` values of `λ` from `10^{-hi_decades}` up to `10^{-lo_decades}`
    /// times the fusing `λ` of each `φ`.
    pub fn relative(lo_decades: f64, hi_decades: f64, count: usize, phis: Vec<f64>) -> GridSpec {
        GridSpec {
            lambdas: log_grid(-hi_decades, -lo_decades, count),
            phis,
            relative: true,
        }
    }
}

/// `count` points evenly spaced in `log10` between `10^lo` and `10^hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub phi: f64,
    pub score: f64,
    pub df: usize,
    pub subgroups: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: PenaltyConfig,
    pub fit: FitResult,
    pub path: Vec<GridPoint>,
}

/// Held-out sample for [`Criterion::Holdout`].
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub dataset: &'a FunctionalDataset,
    pub cache: &'a DesignCache,
}

/// Degrees of freedom of a fit: distinct coefficient functions plus the intercept.
pub fn degrees_of_freedom(fit: &FitResult) -> usize {
    fit.subgroup_counts().iter().sum::<usize>() * fit.coefs.l + 1
}

/// Information criterion of a fit on its training data.
pub fn bic(
    fit: &FitResult,
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    c: f64,
) -> Result<f64> {
    let eta = fit.coefs.linear_predictor(cache, &fit.unit_of)?;
    let n = dataset.n() as f64;
    let mut total = 0.0;
    for (&y, &e) in dataset.y().iter().zip(&eta) {
        total += dataset.family().nll(y, e)?;
    }
    let mean = (2.0 * total / n).max(f64::MIN_POSITIVE);
    Ok(n * mean.ln() + c * degrees_of_freedom(fit) as f64 * n.ln())
}

fn holdout_score(fit: &FitResult, val: &Validation) -> Result<(f64, f64)> {
    let pred = fit.predict(val.dataset, val.cache)?;
    let y = val.dataset.y();
    match fit.family {
        Family::Gaussian => Ok((rpmse(y, &pred.mean)?, 0.0)),
        Family::Bernoulli => {
            let mut loss = 0.0;
            for (&yi, &e) in y.iter().zip(&pred.eta) {
                loss += fit.family.nll(yi, e)?;
            }
            Ok((omr(y, &pred.mean, 0.5)?, loss / y.len() as f64))
        }
    }
}

/// Fits every grid cell and returns the best configuration and its fit.
/// Ties keep the earlier cell (larger `λ`, then smaller `φ`).
pub fn tune(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    units: Units<'_>,
    grid: &GridSpec,
    criterion: Criterion,
    base: &PenaltyConfig,
    validation: Option<Validation<'_>>,
) -> Result<TuneResult> {
    if grid.lambdas.is_empty() || grid.phis.is_empty() {
        return Err(GhfmError::Argument("empty tuning grid".into()));
    }
    if grid
        .lambdas
        .iter()
        .chain(&grid.phis)
        .any(|v| !(*v >= 0.0) || !v.is_finite())
    {
        return Err(GhfmError::Argument(
            "grid values must be finite and nonnegative".into(),
        ));
    }
    if matches!(criterion, Criterion::Holdout) && validation.is_none() {
        return Err(GhfmError::Argument(
            "holdout tuning needs a validation sample".into(),
        ));
    }
    let mut lambdas = grid.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let mut path = Vec::with_capacity(lambdas.len() * grid.phis.len());
    let mut best: Option<((f64, f64), PenaltyConfig, FitResult)> = None;
    for &phi in &grid.phis {
        let scale = if grid.relative {
            lambda_max(dataset, cache, units, phi, base.ridge)?
        } else {
            1.0
        };
        let mut warm: Option<AdmmState> = None;
        for lambda in lambdas.iter().map(|v| v * scale) {
            let config = PenaltyConfig {
                lambda,
                phi,
                ..*base
            };
            let (fit, state) = fit_fused_warm(dataset, cache, units, &config, warm.as_ref())
                .map_err(|e| GhfmError::Numeric(format!("λ={lambda:e}, φ={phi:e}: {e}")))?;
            warm = Some(state);
            let score = match criterion {
                Criterion::Bic { c } => (bic(&fit, dataset, cache, c)?, 0.0),
                Criterion::Holdout => {
                    holdout_score(&fit, validation.as_ref().expect("checked above"))?
                }
            };
            path.push(GridPoint {
                lambda,
                phi,
                score: score.0,
                df: degrees_of_freedom(&fit),
                subgroups: fit.subgroup_counts(),
                converged: fit.diagnostics.converged,
            });
            let better = match &best {
                None => true,
                Some((s, _, _)) => score.0 < s.0 || (score.0 == s.0 && score.1 < s.1),
            };
            if better {
                best = Some((score, config, fit));
            }
        }
    }
    let (_, config, fit) = best.expect("non-empty grid");
    Ok(TuneResult { config, fit, path })
}

/// Describes a grid cell for error messages and logs.
pub fn describe(point: &GridPoint) -> alloc::string::String {
    format!(
        "λ={:e} φ={:e} score={} df={}",
        point.lambda, point.phi, point.score, point.df
    )
}
