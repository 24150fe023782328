//! Comparator fits: one coefficient function for everyone, clustering on the
//! outcome followed by separate fits, and a (generalized) linear model on the
//! raw grid values.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::fdata::{DesignCache, FunctionalDataset};
use crate::fusionfit::{design_rows, unit_penalty, BasisOperators};
use crate::linalg::{dot, Matrix};
use crate::model::{CoefficientSet, FitDiagnostics, FitResult, Partition, Predictions};
use crate::solver::UnitSystem;

/// Ridge added to every baseline solve, matching the fused fits.
pub const DEFAULT_RIDGE: f64 = 1e-8;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_STEPS: usize = 100;

/// Minimizes `(1/n) Σ nll + bᵀ P b` over `(α, b)` for one unit.
fn fit_single(
    family: Family,
    y: &[f64],
    x: &[f64],
    s: usize,
    penalty: &Matrix,
) -> Result<(f64, Vec<f64>, f64)> {
    let unit_of = vec![0; y.len()];
    let sys = UnitSystem {
        family,
        y,
        x,
        s,
        unit_of: &unit_of,
        n_units: 1,
        penalty,
    };
    let mut alpha = family.null_intercept(y);
    let mut b = vec![0.0; s];
    let stats = sys.newton(&mut alpha, &mut b, None, NEWTON_TOL, NEWTON_STEPS)?;
    Ok((alpha, b, stats.grad_norm))
}

fn check(dataset: &FunctionalDataset, cache: &DesignCache, phi: f64) -> Result<()> {
    if dataset.n() == 0 {
        return Err(GhfmError::Argument("empty dataset".into()));
    }
    if dataset.n() != cache.n() || dataset.p() != cache.p() {
        return Err(GhfmError::Dimension(
            "dataset and design cache disagree".into(),
        ));
    }
    if !(phi >= 0.0) {
        return Err(GhfmError::Argument(format!(
            "φ = {phi} must be nonnegative"
        )));
    }
    Ok(())
}

fn baseline_result(
    method: &str,
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    coefs: CoefficientSet,
    unit_of: Vec<usize>,
    phi: f64,
    objective: f64,
) -> FitResult {
    let units = coefs.units;
    FitResult {
        method: method.to_string(),
        family: dataset.family(),
        basis: cache.basis,
        alpha_hat: coefs.intercept(0),
        partitions: vec![Partition::singletons(units); cache.p()],
        coefs,
        subject_ids: dataset.subject_ids().to_vec(),
        unit_of,
        diagnostics: FitDiagnostics {
            iterations: 1,
            converged: true,
            objective_trajectory: vec![objective],
            objective_final: objective,
            ..Default::default()
        },
        lambda: 0.0,
        phi,
        centers: cache.centers.clone(),
    }
}

/// Homogeneous fit: one coefficient function per covariate for all subjects.
pub fn fit_sflm(dataset: &FunctionalDataset, cache: &DesignCache, phi: f64) -> Result<FitResult> {
    check(dataset, cache, phi)?;
    let ops = BasisOperators::new(&cache.basis)?;
    let (p, l) = (cache.p(), cache.dim());
    let penalty = unit_penalty(&ops.roughness, p, phi, DEFAULT_RIDGE);
    let x = design_rows(cache);
    let (alpha, b, _) = fit_single(dataset.family(), dataset.y(), &x, p * l, &penalty)
        .map_err(|e| GhfmError::Numeric(format!("homogeneous fit: {e}")))?;
    let unit_of = vec![0; dataset.n()];
    let sys = UnitSystem {
        family: dataset.family(),
        y: dataset.y(),
        x: &x,
        s: p * l,
        unit_of: &unit_of,
        n_units: 1,
        penalty: &penalty,
    };
    let objective = sys.objective(alpha, &b, None)?;
    let coefs = CoefficientSet::from_shared(1, p, l, alpha, b)?;
    Ok(baseline_result(
        "sflm", dataset, cache, coefs, unit_of, phi, objective,
    ))
}

/// Optimal 1-D k-means partition of `y` into `g` contiguous clusters of the
/// sorted values (exact dynamic program). Returns labels ordered by cluster mean.
pub fn kmeans_1d(y: &[f64], g: usize) -> Result<Vec<usize>> {
    let n = y.len();
    let mut distinct: Vec<f64> = y.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if g == 0 || g > distinct.len() {
        return Err(GhfmError::Argument(format!(
            "cannot form {g} clusters from {} distinct outcome values",
            distinct.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (k, &v) in sorted.iter().enumerate() {
        s1[k + 1] = s1[k] + v;
        s2[k + 1] = s2[k] + v * v;
    }
    // within-cluster sum of squares of sorted[a..b]
    let cost = |a: usize, b: usize| -> f64 {
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };
    let inf = f64::INFINITY;
    // best[c][b]: optimal cost of sorted[..b] in c + 1 clusters
    let mut best = vec![vec![inf; n + 1]; g];
    let mut cut = vec![vec![0usize; n + 1]; g];
    for b in 1..=n {
        best[0][b] = cost(0, b);
    }
    for c in 1..g {
        for b in (c + 1)..=n {
            for a in c..b {
                // clusters never split a run of equal values
                if sorted[a] == sorted[a - 1] {
                    continue;
                }
                let v = best[c - 1][a] + cost(a, b);
                if v < best[c][b] {
                    best[c][b] = v;
                    cut[c][b] = a;
                }
            }
        }
    }
    if !best[g - 1][n].is_finite() {
        return Err(GhfmError::Argument(format!(
            "cannot form {g} clusters of distinct outcome values"
        )));
    }
    let mut labels = vec![0; n];
    let mut b = n;
    for c in (0..g).rev() {
        let a = if c == 0 { 0 } else { cut[c][b] };
        for &i in &order[a..b] {
            labels[i] = c;
        }
        b = a;
    }
    Ok(labels)
}

/// Clusters subjects on their outcomes into `g` groups, then fits a separate
/// homogeneous model (own intercept and coefficient functions) per cluster.
pub fn fit_resp(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    phi: f64,
    g: usize,
) -> Result<FitResult> {
    check(dataset, cache, phi)?;
    let labels = kmeans_1d(dataset.y(), g)?;
    let ops = BasisOperators::new(&cache.basis)?;
    let (p, l) = (cache.p(), cache.dim());
    let s = p * l;
    let penalty = unit_penalty(&ops.roughness, p, phi, DEFAULT_RIDGE);
    let x = design_rows(cache);
    let mut coefs = CoefficientSet::zeros(g, p, l, 0.0);
    coefs.intercepts = vec![0.0; g];
    let mut objective = 0.0;
    for c in 0..g {
        let rows: Vec<usize> = (0..dataset.n()).filter(|&i| labels[i] == c).collect();
        let y: Vec<f64> = rows.iter().map(|&i| dataset.y()[i]).collect();
        let xs: Vec<f64> = rows
            .iter()
            .flat_map(|&i| x[i * s..(i + 1) * s].iter().copied())
            .collect();
        let (alpha, b, _) = fit_single(dataset.family(), &y, &xs, s, &penalty)
            .map_err(|e| GhfmError::Numeric(format!("outcome cluster {c}: {e}")))?;
        let zeros = vec![0; y.len()];
        let sys = UnitSystem {
            family: dataset.family(),
            y: &y,
            x: &xs,
            s,
            unit_of: &zeros,
            n_units: 1,
            penalty: &penalty,
        };
        objective += sys.objective(alpha, &b, None)?;
        coefs.intercepts[c] = alpha;
        coefs.values[c * s..(c + 1) * s].copy_from_slice(&b);
    }
    if g == 1 {
        coefs.intercepts.truncate(1);
    }
    let mut fit = baseline_result("resp", dataset, cache, coefs, labels, phi, objective);
    fit.alpha_hat = fit.coefs.intercept(0);
    Ok(fit)
}

/// Linear (Gaussian) or logistic (Bernoulli) regression on the raw grid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFit {
    pub method: String,
    pub family: Family,
    pub intercept: f64,
    /// One weight per (covariate, grid point), covariate-major.
    pub weights: Vec<f64>,
    pub grid: Vec<f64>,
    pub p: usize,
    pub ridge: f64,
    /// Norm of the objective gradient at the returned solution.
    pub gradient_norm: f64,
}

impl LinearModelFit {
    pub fn predict(&self, dataset: &FunctionalDataset) -> Result<Predictions> {
        if dataset.p() != self.p || dataset.grid() != self.grid.as_slice() {
            return Err(GhfmError::Dimension(
                "dataset grid differs from the fitted grid".into(),
            ));
        }
        let eta: Vec<f64> = (0..dataset.n())
            .map(|i| {
                let row: Vec<f64> = (0..self.p)
                    .flat_map(|j| dataset.curve(i, j).iter().copied())
                    .collect();
                self.intercept + dot(&row, &self.weights)
            })
            .collect();
        let mean: Vec<f64> = eta.iter().map(|&e| self.family.mean(e)).collect();
        let labels = match self.family {
            Family::Bernoulli => Some(mean.iter().map(|&v| u8::from(v >= 0.5)).collect()),
            Family::Gaussian => None,
        };
        Ok(Predictions {
            subject_ids: dataset.subject_ids().to_vec(),
            eta,
            mean,
            labels,
        })
    }
}

/// Regresses `y` on the `m·p` grid values plus an intercept. A ridge of
/// `1e-8` is added when there are no more subjects than features.
pub fn fit_lm_glm(dataset: &FunctionalDataset) -> Result<LinearModelFit> {
    let (n, p, m) = (dataset.n(), dataset.p(), dataset.m());
    if n == 0 {
        return Err(GhfmError::Argument("empty dataset".into()));
    }
    let s = m * p;
    let ridge = if n <= s { DEFAULT_RIDGE } else { 0.0 };
    let mut penalty = Matrix::zeros(s, s);
    penalty.add_diagonal(ridge);
    let x: Vec<f64> = (0..n)
        .flat_map(|i| (0..p).flat_map(move |j| dataset.curve(i, j).iter().copied()))
        .collect();
    let (intercept, weights, gradient_norm) =
        fit_single(dataset.family(), dataset.y(), &x, s, &penalty)
            .map_err(|e| GhfmError::Numeric(format!("grid-value regression: {e}")))?;
    let method = match dataset.family() {
        Family::Gaussian => "lm",
        Family::Bernoulli => "glm",
    };
    Ok(LinearModelFit {
        method: method.to_string(),
        family: dataset.family(),
        intercept,
        weights,
        grid: dataset.grid().to_vec(),
        p,
        ridge,
        gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_splits_obvious_clusters() {
        let y = [10.0, 0.1, 9.5, 0.0, 20.0, 10.2];
        assert_eq!(kmeans_1d(&y, 3).unwrap(), vec![1, 0, 1, 0, 2, 1]);
        assert_eq!(kmeans_1d(&y, 1).unwrap(), vec![0; 6]);
    }

    #[test]
    fn kmeans_on_level_sets() {
        let y = [2.0, 1.0, 2.0, 1.0, 5.0];
        assert_eq!(kmeans_1d(&y, 3).unwrap(), vec![1, 0, 1, 0, 2]);
        assert!(kmeans_1d(&y, 4).is_err());
        assert!(kmeans_1d(&y, 0).is_err());
    }
}
