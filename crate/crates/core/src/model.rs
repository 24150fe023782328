//! Fitted coefficient functions, subgroup partitions and prediction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bspline::{eval_spline, BasisSpec};
use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::fdata::{DesignCache, FunctionalDataset};
use crate::linalg::dot;

/// Intercept(s) and spline coefficients for `units` units, `p` covariates and
/// a basis of dimension `l`. Values are laid out `[unit][covariate][basis]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub units: usize,
    pub p: usize,
    pub l: usize,
    /// One shared intercept, or one per unit.
    pub intercepts: Vec<f64>,
    pub values: Vec<f64>,
}

impl CoefficientSet {
    pub fn zeros(units: usize, p: usize, l: usize, alpha: f64) -> Self {
        CoefficientSet {
            units,
            p,
            l,
            intercepts: vec![alpha],
            values: vec![0.0; units * p * l],
        }
    }

    pub fn from_shared(
        units: usize,
        p: usize,
        l: usize,
        alpha: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != units * p * l {
            return Err(GhfmError::Dimension(format!(
                "{} coefficients for {units} units x {p} covariates x {l} basis functions",
                values.len()
            )));
        }
        Ok(CoefficientSet {
            units,
            p,
            l,
            intercepts: vec![alpha],
            values,
        })
    }

    #[inline]
    pub fn intercept(&self, unit: usize) -> f64 {
        if self.intercepts.len() == 1 {
            self.intercepts[0]
        } else {
            self.intercepts[unit]
        }
    }

    #[inline]
    pub fn coef(&self, unit: usize, j: usize) -> &[f64] {
        let start = (unit * self.p + j) * self.l;
        &self.values[start..start + self.l]
    }

    #[inline]
    pub fn coef_mut(&mut self, unit: usize, j: usize) -> &mut [f64] {
        let start = (unit * self.p + j) * self.l;
        &mut self.values[start..start + self.l]
    }

    /// All covariates of one unit, concatenated.
    #[inline]
    pub fn unit_block(&self, unit: usize) -> &[f64] {
        let w = self.p * self.l;
        &self.values[unit * w..(unit + 1) * w]
    }

    /// `α_u + Σ_j γ_ijᵀ b_{u,j}` for every subject of `cache`, given `unit_of`.
    pub fn linear_predictor(&self, cache: &DesignCache, unit_of: &[usize]) -> Result<Vec<f64>> {
        if cache.p() != self.p || cache.dim() != self.l {
            return Err(GhfmError::Dimension(format!(
                "design has p={}, L={} but coefficients have p={}, L={}",
                cache.p(),
                cache.dim(),
                self.p,
                self.l
            )));
        }
        if unit_of.len() != cache.n() {
            return Err(GhfmError::Dimension(
                "unit mapping does not cover every subject".into(),
            ));
        }
        Ok(unit_of
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let mut eta = self.intercept(u);
                for j in 0..self.p {
                    eta += dot(cache.gamma(i, j), self.coef(u, j));
                }
                eta
            })
            .collect())
    }
}

/// A partition of units into subgroups for one covariate. Subgroups are
/// numbered in order of their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Canonical partition from arbitrary labels.
    pub fn from_labels(raw: &[usize]) -> Partition {
        let mut remap = BTreeMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (u, r) in raw.iter().enumerate() {
            let next = remap.len();
            let g = *remap.entry(*r).or_insert(next);
            if g == groups.len() {
                groups.push(Vec::new());
            }
            groups[g].push(u);
            labels.push(g);
        }
        Partition { labels, groups }
    }

    pub fn singletons(n: usize) -> Partition {
        Partition {
            labels: (0..n).collect(),
            groups: (0..n).map(|u| vec![u]).collect(),
        }
    }

    pub fn single(n: usize) -> Partition {
        Partition {
            labels: vec![0; n],
            groups: vec![(0..n).collect()],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Solver diagnostics attached to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    /// Objective sampled along the iterations.
    pub objective_trajectory: Vec<f64>,
    /// Objective at zero coefficients with the null intercept.
    pub objective_initial: f64,
    /// Objective at the returned coefficients.
    pub objective_final: f64,
}

/// A fitted model: coefficients per unit, the subject-to-unit map and the
/// per-covariate subgroup partitions of the units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub family: Family,
    pub basis: BasisSpec,
    pub alpha_hat: f64,
    pub coefs: CoefficientSet,
    /// Training subject ids, in training order.
    pub subject_ids: Vec<String>,
    /// Unit owning each training subject.
    pub unit_of: Vec<usize>,
    /// One partition of the units per covariate.
    pub partitions: Vec<Partition>,
    pub diagnostics: FitDiagnostics,
    pub lambda: f64,
    pub phi: f64,
    /// Centering curves applied to covariates before integration, if any.
    #[serde(default)]
    pub centers: Option<Vec<Vec<f64>>>,
}

/// Predictions for a batch of subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub subject_ids: Vec<String>,
    /// Linear predictor.
    pub eta: Vec<f64>,
    /// Mean response: `eta` for Gaussian, `sigmoid(eta)` for Bernoulli.
    pub mean: Vec<f64>,
    /// 0/1 labels at threshold 0.5 (Bernoulli only).
    pub labels: Option<Vec<u8>>,
}

impl FitResult {
    pub fn n_units(&self) -> usize {
        self.coefs.units
    }

    /// Number of estimated subgroups per covariate.
    pub fn subgroup_counts(&self) -> Vec<usize> {
        self.partitions.iter().map(Partition::len).collect()
    }

    /// Estimated subgroup label of every training subject for covariate `j`.
    pub fn subject_labels(&self, j: usize) -> Vec<usize> {
        self.unit_of
            .iter()
            .map(|&u| self.partitions[j].labels[u])
            .collect()
    }

    /// `β̂` for training subject `i` and covariate `j` at `t`.
    pub fn beta(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        eval_spline(&self.basis, self.coefs.coef(self.unit_of[i], j), t)
    }

    /// Unit of each subject of `dataset`, looked up by subject id.
    pub fn map_subjects(&self, dataset: &FunctionalDataset) -> Result<Vec<usize>> {
        let index: BTreeMap<&str, usize> = self
            .subject_ids
            .iter()
            .zip(&self.unit_of)
            .map(|(id, &u)| (id.as_str(), u))
            .collect();
        dataset
            .subject_ids()
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| GhfmError::Mapping(id.clone()))
            })
            .collect()
    }

    /// Predicts new observations of training subjects.
    pub fn predict(&self, dataset: &FunctionalDataset, cache: &DesignCache) -> Result<Predictions> {
        let mapping = self.map_subjects(dataset)?;
        self.predict_mapped(dataset, cache, &mapping)
    }

    /// Predicts with an explicit subject-to-unit mapping.
    pub fn predict_mapped(
        &self,
        dataset: &FunctionalDataset,
        cache: &DesignCache,
        mapping: &[usize],
    ) -> Result<Predictions> {
        if cache.basis != self.basis {
            return Err(GhfmError::Argument(
                "design basis differs from the fitted basis".into(),
            ));
        }
        if let Some(&u) = mapping.iter().find(|&&u| u >= self.coefs.units) {
            return Err(GhfmError::Mapping(format!("unit {u}")));
        }
        let eta = self.coefs.linear_predictor(cache, mapping)?;
        let mean: Vec<f64> = eta.iter().map(|&e| self.family.mean(e)).collect();
        let labels = match self.family {
            Family::Bernoulli => Some(mean.iter().map(|&p| u8::from(p >= 0.5)).collect()),
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_labels_are_canonical() {
        let p = Partition::from_labels(&[7, 3, 7, 9, 3]);
        assert_eq!(p.labels, vec![0, 1, 0, 2, 1]);
        assert_eq!(p.groups, vec![vec![0, 2], vec![1, 4], vec![3]]);
        assert_eq!(Partition::singletons(3).len(), 3);
        assert_eq!(Partition::single(3).groups, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn per_unit_intercepts() {
        let mut c = CoefficientSet::zeros(2, 1, 2, 0.5);
        assert_eq!(c.intercept(1), 0.5);
        c.intercepts = vec![1.0, 2.0];
        assert_eq!(c.intercept(1), 2.0);
        c.coef_mut(1, 0).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(c.unit_block(1), &[3.0, 4.0]);
    }
}
