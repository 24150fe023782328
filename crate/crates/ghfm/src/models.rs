//! JSON model files.

use std::fs;
use std::path::Path;

use fusion_core::baselines::LinearModelFit;
use fusion_core::bspline::eval_spline;
use fusion_core::precluster::PreclusterResult;
use fusion_core::{FitResult, PenaltyConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One estimated subgroup of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupCurve {
    pub covariate: usize,
    pub subgroup: usize,
    /// Fused units (subjects or pre-clustering groups) in this subgroup.
    pub units: Vec<usize>,
    pub subjects: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelFile {
    /// A spline fit: fused (`ghfm`) or one of the functional baselines.
    Functional {
        intercept: f64,
        subgroups: Vec<SubgroupCurve>,
        fit: FitResult,
        #[serde(default)]
        penalty: Option<PenaltyConfig>,
        #[serde(default)]
        precluster: Option<PreclusterSummary>,
    },
    Linear {
        fit: LinearModelFit,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreclusterSummary {
    pub k: usize,
    pub group_sizes: Vec<usize>,
    pub sse_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
}

impl PreclusterSummary {
    pub fn of(pre: &PreclusterResult) -> PreclusterSummary {
        PreclusterSummary {
            k: pre.k,
            group_sizes: pre.group_sizes(),
            sse_trajectory: pre.sse_trajectory.clone(),
            iterations: pre.iterations,
            converged: pre.converged,
            restart: pre.restart,
        }
    }
}

pub fn subgroup_curves(fit: &FitResult) -> Vec<SubgroupCurve> {
    let mut out = Vec::new();
    for (j, part) in fit.partitions.iter().enumerate() {
        for (g, units) in part.groups.iter().enumerate() {
            let subjects = fit.unit_of.iter().filter(|u| units.contains(u)).count();
            out.push(SubgroupCurve {
                covariate: j,
                subgroup: g,
                units: units.clone(),
                subjects,
                coefficients: fit.coefs.coef(units[0], j).to_vec(),
            });
        }
    }
    out
}

impl ModelFile {
    pub fn functional(
        fit: FitResult,
        penalty: Option<PenaltyConfig>,
        pre: Option<&PreclusterResult>,
    ) -> ModelFile {
        ModelFile::Functional {
            intercept: fit.alpha_hat,
            subgroups: subgroup_curves(&fit),
            fit,
            penalty,
            precluster: pre.map(PreclusterSummary::of),
        }
    }

    pub fn method(&self) -> &str {
        match self {
            ModelFile::Functional { fit, .. } => &fit.method,
            ModelFile::Linear { fit } => &fit.method,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("serializing model: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: not a model file: {e}", path.display())))
    }
}

/// Samples every subgroup's coefficient function at `points` evenly spaced
/// times. Rows are `(covariate, subgroup, t, value)`.
pub fn sample_curves(fit: &FitResult, points: usize) -> Result<Vec<(usize, usize, f64, f64)>> {
    if points < 2 {
        return Err(Error::Usage("--points must be at least 2".into()));
    }
    let (a, b) = (fit.basis.domain_start, fit.basis.domain_end);
    let mut rows = Vec::new();
    for sg in subgroup_curves(fit) {
        for k in 0..points {
            let t = if k + 1 == points {
                b
            } else {
                a + (b - a) * k as f64 / (points - 1) as f64
            };
            let v = eval_spline(&fit.basis, &sg.coefficients, t)?;
            rows.push((sg.covariate, sg.subgroup, t, v));
        }
    }
    Ok(rows)
}
