//! Functional datasets and the integrated design vectors `γ_ij = ∫ B(t) X_ij(t) dt`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bspline::{basis_matrix, BasisSpec, QuadratureRule};
use crate::error::{GhfmError, Result};
use crate::family::Family;

/// `n` subjects with `p` functional covariates observed on a shared grid of
/// `m` time points in `[0, domain_end]`, plus one scalar outcome each.
///
/// Covariate values are stored subject-major: `x[(i * p + j) * m + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    n: usize,
    p: usize,
    domain_end: f64,
    grid: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    family: Family,
    subject_ids: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(
        p: usize,
        domain_end: f64,
        grid: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
        family: Family,
        subject_ids: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        let m = grid.len();
        if p == 0 {
            return Err(GhfmError::Dataset(
                "at least one functional covariate is required".into(),
            ));
        }
        if m < 2 {
            return Err(GhfmError::Dataset(
                "the time grid needs at least two points".into(),
            ));
        }
        if !(domain_end > 0.0) {
            return Err(GhfmError::Dataset(format!(
                "domain end {domain_end} must be positive"
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GhfmError::Dataset(
                "time grid must be strictly increasing".into(),
            ));
        }
        if grid[0] < 0.0 || grid[m - 1] > domain_end {
            return Err(GhfmError::Dataset(format!(
                "time grid [{}, {}] leaves the domain [0, {domain_end}]",
                grid[0],
                grid[m - 1]
            )));
        }
        if x.len() != n * p * m {
            return Err(GhfmError::Dimension(format!(
                "{} covariate values for n={n}, p={p}, m={m}",
                x.len()
            )));
        }
        if subject_ids.len() != n {
            return Err(GhfmError::Dimension(format!(
                "{} subject ids for {n} outcomes",
                subject_ids.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(GhfmError::Dataset(format!(
                "non-finite covariate value for subject {}",
                subject_ids[pos / (p * m)]
            )));
        }
        for (i, &yi) in y.iter().enumerate() {
            family.validate_outcome(yi).map_err(|e| match e {
                GhfmError::Dataset(msg) => {
                    GhfmError::Dataset(format!("subject {}: {msg}", subject_ids[i]))
                }
                other => other,
            })?;
        }
        let mut seen = BTreeSet::new();
        for id in &subject_ids {
            if !seen.insert(id.as_str()) {
                return Err(GhfmError::Dataset(format!("duplicate subject id `{id}`")));
            }
        }
        Ok(FunctionalDataset {
            n,
            p,
            domain_end,
            grid,
            x,
            y,
            family,
            subject_ids,
        })
    }

    /// Evenly spaced grid of `m` points spanning `[0, domain_end]`.
    pub fn uniform_grid(m: usize, domain_end: f64) -> Vec<f64> {
        (0..m)
            .map(|k| {
                if k + 1 == m {
                    domain_end
                } else {
                    domain_end * k as f64 / (m - 1) as f64
                }
            })
            .collect()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }
    #[inline]
    pub fn m(&self) -> usize {
        self.grid.len()
    }
    #[inline]
    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }
    #[inline]
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    #[inline]
    pub fn family(&self) -> Family {
        self.family
    }
    #[inline]
    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    #[inline]
    pub fn raw_values(&self) -> &[f64] {
        &self.x
    }

    /// Grid values of covariate `j` for subject `i`.
    #[inline]
    pub fn curve(&self, i: usize, j: usize) -> &[f64] {
        let m = self.m();
        let start = (i * self.p + j) * m;
        &self.x[start..start + m]
    }

    /// Subset of subjects (in the given order).
    pub fn select(&self, rows: &[usize]) -> Result<FunctionalDataset> {
        let stride = self.p * self.m();
        let mut x = Vec::with_capacity(rows.len() * stride);
        let mut y = Vec::with_capacity(rows.len());
        let mut ids = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n {
                return Err(GhfmError::Argument(format!("row {i} out of range")));
            }
            x.extend_from_slice(&self.x[i * stride..(i + 1) * stride]);
            y.push(self.y[i]);
            ids.push(self.subject_ids[i].clone());
        }
        FunctionalDataset::new(
            self.p,
            self.domain_end,
            self.grid.clone(),
            x,
            y,
            self.family,
            ids,
        )
    }

    /// Copy with a different outcome vector.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<FunctionalDataset> {
        FunctionalDataset::new(
            self.p,
            self.domain_end,
            self.grid.clone(),
            self.x.clone(),
            y,
            self.family,
            self.subject_ids.clone(),
        )
    }

    /// Per-covariate mean curves over subjects, on the grid (`p x m`).
    pub fn covariate_means(&self) -> Vec<Vec<f64>> {
        let m = self.m();
        let mut means = vec![vec![0.0; m]; self.p];
        for i in 0..self.n {
            for (j, mean) in means.iter_mut().enumerate() {
                for (acc, v) in mean.iter_mut().zip(self.curve(i, j)) {
                    *acc += v;
                }
            }
        }
        let scale = 1.0 / self.n.max(1) as f64;
        means.iter_mut().flatten().for_each(|v| *v *= scale);
        means
    }

    /// Piecewise-linear interpolant of grid values `values` at `t`, constant
    /// beyond the first and last grid points.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        interpolate_linear(&self.grid, values, t)
    }
}

pub(crate) fn interpolate_linear(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let m = grid.len();
    if t <= grid[0] {
        return values[0];
    }
    if t >= grid[m - 1] {
        return values[m - 1];
    }
    let k = grid.partition_point(|&g| g <= t) - 1;
    let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] * (1.0 - w) + values[k + 1] * w
}

/// Integrated design vectors for one dataset and basis.
///
/// `gamma` holds one `n x L` row-major block per covariate so solvers read a
/// contiguous slice per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCache {
    pub basis: BasisSpec,
    n: usize,
    p: usize,
    gamma: Vec<Vec<f64>>,
    /// Per-covariate mean curves subtracted before integration, if centering was requested.
    pub centers: Option<Vec<Vec<f64>>>,
}

impl DesignCache {
    pub fn from_parts(
        basis: BasisSpec,
        n: usize,
        p: usize,
        gamma: Vec<Vec<f64>>,
        centers: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let l = basis.dimension();
        if gamma.len() != p || gamma.iter().any(|g| g.len() != n * l) {
            return Err(GhfmError::Dimension(
                "gamma blocks do not match n, p, L".into(),
            ));
        }
        if gamma.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GhfmError::Numeric("non-finite design entry".into()));
        }
        Ok(DesignCache {
            basis,
            n,
            p,
            gamma,
            centers,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.basis.dimension()
    }

    /// `γ_ij`.
    #[inline]
    pub fn gamma(&self, i: usize, j: usize) -> &[f64] {
        let l = self.dim();
        &self.gamma[j][i * l..(i + 1) * l]
    }

    /// The `n x L` block of covariate `j`.
    #[inline]
    pub fn block(&self, j: usize) -> &[f64] {
        &self.gamma[j]
    }

    /// Concatenation `(γ_i1, ..., γ_ip)`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.p * self.dim());
        for j in 0..self.p {
            out.extend_from_slice(self.gamma(i, j));
        }
        out
    }
}

/// Quadrature rule exact for products of a basis function with the
/// piecewise-linear interpolant of grid values.
pub fn design_rule(grid: &[f64], basis: &BasisSpec) -> QuadratureRule {
    let mut points: Vec<f64> = basis.breakpoints();
    points.extend(
        grid.iter()
            .copied()
            .filter(|&g| g > basis.domain_start && g < basis.domain_end),
    );
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    QuadratureRule::composite(&points, basis.degree + 1)
}

/// Computes `γ_ij` for every subject and covariate. Covariates enter as the
/// piecewise-linear interpolant of their grid values.
pub fn compute_gamma(dataset: &FunctionalDataset, basis: &BasisSpec) -> Result<DesignCache> {
    compute_gamma_impl(dataset, basis, None)
}

/// As [`compute_gamma`], subtracting `centers[j]` (grid values) from covariate `j` first.
pub fn compute_gamma_centered(
    dataset: &FunctionalDataset,
    basis: &BasisSpec,
    centers: Vec<Vec<f64>>,
) -> Result<DesignCache> {
    if centers.len() != dataset.p() || centers.iter().any(|c| c.len() != dataset.m()) {
        return Err(GhfmError::Dimension(
            "centering curves do not match p x m".into(),
        ));
    }
    compute_gamma_impl(dataset, basis, Some(centers))
}

fn compute_gamma_impl(
    dataset: &FunctionalDataset,
    basis: &BasisSpec,
    centers: Option<Vec<Vec<f64>>>,
) -> Result<DesignCache> {
    basis.validate()?;
    if basis.domain_start != 0.0 || (basis.domain_end - dataset.domain_end()).abs() > 1e-12 {
        return Err(GhfmError::Argument(format!(
            "basis domain [{}, {}] does not match the data domain [0, {}]",
            basis.domain_start,
            basis.domain_end,
            dataset.domain_end()
        )));
    }
    let rule = design_rule(dataset.grid(), basis);
    let bmat = basis_matrix(basis, &rule.nodes)?;
    let grid = dataset.grid();
    let m = grid.len();
    // interpolation stencil of each node: (left index, weight on the right)
    let stencil: Vec<(usize, f64)> = rule
        .nodes
        .iter()
        .map(|&t| {
            if t <= grid[0] {
                (0, 0.0)
            } else if t >= grid[m - 1] {
                (m - 2, 1.0)
            } else {
                let k = grid.partition_point(|&g| g <= t) - 1;
                (k, (t - grid[k]) / (grid[k + 1] - grid[k]))
            }
        })
        .collect();

    let (n, p, l) = (dataset.n(), dataset.p(), basis.dimension());
    let mut gamma = vec![vec![0.0; n * l]; p];
    let mut shifted = vec![0.0; m];
    for i in 0..n {
        for (j, block) in gamma.iter_mut().enumerate() {
            let raw = dataset.curve(i, j);
            let curve: &[f64] = match &centers {
                Some(c) => {
                    for k in 0..m {
                        shifted[k] = raw[k] - c[j][k];
                    }
                    &shifted
                }
                None => raw,
            };
            let out = &mut block[i * l..(i + 1) * l];
            for (q, &(k, w)) in stencil.iter().enumerate() {
                let xv = curve[k] * (1.0 - w) + curve[k + 1] * w;
                let s = rule.weights[q] * xv;
                if s != 0.0 {
                    crate::linalg::axpy(s, bmat.row(q), out);
                }
            }
        }
    }
    DesignCache::from_parts(*basis, n, p, gamma, centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn dataset(curves: Vec<Vec<f64>>) -> FunctionalDataset {
        let n = curves.len();
        let m = curves[0].len();
        let grid = FunctionalDataset::uniform_grid(m, (m - 1) as f64);
        FunctionalDataset::new(
            1,
            (m - 1) as f64,
            grid,
            curves.concat(),
            vec![0.0; n],
            Family::Gaussian,
            (0..n).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_curve_integrates_to_domain_length() {
        let ds = dataset(vec![vec![1.0; 24]]);
        let basis = BasisSpec::with_dimension(0.0, 23.0, 3, 35).unwrap();
        let cache = compute_gamma(&ds, &basis).unwrap();
        let s: f64 = cache.gamma(0, 0).iter().sum();
        assert!((s - 23.0).abs() < 1e-10);
    }

    #[test]
    fn zero_curve_gives_zero_gamma() {
        let ds = dataset(vec![vec![0.0; 24]]);
        let basis = BasisSpec::with_dimension(0.0, 23.0, 3, 20).unwrap();
        let cache = compute_gamma(&ds, &basis).unwrap();
        assert!(cache.gamma(0, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_invalid_datasets() {
        let grid = FunctionalDataset::uniform_grid(3, 2.0);
        let ids = vec!["a".to_string(), "a".to_string()];
        let err = FunctionalDataset::new(
            1,
            2.0,
            grid.clone(),
            vec![0.0; 6],
            vec![0.0, 1.0],
            Family::Bernoulli,
            ids,
        );
        assert!(matches!(err, Err(GhfmError::Dataset(_))));
        let err = FunctionalDataset::new(
            1,
            2.0,
            grid.clone(),
            vec![0.0; 6],
            vec![0.0, 2.0],
            Family::Bernoulli,
            vec!["a".into(), "b".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("subject b"));
        assert!(FunctionalDataset::new(
            1,
            2.0,
            vec![0.0, 2.0, 1.0],
            vec![0.0; 3],
            vec![0.0],
            Family::Gaussian,
            vec!["a".into()]
        )
        .is_err());
    }

    #[test]
    fn interpolation_is_constant_outside_the_grid() {
        let grid = [1.0, 2.0, 4.0];
        let vals = [3.0, 5.0, 1.0];
        assert_eq!(interpolate_linear(&grid, &vals, 0.0), 3.0);
        assert_eq!(interpolate_linear(&grid, &vals, 1.5), 4.0);
        assert_eq!(interpolate_linear(&grid, &vals, 3.0), 3.0);
        assert_eq!(interpolate_linear(&grid, &vals, 9.0), 1.0);
    }

    #[test]
    fn centering_removes_the_mean_curve() {
        let ds = dataset(vec![vec![1.0; 24], vec![3.0; 24]]);
        let basis = BasisSpec::with_dimension(0.0, 23.0, 3, 10).unwrap();
        let means = ds.covariate_means();
        assert!(means[0].iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let cache = compute_gamma_centered(&ds, &basis, means).unwrap();
        let s0: f64 = cache.gamma(0, 0).iter().sum();
        let s1: f64 = cache.gamma(1, 0).iter().sum();
        assert!((s0 + 23.0).abs() < 1e-10);
        assert!((s1 - 23.0).abs() < 1e-10);
    }
}
