//! Fused estimation of unit-specific coefficient functions.
//!
//! Minimizes
//!
//! ```text
//! (1/n) Σ_i nll(y_i, α + Σ_j γ_ijᵀ b_{u(i),j}) + φ Σ_{u,j} b_ujᵀ R b_uj
//!     + λ Σ_j Σ_{a≠b} ∫ |Bᵀ(b_aj - b_bj)| dt
//! ```
//!
//! by operator splitting. The absolute-value integral is discretized at the
//! nodes `t_q` of the composite Gauss-Legendre rule as `Σ_q w_q |·|`, and each
//! pair gets an auxiliary `z_abj = V(b_aj - b_bj) ∈ R^Q`. The `z` update is an
//! elementwise soft-threshold, so pairs whose fitted functions coincide get an
//! exactly zero `z`; those pairs define the subgroups.
//!
//! [`Splitting::PerUnit`] solves the same problem with one auxiliary
//! `z_uj ≈ V b_uj` per unit instead. At a fixed node the penalty
//! `Σ_{a<b} |z_a - z_b|` is a one-dimensional pairwise term whose proximal map
//! is exact: sort, shift by rank, and pool adjacent violators. Pooled units get
//! bit-identical `z`, which again marks them as fused. This needs `U Q`
//! auxiliaries instead of `U² Q / 2` and the coefficient update is block
//! diagonal.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::bspline::{basis_matrix, roughness_block, BasisSpec, QuadratureRule, SpanPolynomials};
use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::fdata::{DesignCache, FunctionalDataset};
use crate::linalg::{axpy, dot, Cholesky, Matrix};
use crate::model::{CoefficientSet, FitDiagnostics, FitResult, Partition};
use crate::precluster::PreclusterResult;
use crate::solver::{ArrowFactor, CouplingKind, FusionCoupling, UnitSystem};

/// Auxiliary variables used by the solver. Both minimize the same objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Splitting {
    /// One `z ∈ R^Q` per unit pair, updated by soft-thresholding.
    Pairwise,
    /// One `z ∈ R^Q` per unit, updated by the exact sorted proximal map.
    #[default]
    PerUnit,
}

/// Tuning and solver settings for a fused fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Fusion strength λ.
    pub lambda: f64,
    /// Roughness strength φ.
    pub phi: f64,
    /// Splitting penalty ρ.
    pub rho: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iters: usize,
    /// Ridge `ε ‖b‖²` added to every coefficient solve.
    pub ridge: f64,
    /// Residual balancing of ρ (x2 / ÷2 when one residual exceeds the other tenfold).
    pub adaptive_rho: bool,
    /// Auxiliary variables of the splitting.
    #[serde(default)]
    pub splitting: Splitting,
    /// Over-relaxation factor in `(0, 2)`; 1 is the plain iteration.
    #[serde(default = "unit_relaxation")]
    pub relaxation: f64,
    /// Re-fit each estimated subgroup with λ = 0 after fusion.
    pub refit: bool,
    /// Largest number of subjects fitted without pre-clustering.
    pub max_direct_units: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda: 0.0,
            phi: 0.0,
            rho: 1.0,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
            max_iters: 2000,
            ridge: 1e-8,
            adaptive_rho: false,
            splitting: Splitting::default(),
            relaxation: 1.0,
            refit: true,
            max_direct_units: 500,
        }
    }
}

fn unit_relaxation() -> f64 {
    1.0
}

impl PenaltyConfig {
    pub fn new(lambda: f64, phi: f64) -> Self {
        PenaltyConfig {
            lambda,
            phi,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.phi >= 0.0) || !(self.ridge >= 0.0) {
            return Err(GhfmError::Argument(
                "λ, φ and the ridge must be nonnegative".into(),
            ));
        }
        if !(self.rho > 0.0) || !(self.tol_primal > 0.0) || !(self.tol_dual > 0.0) {
            return Err(GhfmError::Argument(
                "ρ and the tolerances must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(GhfmError::Argument("max_iters must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(GhfmError::Argument("relaxation must lie in (0, 2)".into()));
        }
        Ok(())
    }
}

/// How subjects map onto the units whose coefficient functions are fused.
#[derive(Debug, Clone, Copy)]
pub enum Units<'a> {
    /// One unit per subject.
    Subjects,
    /// The groups of a pre-clustering.
    Groups(&'a PreclusterResult),
}

impl Units<'_> {
    fn resolve(&self, n: usize) -> Result<(Vec<usize>, usize)> {
        match self {
            Units::Subjects => Ok(((0..n).collect(), n)),
            Units::Groups(pre) => {
                if pre.assignment.len() != n {
                    return Err(GhfmError::Dimension(format!(
                        "pre-clustering covers {} subjects, dataset has {n}",
                        pre.assignment.len()
                    )));
                }
                Ok((pre.assignment.clone(), pre.k))
            }
        }
    }
}

/// Pairwise fusion variables: for covariate `j` and units `a < b`, the
/// thresholded differences `z` at the quadrature nodes and their scaled duals.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGraph {
    pub n_units: usize,
    pub p: usize,
    pub q: usize,
    /// `(a, b, j)` with `a < b`, in storage order.
    pub pairs: Vec<(usize, usize, usize)>,
    /// `pairs.len() x q` node values of `z`.
    pub node_values: Vec<f64>,
    /// `pairs.len() x q` scaled dual variables.
    pub duals: Vec<f64>,
}

impl FusionGraph {
    /// Empty graph (all `z` and duals zero) over `n_units` units.
    pub fn zeros(n_units: usize, p: usize, q: usize) -> FusionGraph {
        let mut pairs = Vec::with_capacity(p * n_units * n_units.saturating_sub(1) / 2);
        for j in 0..p {
            for a in 0..n_units {
                for b in (a + 1)..n_units {
                    pairs.push((a, b, j));
                }
            }
        }
        let len = pairs.len() * q;
        FusionGraph {
            n_units,
            p,
            q,
            pairs,
            node_values: vec![0.0; len],
            duals: vec![0.0; len],
        }
    }

    #[inline]
    pub fn z(&self, pair: usize) -> &[f64] {
        &self.node_values[pair * self.q..(pair + 1) * self.q]
    }

    #[inline]
    pub fn is_fused(&self, pair: usize) -> bool {
        self.z(pair).iter().all(|&v| v == 0.0)
    }
}

/// Per-covariate partition of the units: transitive closure of the pairs
/// whose `z` is exactly zero.
pub fn extract_subgroups(graph: &FusionGraph) -> Vec<Partition> {
    let mut finders: Vec<UnionFind> = (0..graph.p)
        .map(|_| UnionFind::new(graph.n_units))
        .collect();
    for (k, &(a, b, j)) in graph.pairs.iter().enumerate() {
        if graph.is_fused(k) {
            finders[j].union(a, b);
        }
    }
    finders
        .into_iter()
        .map(|mut uf| {
            let roots: Vec<usize> = (0..graph.n_units).map(|u| uf.find(u)).collect();
            Partition::from_labels(&roots)
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Per-unit auxiliaries of [`Splitting::PerUnit`], laid out `[u][j][q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitNodes {
    pub n_units: usize,
    pub p: usize,
    pub q: usize,
    pub node_values: Vec<f64>,
    pub duals: Vec<f64>,
}

impl UnitNodes {
    pub fn zeros(n_units: usize, p: usize, q: usize) -> UnitNodes {
        let len = n_units * p * q;
        UnitNodes {
            n_units,
            p,
            q,
            node_values: vec![0.0; len],
            duals: vec![0.0; len],
        }
    }

    #[inline]
    pub fn z(&self, unit: usize, j: usize) -> &[f64] {
        let k = unit * self.p + j;
        &self.node_values[k * self.q..(k + 1) * self.q]
    }

    /// Units `a`, `b` are fused for covariate `j` iff `z_aj - z_bj` is exactly zero.
    pub fn partitions(&self) -> Vec<Partition> {
        (0..self.p)
            .map(|j| {
                let mut reps: Vec<usize> = Vec::new();
                let labels: Vec<usize> = (0..self.n_units)
                    .map(|u| {
                        let zu = self.z(u, j);
                        match reps
                            .iter()
                            .position(|&r| self.z(r, j).iter().zip(zu).all(|(a, b)| a - b == 0.0))
                        {
                            Some(k) => k,
                            None => {
                                reps.push(u);
                                reps.len() - 1
                            }
                        }
                    })
                    .collect();
                Partition::from_labels(&labels)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Auxiliary {
    Pairwise(FusionGraph),
    PerUnit(UnitNodes),
}

impl Auxiliary {
    fn zeros(splitting: Splitting, n_units: usize, p: usize, q: usize) -> Auxiliary {
        match splitting {
            Splitting::Pairwise => Auxiliary::Pairwise(FusionGraph::zeros(n_units, p, q)),
            Splitting::PerUnit => Auxiliary::PerUnit(UnitNodes::zeros(n_units, p, q)),
        }
    }

    fn matches(&self, splitting: Splitting, n_units: usize, p: usize, q: usize) -> bool {
        match (self, splitting) {
            (Auxiliary::Pairwise(g), Splitting::Pairwise) => {
                g.n_units == n_units && g.p == p && g.q == q
            }
            (Auxiliary::PerUnit(z), Splitting::PerUnit) => {
                z.n_units == n_units && z.p == p && z.q == q
            }
            _ => false,
        }
    }

    /// Sets `z` consistent with the node values `vb` (`[u][j][q]`) and zeroes the duals.
    fn reset(&mut self, vb: &[f64]) {
        match self {
            Auxiliary::Pairwise(graph) => {
                let (p, q) = (graph.p, graph.q);
                for (k, &(a, b, j)) in graph.pairs.iter().enumerate() {
                    let za = &vb[(a * p + j) * q..(a * p + j + 1) * q];
                    let zb = &vb[(b * p + j) * q..(b * p + j + 1) * q];
                    for qq in 0..q {
                        graph.node_values[k * q + qq] = za[qq] - zb[qq];
                    }
                }
                graph.duals.iter_mut().for_each(|u| *u = 0.0);
            }
            Auxiliary::PerUnit(nodes) => {
                nodes.node_values.copy_from_slice(vb);
                nodes.duals.iter_mut().for_each(|u| *u = 0.0);
            }
        }
    }

    pub fn partitions(&self) -> Vec<Partition> {
        match self {
            Auxiliary::Pairwise(graph) => extract_subgroups(graph),
            Auxiliary::PerUnit(nodes) => nodes.partitions(),
        }
    }
}

/// Solver state that can seed a later fit (warm start along a λ path).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub alpha: f64,
    /// `units x (p * L)` coefficients before subgroup extraction.
    pub b: Vec<f64>,
    pub aux: Auxiliary,
    pub rho: f64,
}

/// Shared quantities derived from the basis.
pub(crate) struct BasisOperators {
    pub rule: QuadratureRule,
    /// `Q x L` basis values at the quadrature nodes.
    pub v: Matrix,
    pub roughness: Matrix,
}

impl BasisOperators {
    pub fn new(basis: &BasisSpec) -> Result<Self> {
        let rule = QuadratureRule::for_basis(basis);
        let v = basis_matrix(basis, &rule.nodes)?;
        let roughness = roughness_block(basis, &rule)?;
        Ok(BasisOperators { rule, v, roughness })
    }
}

/// `I_p ⊗ m`.
pub(crate) fn block_diag(m: &Matrix, p: usize) -> Matrix {
    let l = m.rows();
    let mut out = Matrix::zeros(p * l, p * l);
    for j in 0..p {
        for a in 0..l {
            for b in 0..l {
                out[(j * l + a, j * l + b)] = m[(a, b)];
            }
        }
    }
    out
}

/// Per-unit penalty `φ (I_p ⊗ R) + ε I`.
pub(crate) fn unit_penalty(roughness: &Matrix, p: usize, phi: f64, ridge: f64) -> Matrix {
    let mut pen = block_diag(roughness, p);
    pen.scale(phi);
    pen.add_diagonal(ridge);
    pen
}

/// Flattened `n x (p L)` design rows.
pub(crate) fn design_rows(cache: &DesignCache) -> Vec<f64> {
    let mut x = Vec::with_capacity(cache.n() * cache.p() * cache.dim());
    for i in 0..cache.n() {
        for j in 0..cache.p() {
            x.extend_from_slice(cache.gamma(i, j));
        }
    }
    x
}

fn check_inputs(dataset: &FunctionalDataset, cache: &DesignCache) -> Result<()> {
    if dataset.n() != cache.n() || dataset.p() != cache.p() {
        return Err(GhfmError::Dimension(format!(
            "dataset is {}x{} but design cache is {}x{}",
            dataset.n(),
            dataset.p(),
            cache.n(),
            cache.p()
        )));
    }
    if dataset.n() == 0 {
        return Err(GhfmError::Argument("empty dataset".into()));
    }
    Ok(())
}

/// The fused objective at `coefs` (one shared intercept), with the
/// absolute-value integrals evaluated exactly.
pub fn fused_objective(
    coefs: &CoefficientSet,
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    unit_of: &[usize],
    lambda: f64,
    phi: f64,
) -> Result<f64> {
    check_inputs(dataset, cache)?;
    let basis = cache.basis;
    let ops = BasisOperators::new(&basis)?;
    let (lik, rough) = smooth_terms(coefs, dataset, cache, unit_of, &ops.roughness)?;
    let mut fusion = 0.0;
    if lambda != 0.0 {
        let polys = SpanPolynomials::new(&basis)?;
        let mut diff = vec![0.0; coefs.l];
        for j in 0..coefs.p {
            for a in 0..coefs.units {
                for b in (a + 1)..coefs.units {
                    for (d, (x, y)) in diff
                        .iter_mut()
                        .zip(coefs.coef(a, j).iter().zip(coefs.coef(b, j)))
                    {
                        *d = x - y;
                    }
                    fusion += 2.0 * polys.abs_integral(&diff);
                }
            }
        }
    }
    Ok(lik + phi * rough + lambda * fusion)
}

/// As [`fused_objective`] with `∫|·|` replaced by the node-weighted sum the
/// solver minimizes.
pub fn fused_objective_surrogate(
    coefs: &CoefficientSet,
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    unit_of: &[usize],
    lambda: f64,
    phi: f64,
) -> Result<f64> {
    check_inputs(dataset, cache)?;
    let ops = BasisOperators::new(&cache.basis)?;
    let (lik, rough) = smooth_terms(coefs, dataset, cache, unit_of, &ops.roughness)?;
    let mut fusion = 0.0;
    let vb: Vec<Vec<f64>> = (0..coefs.units)
        .flat_map(|u| (0..coefs.p).map(move |j| (u, j)))
        .map(|(u, j)| ops.v.mul_vec(coefs.coef(u, j)))
        .collect();
    for j in 0..coefs.p {
        for a in 0..coefs.units {
            for b in (a + 1)..coefs.units {
                let (va, vbb) = (&vb[a * coefs.p + j], &vb[b * coefs.p + j]);
                for q in 0..ops.rule.len() {
                    fusion += 2.0 * ops.rule.weights[q] * (va[q] - vbb[q]).abs();
                }
            }
        }
    }
    Ok(lik + phi * rough + lambda * fusion)
}

/// `((1/n) Σ nll, Σ_{u,j} bᵀ R b)`.
fn smooth_terms(
    coefs: &CoefficientSet,
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    unit_of: &[usize],
    roughness: &Matrix,
) -> Result<(f64, f64)> {
    if coefs.l != cache.dim() || coefs.p != cache.p() {
        return Err(GhfmError::Dimension(
            "coefficients do not match the design".into(),
        ));
    }
    if let Some(&u) = unit_of.iter().find(|&&u| u >= coefs.units) {
        return Err(GhfmError::Dimension(format!("unit index {u} out of range")));
    }
    let eta = coefs.linear_predictor(cache, unit_of)?;
    let family = dataset.family();
    let mut lik = 0.0;
    for (&y, &e) in dataset.y().iter().zip(&eta) {
        lik += family.nll(y, e)?;
    }
    let mut rough = 0.0;
    for u in 0..coefs.units {
        for j in 0..coefs.p {
            rough += roughness.quad_form(coefs.coef(u, j));
        }
    }
    Ok((lik / dataset.n() as f64, rough))
}

/// `∫ |coefsᵀ B(t)| dt`, exact up to rounding.
pub fn abs_integral(basis: &BasisSpec, coefs: &[f64]) -> Result<f64> {
    Ok(SpanPolynomials::new(basis)?.abs_integral(coefs))
}

/// Fits unit-specific coefficient functions with pairwise fusion and returns
/// the subgroup structure.
pub fn fit_fused(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    units: Units<'_>,
    config: &PenaltyConfig,
) -> Result<FitResult> {
    fit_fused_warm(dataset, cache, units, config, None).map(|(fit, _)| fit)
}

/// [`fit_fused`] seeded from a previous solver state; also returns the final state.
pub fn fit_fused_warm(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    units: Units<'_>,
    config: &PenaltyConfig,
    warm: Option<&AdmmState>,
) -> Result<(FitResult, AdmmState)> {
    config.validate()?;
    check_inputs(dataset, cache)?;
    let (unit_of, n_units) = units.resolve(dataset.n())?;
    if matches!(units, Units::Subjects) && n_units > config.max_direct_units {
        return Err(GhfmError::Argument(format!(
            "{n_units} subjects exceed the direct-fit limit of {}; pre-cluster first",
            config.max_direct_units
        )));
    }
    let basis = cache.basis;
    let ops = BasisOperators::new(&basis)?;
    let (p, l) = (cache.p(), cache.dim());
    let s = p * l;
    let x = design_rows(cache);
    let penalty = unit_penalty(&ops.roughness, p, config.phi, config.ridge);
    let sys = UnitSystem {
        family: dataset.family(),
        y: dataset.y(),
        x: &x,
        s,
        unit_of: &unit_of,
        n_units,
        penalty: &penalty,
    };

    let null_alpha = dataset.family().null_intercept(dataset.y());
    let zero = CoefficientSet::zeros(n_units, p, l, null_alpha);
    let objective_initial =
        fused_objective(&zero, dataset, cache, &unit_of, config.lambda, config.phi)?;

    let q = ops.rule.len();
    let mut state = match warm {
        Some(w) => {
            if w.b.len() != n_units * s || !w.aux.matches(config.splitting, n_units, p, q) {
                return Err(GhfmError::Dimension(
                    "warm start does not match this problem".into(),
                ));
            }
            w.clone()
        }
        None => {
            let mut b = vec![0.0; n_units * s];
            if let Units::Groups(pre) = units {
                if pre.group_coefs.values.len() == b.len() {
                    b.copy_from_slice(&pre.group_coefs.values);
                }
            }
            let alpha = match units {
                Units::Groups(pre) => pre.group_coefs.intercept(0),
                Units::Subjects => null_alpha,
            };
            let mut aux = Auxiliary::zeros(config.splitting, n_units, p, q);
            aux.reset(&node_values(&ops.v, &b, n_units, p, l));
            AdmmState {
                alpha,
                b,
                aux,
                rho: config.rho,
            }
        }
    };

    let diag = run_admm(&sys, &ops, config, &mut state, p, l)?;

    let partitions = state.aux.partitions();
    let (alpha, coefs) = if config.refit {
        refit_partitions(
            dataset,
            cache,
            &unit_of,
            n_units,
            &partitions,
            config.phi,
            config.ridge,
        )?
    } else {
        average_partitions(state.alpha, &state.b, n_units, p, l, &partitions)
    };
    let objective_final =
        fused_objective(&coefs, dataset, cache, &unit_of, config.lambda, config.phi)?;
    let diagnostics = FitDiagnostics {
        objective_initial,
        objective_final,
        ..diag
    };
    let fit = FitResult {
        method: "ghfm".to_string(),
        family: dataset.family(),
        basis,
        alpha_hat: alpha,
        coefs,
        subject_ids: dataset.subject_ids().to_vec(),
        unit_of,
        partitions,
        diagnostics,
        lambda: config.lambda,
        phi: config.phi,
        centers: cache.centers.clone(),
    };
    Ok((fit, state))
}

/// `V b_uj` for every unit and covariate, laid out `[u][j][q]`.
fn node_values(v: &Matrix, b: &[f64], n_units: usize, p: usize, l: usize) -> Vec<f64> {
    let q = v.rows();
    let mut out = vec![0.0; n_units * p * q];
    for u in 0..n_units {
        for j in 0..p {
            let coef = &b[(u * p + j) * l..(u * p + j + 1) * l];
            let dst = &mut out[(u * p + j) * q..(u * p + j + 1) * q];
            for (qq, d) in dst.iter_mut().enumerate() {
                *d = dot(v.row(qq), coef);
            }
        }
    }
    out
}

/// `Vᵀ w` for every unit and covariate of a `[u][j][q]` array.
fn node_adjoint(v: &Matrix, w: &[f64], n_units: usize, p: usize) -> Vec<f64> {
    let (q, l) = (v.rows(), v.cols());
    let mut out = vec![0.0; n_units * p * l];
    for uj in 0..n_units * p {
        let src = &w[uj * q..(uj + 1) * q];
        let dst = &mut out[uj * l..(uj + 1) * l];
        for (qq, &val) in src.iter().enumerate() {
            if val != 0.0 {
                axpy(val, v.row(qq), dst);
            }
        }
    }
    out
}

/// `Σ_{b>u} w_ub - Σ_{a<u} w_au` for every unit, in node space.
fn aggregate_pairs(graph: &FusionGraph, w: &[f64], n_units: usize, p: usize) -> Vec<f64> {
    let q = graph.q;
    let mut out = vec![0.0; n_units * p * q];
    for (k, &(a, b, j)) in graph.pairs.iter().enumerate() {
        let src = &w[k * q..(k + 1) * q];
        for qq in 0..q {
            out[(a * p + j) * q + qq] += src[qq];
            out[(b * p + j) * q + qq] -= src[qq];
        }
    }
    out
}

/// Residuals, the stopping rule and ρ adaptation are evaluated every this many iterations.
const CHECK_EVERY: usize = 10;

/// Shared per-fit solver context.
struct Admm<'a, 'b> {
    sys: &'a UnitSystem<'b>,
    ops: &'a BasisOperators,
    config: &'a PenaltyConfig,
    /// `I_p ⊗ VᵀV`.
    g_block: Matrix,
    p: usize,
    l: usize,
    /// `2 λ w_q`.
    kappa: Vec<f64>,
}

impl Admm<'_, '_> {
    fn kind(&self) -> CouplingKind {
        match self.config.splitting {
            Splitting::Pairwise => CouplingKind::Pairwise,
            Splitting::PerUnit => CouplingKind::PerUnit,
        }
    }

    /// Coefficient-and-intercept update of one splitting iteration.
    fn solve_coefficients(
        &self,
        lin: &[f64],
        alpha: &mut f64,
        b: &mut Vec<f64>,
        rho: f64,
        cached: &mut Option<(f64, ArrowFactor)>,
    ) -> Result<()> {
        let sys = self.sys;
        let kind = self.kind();
        let with_fusion = sys.n_units > 1;
        match sys.family {
            Family::Gaussian => {
                let stale = cached.as_ref().is_none_or(|(r, _)| *r != rho);
                if stale {
                    let curv = vec![1.0; sys.y.len()];
                    let f = sys.factor(&curv, with_fusion.then_some((kind, rho, &self.g_block)))?;
                    *cached = Some((rho, f));
                }
                let (_, factor) = cached.as_ref().expect("factor just built");
                let (a, x) = sys.solve_gaussian(factor, with_fusion.then_some((rho, lin)));
                *alpha = a;
                *b = x;
            }
            Family::Bernoulli => {
                let coupling = FusionCoupling {
                    kind,
                    rho,
                    g: &self.g_block,
                    linear: lin,
                };
                let fusion = with_fusion.then_some(&coupling);
                sys.newton(alpha, b, fusion, 1e-8, 50)?;
            }
        }
        Ok(())
    }

    /// Smooth part of the objective at `(α, b)`.
    fn smooth(&self, alpha: f64, b: &[f64]) -> Result<f64> {
        self.sys.objective(alpha, b, None)
    }
}

/// Stopping thresholds of the absolute-plus-relative residual test.
fn converged(
    config: &PenaltyConfig,
    dims: (f64, f64),
    primal: f64,
    dual: f64,
    scale_pri: f64,
    scale_dual: f64,
) -> bool {
    let eps_pri = dims.0.sqrt() * config.tol_primal + config.tol_primal * scale_pri;
    let eps_dual = dims.1.sqrt() * config.tol_dual + config.tol_dual * scale_dual;
    primal <= eps_pri && dual <= eps_dual
}

/// Residual balancing; returns the factor applied to ρ.
fn balance(config: &PenaltyConfig, primal: f64, dual: f64) -> f64 {
    if !config.adaptive_rho {
        1.0
    } else if primal > 10.0 * dual {
        2.0
    } else if dual > 10.0 * primal {
        0.5
    } else {
        1.0
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn run_admm(
    sys: &UnitSystem,
    ops: &BasisOperators,
    config: &PenaltyConfig,
    state: &mut AdmmState,
    p: usize,
    l: usize,
) -> Result<FitDiagnostics> {
    let admm = Admm {
        sys,
        ops,
        config,
        g_block: block_diag(&ops.v.gram(), p),
        p,
        l,
        kappa: ops
            .rule
            .weights
            .iter()
            .map(|w| 2.0 * config.lambda * w)
            .collect(),
    };
    let AdmmState { alpha, b, aux, rho } = state;
    let mut diag = FitDiagnostics {
        rho: *rho,
        ..Default::default()
    };
    if sys.n_units == 1 {
        // no fusion term: one penalized fit
        admm.solve_coefficients(&vec![0.0; p * l], alpha, b, *rho, &mut None)?;
        diag.converged = true;
        diag.objective_trajectory.push(admm.smooth(*alpha, b)?);
        return Ok(diag);
    }
    match aux {
        Auxiliary::Pairwise(graph) => run_pairwise(&admm, alpha, b, rho, graph, &mut diag)?,
        Auxiliary::PerUnit(nodes) => run_per_unit(&admm, alpha, b, rho, nodes, &mut diag)?,
    }
    Ok(diag)
}

fn run_pairwise(
    admm: &Admm,
    alpha: &mut f64,
    b: &mut Vec<f64>,
    rho: &mut f64,
    graph: &mut FusionGraph,
    diag: &mut FitDiagnostics,
) -> Result<()> {
    let (config, ops, p, l) = (admm.config, admm.ops, admm.p, admm.l);
    let n_units = admm.sys.n_units;
    let q = ops.rule.len();
    let n_pairs = graph.pairs.len();
    let dims = ((n_pairs * q) as f64, (n_units * p * l) as f64);
    let relax = config.relaxation;
    let mut cached: Option<(f64, ArrowFactor)> = None;
    let mut c = vec![0.0; n_pairs * q];
    let mut z_prev = vec![0.0; n_pairs * q];
    for iter in 1..=config.max_iters {
        let check = iter % CHECK_EVERY == 0 || iter == config.max_iters;
        for (ck, (z, u)) in c.iter_mut().zip(graph.node_values.iter().zip(&graph.duals)) {
            *ck = z - u;
        }
        let lin = node_adjoint(&ops.v, &aggregate_pairs(graph, &c, n_units, p), n_units, p);
        admm.solve_coefficients(&lin, alpha, b, *rho, &mut cached)?;

        let vb = node_values(&ops.v, b, n_units, p, l);
        if check {
            z_prev.copy_from_slice(&graph.node_values);
        }
        let (mut r2, mut ab2, mut z2, mut l1) = (0.0, 0.0, 0.0, 0.0);
        for (k, &(a, bb, j)) in graph.pairs.iter().enumerate() {
            let va = &vb[(a * p + j) * q..(a * p + j + 1) * q];
            let vbb = &vb[(bb * p + j) * q..(bb * p + j + 1) * q];
            let zk = &mut graph.node_values[k * q..(k + 1) * q];
            let uk = &mut graph.duals[k * q..(k + 1) * q];
            for qq in 0..q {
                let d = va[qq] - vbb[qq];
                let v = relax * d + (1.0 - relax) * zk[qq] + uk[qq];
                let znew = soft_threshold(v, admm.kappa[qq] / *rho);
                if check {
                    r2 += (d - znew) * (d - znew);
                    ab2 += d * d;
                    z2 += znew * znew;
                    l1 += admm.kappa[qq] * d.abs();
                }
                zk[qq] = znew;
                uk[qq] = v - znew;
            }
        }
        diag.iterations = iter;
        if !check {
            continue;
        }
        for (zp, &z) in z_prev.iter_mut().zip(&graph.node_values) {
            *zp = z - *zp;
        }
        let primal = r2.sqrt();
        let dual = *rho
            * norm(&node_adjoint(
                &ops.v,
                &aggregate_pairs(graph, &z_prev, n_units, p),
                n_units,
                p,
            ));
        let dual_scale = *rho
            * norm(&node_adjoint(
                &ops.v,
                &aggregate_pairs(graph, &graph.duals, n_units, p),
                n_units,
                p,
            ));
        diag.primal_residual = primal;
        diag.dual_residual = dual;
        diag.rho = *rho;
        diag.objective_trajectory.push(admm.smooth(*alpha, b)? + l1);
        if converged(
            config,
            dims,
            primal,
            dual,
            ab2.sqrt().max(z2.sqrt()),
            dual_scale,
        ) {
            diag.converged = true;
            break;
        }
        let factor = balance(config, primal, dual);
        if factor != 1.0 {
            *rho *= factor;
            graph.duals.iter_mut().for_each(|u| *u /= factor);
        }
    }
    Ok(())
}

fn run_per_unit(
    admm: &Admm,
    alpha: &mut f64,
    b: &mut Vec<f64>,
    rho: &mut f64,
    nodes: &mut UnitNodes,
    diag: &mut FitDiagnostics,
) -> Result<()> {
    let (config, ops, p, l) = (admm.config, admm.ops, admm.p, admm.l);
    let n_units = admm.sys.n_units;
    let q = ops.rule.len();
    let len = n_units * p * q;
    let dims = (len as f64, (n_units * p * l) as f64);
    let relax = config.relaxation;
    let stride = p * q;
    let mut cached: Option<(f64, ArrowFactor)> = None;
    let mut c = vec![0.0; len];
    let mut z_prev = vec![0.0; len];
    let mut orders: Vec<Vec<usize>> = (0..stride).map(|_| (0..n_units).collect()).collect();
    let mut scratch = SortedProx::new(n_units);
    let mut v = vec![0.0; n_units];
    let mut out = vec![0.0; n_units];
    for iter in 1..=config.max_iters {
        let check = iter % CHECK_EVERY == 0 || iter == config.max_iters;
        for (ck, (z, u)) in c.iter_mut().zip(nodes.node_values.iter().zip(&nodes.duals)) {
            *ck = z - u;
        }
        let lin = node_adjoint(&ops.v, &c, n_units, p);
        admm.solve_coefficients(&lin, alpha, b, *rho, &mut cached)?;

        let vb = node_values(&ops.v, b, n_units, p, l);
        if check {
            z_prev.copy_from_slice(&nodes.node_values);
        }
        let (mut r2, mut ab2, mut z2, mut l1) = (0.0, 0.0, 0.0, 0.0);
        for (jq, order) in orders.iter_mut().enumerate() {
            let kappa = admm.kappa[jq % q];
            for u in 0..n_units {
                let idx = u * stride + jq;
                v[u] = relax * vb[idx] + (1.0 - relax) * nodes.node_values[idx] + nodes.duals[idx];
            }
            scratch.prox(&v, kappa / *rho, order, &mut out);
            for u in 0..n_units {
                let idx = u * stride + jq;
                let znew = out[u];
                if check {
                    let d = vb[idx];
                    r2 += (d - znew) * (d - znew);
                    ab2 += d * d;
                    z2 += znew * znew;
                }
                nodes.node_values[idx] = znew;
                nodes.duals[idx] = v[u] - znew;
            }
            if check {
                for u in 0..n_units {
                    v[u] = vb[u * stride + jq];
                }
                l1 += kappa * pairwise_abs_sum(&v, order);
            }
        }
        diag.iterations = iter;
        if !check {
            continue;
        }
        for (zp, &z) in z_prev.iter_mut().zip(&nodes.node_values) {
            *zp = z - *zp;
        }
        let primal = r2.sqrt();
        let dual = *rho * norm(&node_adjoint(&ops.v, &z_prev, n_units, p));
        let dual_scale = *rho * norm(&node_adjoint(&ops.v, &nodes.duals, n_units, p));
        diag.primal_residual = primal;
        diag.dual_residual = dual;
        diag.rho = *rho;
        diag.objective_trajectory.push(admm.smooth(*alpha, b)? + l1);
        if converged(
            config,
            dims,
            primal,
            dual,
            ab2.sqrt().max(z2.sqrt()),
            dual_scale,
        ) {
            diag.converged = true;
            break;
        }
        let factor = balance(config, primal, dual);
        if factor != 1.0 {
            *rho *= factor;
            nodes.duals.iter_mut().for_each(|u| *u /= factor);
        }
    }
    Ok(())
}

/// `Σ_{a<b} |x_a - x_b|`, re-sorting `order` by `x`.
fn pairwise_abs_sum(x: &[f64], order: &mut [usize]) -> f64 {
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let n = x.len() as f64;
    order
        .iter()
        .enumerate()
        .map(|(r, &i)| (2.0 * r as f64 - n + 1.0) * x[i])
        .sum()
}

/// Proximal map of `κ Σ_{a<b} |x_a - x_b|` on a vector.
///
/// The minimizer keeps the order of `v`; in sorted order it is the
/// nondecreasing least-squares fit to `v_(r) - κ (2r - U + 1)`, found by
/// pooling adjacent violators.
struct SortedProx {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl SortedProx {
    fn new(n: usize) -> Self {
        SortedProx {
            sums: Vec::with_capacity(n),
            counts: Vec::with_capacity(n),
        }
    }

    /// Writes the minimizer of `½‖x - v‖² + κ Σ_{a<b} |x_a - x_b|` to `out`.
    /// `order` is any permutation on entry (the previous order is a good start).
    fn prox(&mut self, v: &[f64], kappa: f64, order: &mut [usize], out: &mut [f64]) {
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        let n = v.len() as f64;
        self.sums.clear();
        self.counts.clear();
        for (r, &i) in order.iter().enumerate() {
            let mut sum = v[i] - kappa * (2.0 * r as f64 - n + 1.0);
            let mut count = 1;
            while let (Some(&s), Some(&c)) = (self.sums.last(), self.counts.last()) {
                // merge while the previous block's mean is not below this one's
                if s * count as f64 >= sum * c as f64 {
                    sum += s;
                    count += c;
                    self.sums.pop();
                    self.counts.pop();
                } else {
                    break;
                }
            }
            self.sums.push(sum);
            self.counts.push(count);
        }
        let mut r = 0;
        for (&s, &c) in self.sums.iter().zip(&self.counts) {
            let mean = s / c as f64;
            for &i in &order[r..r + c] {
                out[i] = mean;
            }
            r += c;
        }
    }
}

#[inline]
fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Replaces every unit's coefficients by its subgroup average.
fn average_partitions(
    alpha: f64,
    b: &[f64],
    n_units: usize,
    p: usize,
    l: usize,
    partitions: &[Partition],
) -> (f64, CoefficientSet) {
    let mut coefs = CoefficientSet::from_shared(n_units, p, l, alpha, b.to_vec())
        .expect("dimensions checked by caller");
    for (j, part) in partitions.iter().enumerate() {
        for group in &part.groups {
            let mut mean = vec![0.0; l];
            for &u in group {
                axpy(1.0, &b[(u * p + j) * l..(u * p + j + 1) * l], &mut mean);
            }
            let inv = 1.0 / group.len() as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
            for &u in group {
                coefs.coef_mut(u, j).copy_from_slice(&mean);
            }
        }
    }
    (alpha, coefs)
}

/// A `λ` at which every unit is fused, for the node-weighted penalty.
///
/// At the shared fit `b` the stationarity residual of unit `u` is
/// `d_u = g_u + 2 P b`. Representing `d_u` by the spline `h_u` with
/// `∫ B h_u = d_u`, the choice `s_ab = (h_a - h_b) / (2 U λ)` is a valid
/// subgradient whenever `λ ≥ max_{j,q} range_u h_u(t_q) / (2U)`, which is the
/// returned value. It is an upper bound, usually within a small factor of the
/// smallest fusing `λ`.
pub fn lambda_max(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    units: Units<'_>,
    phi: f64,
    ridge: f64,
) -> Result<f64> {
    check_inputs(dataset, cache)?;
    let (unit_of, n_units) = units.resolve(dataset.n())?;
    let ops = BasisOperators::new(&cache.basis)?;
    let (p, l) = (cache.p(), cache.dim());
    let s = p * l;
    let x = design_rows(cache);
    let family = dataset.family();
    let k = n_units as f64;
    let penalty = unit_penalty(&ops.roughness, p, phi, ridge);
    let mut shared = penalty.clone();
    shared.scale(k);
    let zeros = vec![0; dataset.n()];
    let sys = UnitSystem {
        family,
        y: dataset.y(),
        x: &x,
        s,
        unit_of: &zeros,
        n_units: 1,
        penalty: &shared,
    };
    let mut alpha = family.null_intercept(dataset.y());
    let mut b = vec![0.0; s];
    sys.newton(&mut alpha, &mut b, None, 1e-10, 100)?;
    if n_units < 2 {
        return Ok(0.0);
    }
    let pen_grad: Vec<f64> = penalty.mul_vec(&b).into_iter().map(|v| 2.0 * v).collect();
    let mut d: Vec<f64> = (0..n_units)
        .flat_map(|_| pen_grad.iter().copied())
        .collect();
    let inv_n = 1.0 / dataset.n() as f64;
    for (i, &u) in unit_of.iter().enumerate() {
        let row = &x[i * s..(i + 1) * s];
        let (g, _) = family.grad_hess(dataset.y()[i], alpha + dot(row, &b))?;
        axpy(g * inv_n, row, &mut d[u * s..(u + 1) * s]);
    }
    let q = ops.rule.len();
    let mut gram = Matrix::zeros(l, l);
    for qq in 0..q {
        gram.add_outer(ops.rule.weights[qq], ops.v.row(qq));
    }
    let chol = Cholesky::new(&gram)?;
    let mut lo = vec![f64::INFINITY; p * q];
    let mut hi = vec![f64::NEG_INFINITY; p * q];
    for u in 0..n_units {
        for j in 0..p {
            let c = chol.solve(&d[u * s + j * l..u * s + (j + 1) * l]);
            for qq in 0..q {
                let h = dot(ops.v.row(qq), &c);
                lo[j * q + qq] = lo[j * q + qq].min(h);
                hi[j * q + qq] = hi[j * q + qq].max(h);
            }
        }
    }
    let range = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    Ok(range / (2.0 * k))
}

/// Re-fits the model with one coefficient function per estimated subgroup and
/// no fusion penalty. Each subgroup's roughness is penalized once.
pub fn refit_partitions(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    unit_of: &[usize],
    n_units: usize,
    partitions: &[Partition],
    phi: f64,
    ridge: f64,
) -> Result<(f64, CoefficientSet)> {
    let (p, l) = (cache.p(), cache.dim());
    let ops = BasisOperators::new(&cache.basis)?;
    let family = dataset.family();
    let null_alpha = family.null_intercept(dataset.y());
    let group_coefs: Vec<Vec<f64>>; // per covariate: groups x L
    let alpha;
    if p == 1 {
        let part = &partitions[0];
        let group_of: Vec<usize> = unit_of.iter().map(|&u| part.labels[u]).collect();
        let x = design_rows(cache);
        let penalty = unit_penalty(&ops.roughness, 1, phi, ridge);
        let sys = UnitSystem {
            family,
            y: dataset.y(),
            x: &x,
            s: l,
            unit_of: &group_of,
            n_units: part.len(),
            penalty: &penalty,
        };
        let mut a = null_alpha;
        let mut b = vec![0.0; part.len() * l];
        sys.newton(&mut a, &mut b, None, 1e-10, 100)?;
        alpha = a;
        group_coefs = vec![b];
    } else {
        let (a, per_cov) = refit_dense(
            dataset,
            cache,
            unit_of,
            partitions,
            &ops.roughness,
            phi,
            ridge,
        )?;
        alpha = a;
        group_coefs = per_cov;
    }
    let mut coefs = CoefficientSet::zeros(n_units, p, l, alpha);
    for (j, part) in partitions.iter().enumerate() {
        for u in 0..n_units {
            let g = part.labels[u];
            coefs
                .coef_mut(u, j)
                .copy_from_slice(&group_coefs[j][g * l..(g + 1) * l]);
        }
    }
    Ok((alpha, coefs))
}

/// Dense Newton solve for covariate-specific subgroup structures (`p > 1`).
fn refit_dense(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    unit_of: &[usize],
    partitions: &[Partition],
    roughness: &Matrix,
    phi: f64,
    ridge: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (n, p, l) = (dataset.n(), cache.p(), cache.dim());
    let family = dataset.family();
    let mut offsets = Vec::with_capacity(p);
    let mut dim = 1;
    for part in partitions {
        offsets.push(dim);
        dim += part.len() * l;
    }
    let col = |i: usize, j: usize| offsets[j] + partitions[j].labels[unit_of[i]] * l;
    let mut theta = vec![0.0; dim];
    theta[0] = family.null_intercept(dataset.y());
    let inv_n = 1.0 / n as f64;

    let objective = |theta: &[f64]| -> Result<f64> {
        let mut val = 0.0;
        for i in 0..n {
            let mut eta = theta[0];
            for j in 0..p {
                let c = col(i, j);
                eta += dot(cache.gamma(i, j), &theta[c..c + l]);
            }
            val += family.nll(dataset.y()[i], eta)? * inv_n;
        }
        for (j, part) in partitions.iter().enumerate() {
            for g in 0..part.len() {
                let c = offsets[j] + g * l;
                let blk = &theta[c..c + l];
                val += phi * roughness.quad_form(blk) + ridge * dot(blk, blk);
            }
        }
        Ok(val)
    };

    let mut current = objective(&theta)?;
    for _ in 0..100 {
        let mut grad = vec![0.0; dim];
        let mut hess = Matrix::zeros(dim, dim);
        for i in 0..n {
            let mut eta = theta[0];
            for j in 0..p {
                let c = col(i, j);
                eta += dot(cache.gamma(i, j), &theta[c..c + l]);
            }
            let (g, h) = family.grad_hess(dataset.y()[i], eta)?;
            // sparse feature vector: intercept + p blocks
            let mut idx = Vec::with_capacity(1 + p * l);
            let mut val = Vec::with_capacity(1 + p * l);
            idx.push(0);
            val.push(1.0);
            for j in 0..p {
                let c = col(i, j);
                for (k, &gv) in cache.gamma(i, j).iter().enumerate() {
                    idx.push(c + k);
                    val.push(gv);
                }
            }
            for (a, &ia) in idx.iter().enumerate() {
                grad[ia] += g * val[a] * inv_n;
                for (b, &ib) in idx.iter().enumerate() {
                    hess[(ia, ib)] += h * val[a] * val[b] * inv_n;
                }
            }
        }
        for (j, part) in partitions.iter().enumerate() {
            for g in 0..part.len() {
                let c = offsets[j] + g * l;
                for a in 0..l {
                    grad[c + a] += 2.0 * ridge * theta[c + a];
                    hess[(c + a, c + a)] += 2.0 * ridge;
                    for b in 0..l {
                        grad[c + a] += 2.0 * phi * roughness[(a, b)] * theta[c + b];
                        hess[(c + a, c + b)] += 2.0 * phi * roughness[(a, b)];
                    }
                }
            }
        }
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm < 1e-10 {
            break;
        }
        let step = Cholesky::new(&hess)
            .map_err(|e| GhfmError::Numeric(format!("subgroup refit system: {e}")))?
            .solve(&grad);
        let slope = -dot(&grad, &step);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, d)| a - t * d).collect();
            let val = objective(&trial)?;
            if val <= current + 1e-4 * t * slope {
                theta = trial;
                current = val;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || family == Family::Gaussian && t == 1.0 && gnorm < 1e-6 {
            break;
        }
    }
    let per_cov = partitions
        .iter()
        .enumerate()
        .map(|(j, part)| theta[offsets[j]..offsets[j] + part.len() * l].to_vec())
        .collect();
    Ok((theta[0], per_cov))
}
