//! Seeded simulation designs with known subgroups.
//!
//! All three designs share one covariate `X_i(t) = vᵢᵀ B_x(t)` on `[0, 23]`
//! with `vᵢ ~ N(3·1, I)` on a 26-dimensional basis, observed on the hourly
//! grid `0, 1, ..., 23`. Outcomes are generated from the smooth `X_i`.
//!
//! * design 1: four equal subgroups, `b_i = c_g·1 + ε'_i` on a
//!   35-dimensional basis with `c = (20, 6, -10, -40)`, Gaussian outcomes;
//! * design 2: two equal subgroups with `β = sin` and `β = cos`, Gaussian;
//! * design 3: two equal subgroups, `c = (3, -3)`, Bernoulli outcomes.
//!
//! Randomness is drawn from per-subject ChaCha streams, so a subject's draws
//! do not depend on `n` or on the order of generation. Replicate `r` redraws
//! `X` and the outcome noise for the same subjects and coefficient functions;
//! replicate 0 is the training sample.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::bspline::{eval_basis, eval_spline, BasisSpec, QuadratureRule};
use crate::error::{GhfmError, Result};
use crate::family::{sigmoid, Family};
use crate::fdata::FunctionalDataset;
use crate::linalg::dot;

/// A coefficient function: a spline or one of the closed forms used by design 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Curve {
    Spline { basis: BasisSpec, coefs: Vec<f64> },
    Sin,
    Cos,
}

impl Curve {
    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            Curve::Spline { basis, coefs } => eval_spline(basis, coefs, t),
            Curve::Sin => Ok(t.sin()),
            Curve::Cos => Ok(t.cos()),
        }
    }

    /// Breakpoints where the curve is not smooth (empty for closed forms).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Curve::Spline { basis, .. } => basis.breakpoints(),
            _ => Vec::new(),
        }
    }
}

/// Generator settings not fixed by the design itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Standard deviation of the Gaussian outcome noise.
    pub noise_sd: f64,
    /// True intercept.
    pub alpha: f64,
    pub x_degree: usize,
    pub x_dim: usize,
    pub beta_degree: usize,
    pub beta_dim: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            noise_sd: 1.0,
            alpha: 0.0,
            x_degree: 3,
            x_dim: 26,
            beta_degree: 3,
            beta_dim: 35,
        }
    }
}

pub const DOMAIN_END: f64 = 23.0;
pub const GRID_POINTS: usize = 24;
const X_MEAN: f64 = 3.0;

const PURPOSE_X: u64 = 0;
const PURPOSE_NOISE: u64 = 1;
const PURPOSE_BETA: u64 = 2;

/// Everything needed to evaluate estimates against, and to redraw data from,
/// a simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub setting: u8,
    pub n: usize,
    pub family: Family,
    /// True subgroup of every subject, one vector per covariate.
    pub labels: Vec<Vec<usize>>,
    /// Number of true subgroups per covariate.
    pub n_groups: Vec<usize>,
    /// True coefficient function of every subject (single covariate).
    pub beta: Vec<Curve>,
    pub alpha_true: f64,
    pub sigma_eps_prime: f64,
    pub seed: u64,
    pub options: SimOptions,
    pub subject_ids: Vec<String>,
}

impl SyntheticTruth {
    pub fn x_basis(&self) -> Result<BasisSpec> {
        BasisSpec::with_dimension(0.0, DOMAIN_END, self.options.x_degree, self.options.x_dim)
    }

    pub fn beta_basis(&self) -> Result<BasisSpec> {
        BasisSpec::with_dimension(
            0.0,
            DOMAIN_END,
            self.options.beta_degree,
            self.options.beta_dim,
        )
    }
}

fn subject_rng(seed: u64, subject: usize, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 40) | (purpose << 32) | subject as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn subject_id(i: usize) -> String {
    format!("s{:05}", i + 1)
}

/// Design 1: four Gaussian subgroups. Requires `n` divisible by 4.
pub fn generate_setting1(
    n: usize,
    sigma_prime: f64,
    seed: u64,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    generate_setting1_with(n, sigma_prime, seed, &SimOptions::default())
}

pub fn generate_setting1_with(
    n: usize,
    sigma_prime: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    if n == 0 || !n.is_multiple_of(4) {
        return Err(GhfmError::Argument(format!(
            "design 1 needs n divisible by 4, got {n}"
        )));
    }
    let truth = spline_truth(
        1,
        n,
        &[20.0, 6.0, -10.0, -40.0],
        sigma_prime,
        seed,
        opts,
        Family::Gaussian,
    )?;
    let data = draw_replicate(&truth, 0)?;
    Ok((data, truth))
}

/// Design 2: `β = sin` for the first half, `β = cos` for the second. Requires even `n`.
pub fn generate_setting2(n: usize, seed: u64) -> Result<(FunctionalDataset, SyntheticTruth)> {
    generate_setting2_with(n, seed, &SimOptions::default())
}

pub fn generate_setting2_with(
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(GhfmError::Argument(format!(
            "design 2 needs an even n, got {n}"
        )));
    }
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let beta = labels
        .iter()
        .map(|&g| if g == 0 { Curve::Sin } else { Curve::Cos })
        .collect();
    let truth = SyntheticTruth {
        setting: 2,
        n,
        family: Family::Gaussian,
        labels: vec![labels],
        n_groups: vec![2],
        beta,
        alpha_true: opts.alpha,
        sigma_eps_prime: 0.0,
        seed,
        options: *opts,
        subject_ids: (0..n).map(subject_id).collect(),
    };
    let data = draw_replicate(&truth, 0)?;
    Ok((data, truth))
}

/// Design 3: two Bernoulli subgroups. Requires even `n`.
pub fn generate_setting3(
    n: usize,
    sigma_prime: f64,
    seed: u64,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    generate_setting3_with(n, sigma_prime, seed, &SimOptions::default())
}

pub fn generate_setting3_with(
    n: usize,
    sigma_prime: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<(FunctionalDataset, SyntheticTruth)> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(GhfmError::Argument(format!(
            "design 3 needs an even n, got {n}"
        )));
    }
    let truth = spline_truth(
        3,
        n,
        &[3.0, -3.0],
        sigma_prime,
        seed,
        opts,
        Family::Bernoulli,
    )?;
    let data = draw_replicate(&truth, 0)?;
    Ok((data, truth))
}

fn spline_truth(
    setting: u8,
    n: usize,
    centers: &[f64],
    sigma_prime: f64,
    seed: u64,
    opts: &SimOptions,
    family: Family,
) -> Result<SyntheticTruth> {
    if !(sigma_prime >= 0.0) || !sigma_prime.is_finite() {
        return Err(GhfmError::Argument(format!(
            "σ' = {sigma_prime} must be finite and nonnegative"
        )));
    }
    let basis = BasisSpec::with_dimension(0.0, DOMAIN_END, opts.beta_degree, opts.beta_dim)?;
    let groups = centers.len();
    let size = n / groups;
    let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
    let beta = labels
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let mut rng = subject_rng(seed, i, 0, PURPOSE_BETA);
            let coefs = (0..opts.beta_dim)
                .map(|_| centers[g] + sigma_prime * normal(&mut rng))
                .collect();
            Curve::Spline { basis, coefs }
        })
        .collect();
    Ok(SyntheticTruth {
        setting,
        n,
        family,
        labels: vec![labels],
        n_groups: vec![groups],
        beta,
        alpha_true: opts.alpha,
        sigma_eps_prime: sigma_prime,
        seed,
        options: *opts,
        subject_ids: (0..n).map(subject_id).collect(),
    })
}

/// Draws covariates and outcomes for every subject of `truth`. Replicate 0 is
/// the training sample; other replicates are independent new observations of
/// the same subjects.
pub fn draw_replicate(truth: &SyntheticTruth, replicate: u64) -> Result<FunctionalDataset> {
    let x_basis = truth.x_basis()?;
    let grid = FunctionalDataset::uniform_grid(GRID_POINTS, DOMAIN_END);
    let opts = &truth.options;
    let mut x = Vec::with_capacity(truth.n * GRID_POINTS);
    let mut y = Vec::with_capacity(truth.n);
    let grid_basis: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| eval_basis(&x_basis, t))
        .collect::<Result<_>>()?;
    for i in 0..truth.n {
        let mut rng = subject_rng(truth.seed, i, replicate, PURPOSE_X);
        let v: Vec<f64> = (0..opts.x_dim).map(|_| X_MEAN + normal(&mut rng)).collect();
        x.extend(grid_basis.iter().map(|row| dot(row, &v)));
        let eta = truth.alpha_true + inner_product(&x_basis, &v, &truth.beta[i])?;
        let mut noise = subject_rng(truth.seed, i, replicate, PURPOSE_NOISE);
        y.push(match truth.family {
            Family::Gaussian => eta + opts.noise_sd * normal(&mut noise),
            Family::Bernoulli => f64::from(u8::from(noise.random::<f64>() < sigmoid(eta))),
        });
    }
    FunctionalDataset::new(
        1,
        DOMAIN_END,
        grid,
        x,
        y,
        truth.family,
        truth.subject_ids.clone(),
    )
}

/// Linear predictor without the intercept, `∫ X_i β_i`, for replicate `replicate`.
pub fn true_signal(truth: &SyntheticTruth, replicate: u64) -> Result<Vec<f64>> {
    let x_basis = truth.x_basis()?;
    (0..truth.n)
        .map(|i| {
            let mut rng = subject_rng(truth.seed, i, replicate, PURPOSE_X);
            let v: Vec<f64> = (0..truth.options.x_dim)
                .map(|_| X_MEAN + normal(&mut rng))
                .collect();
            inner_product(&x_basis, &v, &truth.beta[i])
        })
        .collect()
}

/// `∫ (vᵀ B_x(t)) β(t) dt` over the domain. Exact for spline `β`; for the
/// closed forms the rule is refined until the error is at rounding level.
fn inner_product(x_basis: &BasisSpec, v: &[f64], beta: &Curve) -> Result<f64> {
    let mut points = x_basis.breakpoints();
    points.extend(beta.breakpoints());
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let per = match beta {
        Curve::Spline { basis, .. } => (x_basis.degree + basis.degree) / 2 + 1,
        _ => 16,
    };
    let rule = QuadratureRule::composite(&points, per);
    let mut total = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        total += w * dot(&eval_basis(x_basis, t)?, v) * beta.eval(t)?;
    }
    Ok(total)
}
