//! Stage-one partition of subjects into `K` groups.
//!
//! Alternates a joint refit of the group coefficient functions (with one shared
//! intercept) and a reassignment of every subject to the group under which its
//! own negative log-likelihood is smallest. The first restart starts from
//! blocks of subjects ordered by their residual under the homogeneous fit,
//! the others from random balanced partitions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::fdata::{DesignCache, FunctionalDataset};
use crate::fusionfit::{design_rows, unit_penalty, BasisOperators};
use crate::linalg::dot;
use crate::model::CoefficientSet;
use crate::solver::UnitSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreclusterOptions {
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
    pub ridge: f64,
}

impl Default for PreclusterOptions {
    fn default() -> Self {
        PreclusterOptions {
            seed: 0,
            max_iters: 100,
            restarts: 5,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreclusterResult {
    pub k: usize,
    /// Group of every subject, `0..k`.
    pub assignment: Vec<usize>,
    /// Group coefficient functions (`k` units) and the shared intercept.
    pub group_coefs: CoefficientSet,
    /// Residual sum of squares (Gaussian) or total negative log-likelihood
    /// (Bernoulli) after each group refit.
    pub sse_trajectory: Vec<f64>,
    /// Penalized objective after each group refit.
    pub objective_trajectory: Vec<f64>,
    pub iterations: usize,
    /// Whether the assignment reached a fixed point before `max_iters`.
    pub converged: bool,
    /// Restart that produced this result.
    pub restart: usize,
    pub seed: u64,
}

impl PreclusterResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trajectory
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }
}

/// 64-bit FNV-1a, used to derive a per-subject random stream from its id.
fn stream_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Balanced random partition. Each subject's sort key comes from its own
/// stream, so the partition depends on the subject ids and not on their order.
fn initial_partition(
    ids: &[alloc::string::String],
    k: usize,
    seed: u64,
    restart: usize,
) -> Vec<usize> {
    let base = seed ^ (restart as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut keyed: Vec<(u64, &str, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(stream_id(id));
            (rng.next_u64(), id.as_str(), i)
        })
        .collect();
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut assignment = vec![0; ids.len()];
    for (rank, &(_, _, i)) in keyed.iter().enumerate() {
        assignment[i] = rank % k;
    }
    assignment
}

/// Contiguous blocks of subjects ordered by their residual under the
/// homogeneous fit, ties broken by the fitted value and then the id.
fn residual_partition(
    dataset: &FunctionalDataset,
    x: &[f64],
    s: usize,
    penalty: &crate::linalg::Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    let n = dataset.n();
    let family = dataset.family();
    let y = dataset.y();
    let unit_of = vec![0; n];
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
    sys.newton(&mut alpha, &mut b, None, 1e-10, 100)?;
    let eta = sys.linear_predictor(alpha, &b);
    let ids = dataset.subject_ids();
    let mut order: Vec<usize> = (0..n).collect();
    let resid = |i: usize| y[i] - family.mean(eta[i]);
    order.sort_by(|&a, &c| {
        resid(a)
            .total_cmp(&resid(c))
            .then(eta[a].total_cmp(&eta[c]))
            .then_with(|| ids[a].cmp(&ids[c]))
    });
    let mut assignment = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank * k / n;
    }
    Ok(assignment)
}

/// Partitions the subjects of `dataset` into `k` groups.
pub fn precluster(
    dataset: &FunctionalDataset,
    cache: &DesignCache,
    k: usize,
    phi: f64,
    opts: &PreclusterOptions,
) -> Result<PreclusterResult> {
    let n = dataset.n();
    if k == 0 || k > n {
        return Err(GhfmError::Argument(format!("K = {k} must lie in 1..={n}")));
    }
    if dataset.n() != cache.n() || dataset.p() != cache.p() {
        return Err(GhfmError::Dimension(
            "dataset and design cache disagree".into(),
        ));
    }
    if !(phi >= 0.0) || !(opts.ridge >= 0.0) {
        return Err(GhfmError::Argument(
            "φ and the ridge must be nonnegative".into(),
        ));
    }
    if opts.max_iters == 0 || opts.restarts == 0 {
        return Err(GhfmError::Argument(
            "max_iters and restarts must be positive".into(),
        ));
    }
    let ops = BasisOperators::new(&cache.basis)?;
    let (p, l) = (cache.p(), cache.dim());
    let s = p * l;
    let x = design_rows(cache);
    let penalty = unit_penalty(&ops.roughness, p, phi, opts.ridge);

    let mut best: Option<PreclusterResult> = None;
    for restart in 0..opts.restarts {
        let init = if restart == 0 {
            residual_partition(dataset, &x, s, &penalty, k)?
        } else {
            initial_partition(dataset.subject_ids(), k, opts.seed, restart)
        };
        let run = alternate(dataset, &x, s, &penalty, k, init, opts)?;
        let better = match &best {
            None => true,
            Some(b) => run.objective < b.final_objective(),
        };
        if better {
            best = Some(PreclusterResult {
                k,
                assignment: run.assignment,
                group_coefs: CoefficientSet::from_shared(k, p, l, run.alpha, run.b)?,
                sse_trajectory: run.sse,
                objective_trajectory: run.objectives,
                iterations: run.iterations,
                converged: run.converged,
                restart,
                seed: opts.seed,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

struct Run {
    assignment: Vec<usize>,
    alpha: f64,
    b: Vec<f64>,
    sse: Vec<f64>,
    objectives: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn alternate(
    dataset: &FunctionalDataset,
    x: &[f64],
    s: usize,
    penalty: &crate::linalg::Matrix,
    k: usize,
    mut assignment: Vec<usize>,
    opts: &PreclusterOptions,
) -> Result<Run> {
    let n = dataset.n();
    let family = dataset.family();
    let y = dataset.y();
    let mut alpha = family.null_intercept(y);
    let mut b = vec![0.0; k * s];
    let mut sse = Vec::new();
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev: Option<(Vec<usize>, f64, Vec<f64>)> = None;

    let mut losses = vec![0.0; n * k];
    for iter in 1..=opts.max_iters {
        iterations = iter;
        let sys = UnitSystem {
            family,
            y,
            x,
            s,
            unit_of: &assignment,
            n_units: k,
            penalty,
        };
        sys.newton(&mut alpha, &mut b, None, 1e-10, 100)
            .map_err(|e| match e {
                GhfmError::Numeric(msg) => {
                    GhfmError::Numeric(format!("pre-clustering group refit: {msg}"))
                }
                other => other,
            })?;
        let objective = sys.objective(alpha, &b, None)?;
        if let Some(&last) = objectives.last() {
            if !(objective < last) {
                // the refit did not improve on the previous state: keep that one
                let (a, al, bb) = prev.take().expect("previous state recorded");
                assignment = a;
                alpha = al;
                b = bb;
                converged = true;
                break;
            }
        }

        // per-subject loss under every group
        let mut total = 0.0;
        for i in 0..n {
            let row = &x[i * s..(i + 1) * s];
            for g in 0..k {
                let eta = alpha + dot(row, &b[g * s..(g + 1) * s]);
                losses[i * k + g] = family.nll(y[i], eta)?;
            }
            total += losses[i * k + assignment[i]];
        }
        sse.push(match family {
            Family::Gaussian => 2.0 * total,
            Family::Bernoulli => total,
        });
        objectives.push(objective);

        let mut next = assignment.clone();
        for (i, slot) in next.iter_mut().enumerate() {
            let row = &losses[i * k..(i + 1) * k];
            let mut best = *slot;
            for (g, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = g;
                }
            }
            *slot = best;
        }
        repair_empty(&mut next, &losses, k);
        if next == assignment {
            converged = true;
            break;
        }
        prev = Some((core::mem::replace(&mut assignment, next), alpha, b.clone()));
    }
    let objective = objectives.last().copied().unwrap_or(f64::INFINITY);
    Ok(Run {
        assignment,
        alpha,
        b,
        sse,
        objectives,
        objective,
        iterations,
        converged,
    })
}

/// Gives every empty group the worst-fitting subject among groups with more
/// than one member.
fn repair_empty(assignment: &mut [usize], losses: &[f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &g in assignment.iter() {
        sizes[g] += 1;
    }
    for g in 0..k {
        if sizes[g] > 0 {
            continue;
        }
        let mut worst: Option<(usize, f64)> = None;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let v = losses[i * k + a];
            if worst.is_none_or(|(_, w)| v > w) {
                worst = Some((i, v));
            }
        }
        if let Some((i, _)) = worst {
            sizes[assignment[i]] -= 1;
            assignment[i] = g;
            sizes[g] = 1;
        }
    }
}
