//! Prediction, estimation and subgroup-recovery metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::bspline::{gram_block, QuadratureRule};
use crate::error::{GhfmError, Result};
use crate::simgen::Curve;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(GhfmError::Metric(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    if a == 0 {
        return Err(GhfmError::Metric(format!("{what}: empty input")));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    same_len(y.len(), yhat.len(), "rmse")?;
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// `RMSE(y - ŷ) / RMSE(y)`.
pub fn rpmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    same_len(y.len(), yhat.len(), "rpmse")?;
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    if scale == 0.0 {
        return Err(GhfmError::Metric("rpmse: outcomes are all zero".into()));
    }
    Ok(rmse(y, yhat)? / scale)
}

/// Relative stacked L2 error `‖β̂ - β‖ / ‖β‖` over all subjects.
///
/// Pairs of splines on the same basis are integrated exactly with the Gram
/// matrix; anything else uses a composite Gauss-Legendre rule refined to
/// rounding-level accuracy for the smooth closed forms.
pub fn ise(hat: &[Curve], truth: &[Curve], domain: (f64, f64)) -> Result<f64> {
    same_len(hat.len(), truth.len(), "ise")?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (h, t) in hat.iter().zip(truth) {
        let (d2, t2) = match (h, t) {
            (
                Curve::Spline {
                    basis: bh,
                    coefs: ch,
                },
                Curve::Spline {
                    basis: bt,
                    coefs: ct,
                },
            ) if bh == bt => {
                let rule = QuadratureRule::for_basis(bt);
                let g = gram_block(bt, &rule)?;
                let diff: Vec<f64> = ch.iter().zip(ct).map(|(a, b)| a - b).collect();
                (g.quad_form(&diff), g.quad_form(ct))
            }
            _ => {
                let rule = fine_rule(h, t, domain);
                let mut d2 = 0.0;
                let mut t2 = 0.0;
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let tv = t.eval(x)?;
                    let dv = h.eval(x)? - tv;
                    d2 += w * dv * dv;
                    t2 += w * tv * tv;
                }
                (d2, t2)
            }
        };
        num += d2;
        den += t2;
    }
    if den == 0.0 {
        return Err(GhfmError::Metric(
            "ise: true coefficient functions are identically zero".into(),
        ));
    }
    Ok((num.max(0.0) / den).sqrt())
}

fn fine_rule(a: &Curve, b: &Curve, domain: (f64, f64)) -> QuadratureRule {
    const PIECES: usize = 64;
    let (t0, t1) = domain;
    let mut points: Vec<f64> = (0..=PIECES)
        .map(|k| t0 + (t1 - t0) * k as f64 / PIECES as f64)
        .collect();
    points.extend(a.breakpoints());
    points.extend(b.breakpoints());
    points.retain(|&t| t >= t0 && t <= t1);
    points.sort_by(|x, y| x.total_cmp(y));
    points.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    QuadratureRule::composite(&points, 12)
}

/// Subgroup misclassification rate: the smallest fraction of subjects whose
/// estimated label disagrees with the truth under a one-to-one matching of
/// estimated onto true groups. Estimated groups left unmatched count as errors.
pub fn smr(labels_hat: &[usize], labels_true: &[usize]) -> Result<f64> {
    same_len(labels_hat.len(), labels_true.len(), "smr")?;
    let (hat_ids, hat) = compress(labels_hat);
    let (true_ids, tru) = compress(labels_true);
    let mut counts = vec![vec![0.0; true_ids]; hat_ids];
    for (&a, &b) in hat.iter().zip(&tru) {
        counts[a][b] += 1.0;
    }
    let matched = max_assignment(&counts);
    Ok(1.0 - matched / labels_hat.len() as f64)
}

/// Relabels to `0..k` in order of first appearance.
fn compress(labels: &[usize]) -> (usize, Vec<usize>) {
    let mut seen: Vec<usize> = Vec::new();
    let out = labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(k) => k,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect();
    (seen.len(), out)
}

/// Maximum-weight matching value of a rectangular nonnegative weight matrix
/// (Hungarian algorithm with potentials on the cost `max - w`).
pub fn max_assignment(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    // square cost matrix; padding entries have zero weight
    let n = rows.max(cols);
    let top = weights.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let cost = |i: usize, j: usize| -> f64 {
        let w = if i < rows && j < cols {
            weights[i][j]
        } else {
            0.0
        };
        top - w
    };
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            total += weights[i - 1][j - 1];
        }
    }
    total
}

fn check_binary(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(GhfmError::Metric(format!("outcome {v} is not 0 or 1")));
    }
    Ok(())
}

/// Fraction of outcomes misclassified by `p̂ ≥ threshold`.
pub fn omr(y: &[f64], p_hat: &[f64], threshold: f64) -> Result<f64> {
    same_len(y.len(), p_hat.len(), "omr")?;
    check_binary(y)?;
    let wrong = y
        .iter()
        .zip(p_hat)
        .filter(|(&yi, &pi)| (pi >= threshold) != (yi == 1.0))
        .count();
    Ok(wrong as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    /// False-negative rate at the threshold (`None` without positives).
    pub fnr: Option<f64>,
    /// False-positive rate at the threshold (`None` without negatives).
    pub fpr: Option<f64>,
    pub auc: f64,
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auc(y: &[f64], score: &[f64]) -> Result<f64> {
    same_len(y.len(), score.len(), "auc")?;
    check_binary(y)?;
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    // midranks
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && score[idx[e + 1]] == score[idx[k]] {
            e += 1;
        }
        let mid = 0.5 * ((k + 1) + (e + 1)) as f64;
        for &i in &idx[k..=e] {
            if y[i] == 1.0 {
                rank_sum_pos += mid;
            }
        }
        k = e + 1;
    }
    let n_pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(GhfmError::Metric("auc needs both outcome classes".into()));
    }
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// FNR and FPR at `p̂ ≥ 0.5`, and the AUC.
pub fn roc_suite(y: &[f64], p_hat: &[f64]) -> Result<RocSummary> {
    same_len(y.len(), p_hat.len(), "roc_suite")?;
    check_binary(y)?;
    let (mut tp, mut fnn, mut fp, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&yi, &pi) in y.iter().zip(p_hat) {
        match (yi == 1.0, pi >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fnn += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let fnr = (tp + fnn > 0).then(|| fnn as f64 / (tp + fnn) as f64);
    let fpr = (fp + tn > 0).then(|| fp as f64 / (fp + tn) as f64);
    Ok(RocSummary {
        fnr,
        fpr,
        auc: auc(y, p_hat)?,
    })
}

/// Per-day ROC summaries averaged over days.
pub fn multiday_roc(y_by_day: &[Vec<f64>], p_by_day: &[Vec<f64>]) -> Result<RocSummary> {
    same_len(y_by_day.len(), p_by_day.len(), "multiday_roc")?;
    let days: Vec<RocSummary> = y_by_day
        .iter()
        .zip(p_by_day)
        .map(|(y, p)| roc_suite(y, p))
        .collect::<Result<_>>()?;
    let mean_opt = |f: fn(&RocSummary) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = days.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(RocSummary {
        fnr: mean_opt(|d| d.fnr),
        fpr: mean_opt(|d| d.fpr),
        auc: days.iter().map(|d| d.auc).sum::<f64>() / days.len() as f64,
    })
}

/// How per-day errors are pooled across days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DayPooling {
    /// Mean over days of the per-day root mean squared error.
    #[default]
    MeanOfRoots,
    /// Square root of the mean over days of the per-day mean squared error.
    RootOfMean,
}

pub fn multiday_rpmse(
    y_by_day: &[Vec<f64>],
    yhat_by_day: &[Vec<f64>],
    pooling: DayPooling,
) -> Result<f64> {
    same_len(y_by_day.len(), yhat_by_day.len(), "multiday_rpmse")?;
    let mut per_day = Vec::with_capacity(y_by_day.len());
    for (d, (y, yh)) in y_by_day.iter().zip(yhat_by_day).enumerate() {
        if y.len() != yh.len() {
            return Err(GhfmError::Metric(format!(
                "day {d}: {} outcomes, {} predictions",
                y.len(),
                yh.len()
            )));
        }
        per_day.push(rmse(y, yh)?);
    }
    let days = per_day.len() as f64;
    Ok(match pooling {
        DayPooling::MeanOfRoots => per_day.iter().sum::<f64>() / days,
        DayPooling::RootOfMean => (per_day.iter().map(|r| r * r).sum::<f64>() / days).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_prefers_the_diagonal_of_a_permuted_matrix() {
        let w = vec![
            vec![0.0, 5.0, 1.0],
            vec![4.0, 0.0, 0.0],
            vec![1.0, 1.0, 6.0],
        ];
        assert_eq!(max_assignment(&w), 15.0);
        let wide = vec![vec![1.0, 7.0, 2.0]];
        assert_eq!(max_assignment(&wide), 7.0);
        let tall = vec![vec![1.0], vec![9.0], vec![3.0]];
        assert_eq!(max_assignment(&tall), 9.0);
    }

    #[test]
    fn compress_relabels_by_first_appearance() {
        assert_eq!(compress(&[9, 4, 9, 1]), (3, vec![0, 1, 0, 2]));
    }
}
