//! Reference computations for the integration tests. Nothing here calls the
//! library's quadrature, spline evaluation or solvers.
#![allow(dead_code)]

use fusion_core::bspline::eval_basis_deriv2;
use fusion_core::{BasisSpec, CoefficientSet, Family, FunctionalDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Clamped uniform knot vector.
pub fn clamped_knots(a: f64, b: f64, degree: usize, spans: usize) -> Vec<f64> {
    let mut k = vec![a; degree];
    for s in 0..=spans {
        k.push(a + (b - a) * s as f64 / spans as f64);
    }
    k.extend(std::iter::repeat_n(b, degree));
    k
}

/// `N_{i,d}(t)` by the Cox-de Boor recursion, right-continuous except at the
/// last knot, where the last function is closed.
pub fn cox_de_boor(knots: &[f64], i: usize, d: usize, t: f64) -> f64 {
    if d == 0 {
        let last = *knots.last().unwrap();
        let (lo, hi) = (knots[i], knots[i + 1]);
        if t == last {
            // closed right end: the last non-degenerate interval owns t
            let j = knots.iter().rposition(|&k| k < last).unwrap();
            return if i == j { 1.0 } else { 0.0 };
        }
        return if lo <= t && t < hi { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let den1 = knots[i + d] - knots[i];
    if den1 > 0.0 {
        v += (t - knots[i]) / den1 * cox_de_boor(knots, i, d - 1, t);
    }
    let den2 = knots[i + d + 1] - knots[i + 1];
    if den2 > 0.0 {
        v += (knots[i + d + 1] - t) / den2 * cox_de_boor(knots, i + 1, d - 1, t);
    }
    v
}

pub fn basis_oracle(spec: &BasisSpec, t: f64) -> Vec<f64> {
    let knots = clamped_knots(spec.domain_start, spec.domain_end, spec.degree, spec.spans);
    (0..spec.dimension())
        .map(|i| cox_de_boor(&knots, i, spec.degree, t))
        .collect()
}

pub fn spline_oracle(spec: &BasisSpec, coefs: &[f64], t: f64) -> f64 {
    basis_oracle(spec, t)
        .iter()
        .zip(coefs)
        .map(|(b, c)| b * c)
        .sum()
}

/// Composite trapezoid rule with `n` intervals.
pub fn trapezoid<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for k in 1..n {
        s += f(a + h * k as f64);
    }
    s * h
}

/// 5-point Gauss-Legendre on `[a, b]` (exact to degree 9).
pub fn gauss5<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683,
        0.538_469_310_105_683,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    X.iter().zip(&W).map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

/// `∫_a^b |f|` for a function that is a cubic (or lower) polynomial on each
/// of `pieces` equal sub-intervals: sign changes are located on a fine grid,
/// refined by bisection, and each sign-definite piece integrated exactly.
pub fn abs_integral_dense<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize) -> f64 {
    let mut total = 0.0;
    for s in 0..pieces {
        let lo = a + (b - a) * s as f64 / pieces as f64;
        let hi = if s + 1 == pieces {
            b
        } else {
            a + (b - a) * (s + 1) as f64 / pieces as f64
        };
        let probes = 2000;
        let mut cuts = vec![lo];
        let mut prev = f(lo);
        for k in 1..=probes {
            let t = lo + (hi - lo) * k as f64 / probes as f64;
            let v = f(t);
            if prev * v < 0.0 {
                let (mut l, mut r) = (t - (hi - lo) / probes as f64, t);
                for _ in 0..200 {
                    let mid = 0.5 * (l + r);
                    if f(l) * f(mid) <= 0.0 {
                        r = mid;
                    } else {
                        l = mid;
                    }
                }
                cuts.push(0.5 * (l + r));
            }
            prev = v;
        }
        cuts.push(hi);
        for w in cuts.windows(2) {
            total += gauss5(&f, w[0], w[1]).abs();
        }
    }
    total
}

/// Random single-covariate dataset on the hourly grid with outcomes linear
/// in `∫X` plus noise.
pub fn random_dataset(n: usize, family: Family, seed: u64) -> FunctionalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 24;
    let grid: Vec<f64> = (0..m).map(|k| k as f64).collect();
    let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..3.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row = &x[i * m..(i + 1) * m];
            let signal: f64 = row
                .iter()
                .enumerate()
                .map(|(k, v)| v * (k as f64 / 6.0).sin())
                .sum::<f64>()
                / 4.0;
            match family {
                Family::Gaussian => signal + rng.random_range(-0.5..0.5),
                Family::Bernoulli => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-signal).exp())),
            }
        })
        .collect();
    let ids = (0..n).map(|i| format!("r{i:03}")).collect();
    FunctionalDataset::new(1, 23.0, grid, x, y, family, ids).unwrap()
}

/// Piecewise-linear interpolant of grid values, constant outside the grid.
pub fn interp(grid: &[f64], v: &[f64], t: f64) -> f64 {
    if t <= grid[0] {
        return v[0];
    }
    let m = grid.len();
    if t >= grid[m - 1] {
        return v[m - 1];
    }
    let k = grid.iter().rposition(|&g| g <= t).unwrap();
    let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
    v[k] * (1.0 - w) + v[k + 1] * w
}

/// `∫ B_l(t) X̃(t) dt` by Gauss-Legendre on every interval between knots and
/// grid points, with Cox-de Boor basis values.
pub fn gamma_oracle(spec: &BasisSpec, grid: &[f64], x: &[f64]) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..=spec.spans)
        .map(|s| {
            spec.domain_start + (spec.domain_end - spec.domain_start) * s as f64 / spec.spans as f64
        })
        .chain(grid.iter().copied())
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    (0..spec.dimension())
        .map(|l| {
            cuts.windows(2)
                .map(|w| {
                    gauss5(
                        |t| basis_oracle(spec, t)[l] * interp(grid, x, t),
                        w[0],
                        w[1],
                    )
                })
                .sum()
        })
        .collect()
}

/// The fused objective of a single-covariate model evaluated term by term:
/// the likelihood from `eta`, `∫β''²` per unit by span-wise Gauss-Legendre
/// and `Σ_{a≠b} ∫|β_a - β_b|` by [`abs_integral_dense`].
pub fn objective_oracle(
    spec: &BasisSpec,
    coefs: &CoefficientSet,
    dataset: &FunctionalDataset,
    eta: &[f64],
    lambda: f64,
    phi: f64,
) -> f64 {
    let n = dataset.n() as f64;
    let lik: f64 = dataset
        .y()
        .iter()
        .zip(eta)
        .map(|(&y, &e)| match dataset.family() {
            Family::Gaussian => 0.5 * (y - e) * (y - e),
            Family::Bernoulli => -y * e + (1.0 + e.exp()).ln(),
        })
        .sum::<f64>()
        / n;
    let h = (spec.domain_end - spec.domain_start) / spec.spans as f64;
    let mut rough = 0.0;
    for u in 0..coefs.units {
        let c = coefs.coef(u, 0);
        for s in 0..spec.spans {
            let (a, b) = (
                spec.domain_start + h * s as f64,
                spec.domain_start + h * (s + 1) as f64,
            );
            rough += gauss5(
                |t| {
                    let v: f64 = eval_basis_deriv2(spec, t)
                        .unwrap()
                        .iter()
                        .zip(c)
                        .map(|(x, y)| x * y)
                        .sum();
                    v * v
                },
                a,
                b,
            );
        }
    }
    let mut fusion = 0.0;
    for a in 0..coefs.units {
        for b in 0..coefs.units {
            if a == b {
                continue;
            }
            let (ca, cb) = (coefs.coef(a, 0), coefs.coef(b, 0));
            fusion += abs_integral_dense(
                |t| spline_oracle(spec, ca, t) - spline_oracle(spec, cb, t),
                spec.domain_start,
                spec.domain_end,
                spec.spans,
            );
        }
    }
    lik + phi * rough + lambda * fusion
}
