//! Clamped uniform B-spline bases on `[t0, t1]`, Gauss-Legendre quadrature and
//! the `L x L` penalty blocks built from them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::error::{GhfmError, Result};
use crate::linalg::{lu_solve, Matrix};

/// A clamped B-spline family of a given degree with `spans + 1` equally spaced
/// knots on `[domain_start, domain_end]`. Its dimension is `spans + degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    #[serde(rename = "t0")]
    pub domain_start: f64,
    #[serde(rename = "t1")]
    pub domain_end: f64,
    pub degree: usize,
    pub spans: usize,
}

impl BasisSpec {
    pub fn new(domain_start: f64, domain_end: f64, degree: usize, spans: usize) -> Result<Self> {
        let spec = BasisSpec {
            domain_start,
            domain_end,
            degree,
            spans,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Basis of the given degree whose dimension is `dimension` (`spans = dimension - degree`).
    pub fn with_dimension(
        domain_start: f64,
        domain_end: f64,
        degree: usize,
        dimension: usize,
    ) -> Result<Self> {
        if dimension <= degree {
            return Err(GhfmError::Argument(format!(
                "basis dimension {dimension} must exceed the degree {degree}"
            )));
        }
        Self::new(domain_start, domain_end, degree, dimension - degree)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domain_end > self.domain_start)
            || !self.domain_start.is_finite()
            || !self.domain_end.is_finite()
        {
            return Err(GhfmError::Argument(format!(
                "basis domain [{}, {}] is empty",
                self.domain_start, self.domain_end
            )));
        }
        if self.degree < 1 {
            return Err(GhfmError::Argument(
                "basis degree must be at least 1".into(),
            ));
        }
        if self.spans < 1 {
            return Err(GhfmError::Argument(
                "basis needs at least one knot span".into(),
            ));
        }
        Ok(())
    }

    /// Number of basis functions `L`.
    #[inline]
    pub fn dimension(&self) -> usize {
        self.spans + self.degree
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.domain_end - self.domain_start
    }

    /// Knot `k` of the uniform grid, `k = 0..=spans`.
    #[inline]
    fn grid_knot(&self, k: usize) -> f64 {
        if k == self.spans {
            self.domain_end
        } else {
            self.domain_start + self.width() * (k as f64) / (self.spans as f64)
        }
    }

    /// The distinct knots `t0 < ... < t1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        (0..=self.spans).map(|k| self.grid_knot(k)).collect()
    }

    /// Full clamped knot vector (boundary knots repeated `degree + 1` times).
    pub fn knots(&self) -> Vec<f64> {
        let d = self.degree;
        let mut knots = Vec::with_capacity(self.spans + 2 * d + 1);
        knots.extend(core::iter::repeat_n(self.domain_start, d));
        knots.extend(self.breakpoints());
        knots.extend(core::iter::repeat_n(self.domain_end, d));
        knots
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t >= self.domain_start && t <= self.domain_end {
            Ok(())
        } else {
            Err(GhfmError::Domain {
                value: t,
                start: self.domain_start,
                end: self.domain_end,
            })
        }
    }

    /// Knot-vector index `s` with `knots[s] <= t < knots[s + 1]` (closed on the right at `t1`).
    fn find_span(&self, knots: &[f64], t: f64) -> usize {
        let d = self.degree;
        let last = self.dimension() - 1;
        let rel = (t - self.domain_start) / self.width() * self.spans as f64;
        let mut s = (rel.floor().max(0.0) as usize).min(self.spans - 1) + d;
        while s > d && t < knots[s] {
            s -= 1;
        }
        while s < last && t >= knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Nonzero basis values of degree `k` at `t` for span `s`: entries for
    /// functions `s - k ..= s`.
    fn local_values(knots: &[f64], s: usize, t: f64, k: usize) -> Vec<f64> {
        let mut n = vec![0.0; k + 1];
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        n[0] = 1.0;
        for j in 1..=k {
            left[j] = t - knots[s + 1 - j];
            right[j] = knots[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Applies `D_{i,k+1} = (k+1) [f_i / (u_{i+k+1} - u_i) - f_{i+1} / (u_{i+k+2} - u_{i+1})]`
    /// to values `f` of degree-`k` functions with indices starting at `lo`.
    /// Returns the values for degree `k + 1` starting at `lo - 1`.
    fn raise_derivative(knots: &[f64], f: &[f64], lo: usize, k: usize) -> Vec<f64> {
        let scale = (k + 1) as f64;
        let at = |i: isize| -> f64 {
            if i < lo as isize || i >= (lo + f.len()) as isize {
                0.0
            } else {
                f[(i - lo as isize) as usize]
            }
        };
        (0..=f.len())
            .map(|off| {
                let i = lo as isize - 1 + off as isize;
                let iu = i as usize;
                let d1 = knots[iu + k + 1] - knots[iu];
                let d2 = knots[iu + k + 2] - knots[iu + 1];
                let a = if d1 > 0.0 { at(i) / d1 } else { 0.0 };
                let b = if d2 > 0.0 { at(i + 1) / d2 } else { 0.0 };
                scale * (a - b)
            })
            .collect()
    }
}

/// Values of all `L` basis functions at `t`.
pub fn eval_basis(spec: &BasisSpec, t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.dimension()];
    eval_basis_into(spec, t, &mut out)?;
    Ok(out)
}

/// Writes `B(t)` into `out` (length `L`).
pub fn eval_basis_into(spec: &BasisSpec, t: f64, out: &mut [f64]) -> Result<()> {
    spec.check_domain(t)?;
    let knots = spec.knots();
    let s = spec.find_span(&knots, t);
    let d = spec.degree;
    out.iter_mut().for_each(|x| *x = 0.0);
    let vals = BasisSpec::local_values(&knots, s, t, d);
    out[s - d..=s].copy_from_slice(&vals);
    Ok(())
}

/// Second derivatives `B''(t)`; identically zero for degree 1.
pub fn eval_basis_deriv2(spec: &BasisSpec, t: f64) -> Result<Vec<f64>> {
    spec.check_domain(t)?;
    let l = spec.dimension();
    let d = spec.degree;
    let mut out = vec![0.0; l];
    if d < 2 {
        return Ok(out);
    }
    let knots = spec.knots();
    let s = spec.find_span(&knots, t);
    let base = BasisSpec::local_values(&knots, s, t, d - 2);
    let first = BasisSpec::raise_derivative(&knots, &base, s - (d - 2), d - 2);
    let second = BasisSpec::raise_derivative(&knots, &first, s - (d - 1), d - 1);
    out[s - d..=s].copy_from_slice(&second);
    Ok(out)
}

/// Evaluates the spline `coefsᵀ B(t)`.
pub fn eval_spline(spec: &BasisSpec, coefs: &[f64], t: f64) -> Result<f64> {
    if coefs.len() != spec.dimension() {
        return Err(GhfmError::Dimension(format!(
            "{} spline coefficients for a basis of dimension {}",
            coefs.len(),
            spec.dimension()
        )));
    }
    let b = eval_basis(spec, t)?;
    Ok(crate::linalg::dot(&b, coefs))
}

/// `Q x L` matrix whose row `q` is `B(points[q])ᵀ`.
pub fn basis_matrix(spec: &BasisSpec, points: &[f64]) -> Result<Matrix> {
    let l = spec.dimension();
    let mut m = Matrix::zeros(points.len(), l);
    for (q, &t) in points.iter().enumerate() {
        eval_basis_into(spec, t, m.row_mut(q))?;
    }
    Ok(m)
}

/// Nodes and positive weights of a composite quadrature rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Legendre rule with `n` nodes on `[-1, 1]`.
    pub fn gauss_legendre(n: usize) -> QuadratureRule {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pi = core::f64::consts::PI;
        for i in 0..n.div_ceil(2) {
            let mut x = (pi * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        QuadratureRule { nodes, weights }
    }

    /// Applies an `per_interval`-node Gauss-Legendre rule on every nonempty
    /// interval between consecutive `breakpoints`.
    pub fn composite(breakpoints: &[f64], per_interval: usize) -> QuadratureRule {
        let base = Self::gauss_legendre(per_interval);
        let mut nodes = Vec::with_capacity(breakpoints.len() * per_interval);
        let mut weights = Vec::with_capacity(breakpoints.len() * per_interval);
        for w in breakpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in base.nodes.iter().zip(&base.weights) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
        QuadratureRule { nodes, weights }
    }

    /// `degree + 1` Gauss-Legendre nodes per knot span: exact for products of
    /// two splines from `spec` and of their derivatives.
    pub fn for_basis(spec: &BasisSpec) -> QuadratureRule {
        Self::composite(&spec.breakpoints(), spec.degree + 1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn weighted_outer_sum<F>(spec: &BasisSpec, rule: &QuadratureRule, mut eval: F) -> Result<Matrix>
where
    F: FnMut(&BasisSpec, f64) -> Result<Vec<f64>>,
{
    let l = spec.dimension();
    let mut m = Matrix::zeros(l, l);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = eval(spec, t)?;
        m.add_outer(w, &v);
    }
    Ok(m)
}

/// `∫ B''(t) B''(t)ᵀ dt`: the per-unit roughness penalty block.
pub fn roughness_block(spec: &BasisSpec, rule: &QuadratureRule) -> Result<Matrix> {
    weighted_outer_sum(spec, rule, eval_basis_deriv2)
}

/// `∫ B(t) B(t)ᵀ dt`.
pub fn gram_block(spec: &BasisSpec, rule: &QuadratureRule) -> Result<Matrix> {
    weighted_outer_sum(spec, rule, eval_basis)
}

/// Power-form coefficients of every basis function on every knot span.
///
/// On span `k` (between breakpoints `k` and `k + 1`, width `h`) the nonzero
/// functions are `k..=k + degree`, and function `k + r` equals
/// `Σ_e coefs[k][r][e] s^e` with `s = (t - t_k) / h ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPolynomials {
    pub spec: BasisSpec,
    pub coefs: Vec<Vec<Vec<f64>>>,
}

impl SpanPolynomials {
    pub fn new(spec: &BasisSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.degree;
        let bp = spec.breakpoints();
        // Chebyshev points keep the interpolation well conditioned
        let pts: Vec<f64> = (0..=d)
            .map(|e| {
                0.5 - 0.5
                    * (core::f64::consts::PI * (2 * e + 1) as f64 / (2 * (d + 1)) as f64).cos()
            })
            .collect();
        let mut vander = Matrix::zeros(d + 1, d + 1);
        for (row, &x) in pts.iter().enumerate() {
            let mut v = 1.0;
            for e in 0..=d {
                vander[(row, e)] = v;
                v *= x;
            }
        }
        let mut coefs = Vec::with_capacity(spec.spans);
        for k in 0..spec.spans {
            let (a, h) = (bp[k], bp[k + 1] - bp[k]);
            let values: Vec<Vec<f64>> = pts
                .iter()
                .map(|&x| eval_basis(spec, a + h * x))
                .collect::<Result<_>>()?;
            let mut span = Vec::with_capacity(d + 1);
            for r in 0..=d {
                let rhs: Vec<f64> = values.iter().map(|v| v[k + r]).collect();
                span.push(lu_solve(&vander, &rhs)?);
            }
            coefs.push(span);
        }
        Ok(SpanPolynomials { spec: *spec, coefs })
    }

    /// Power-form coefficients of the spline `Σ_i c_i B_i` on span `k`.
    pub fn spline_on_span(&self, c: &[f64], k: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, poly) in self.coefs[k].iter().enumerate() {
            let w = c[k + r];
            if w != 0.0 {
                for (o, p) in out.iter_mut().zip(poly) {
                    *o += w * p;
                }
            }
        }
    }

    /// `∫ |Σ_i c_i B_i(t)| dt` over the whole domain, exactly up to rounding:
    /// each span is split at the sign changes of the polynomial and the
    /// pieces are integrated with the antiderivative.
    pub fn abs_integral(&self, c: &[f64]) -> f64 {
        const PROBES: usize = 32;
        let d = self.spec.degree;
        let h = self.spec.width() / self.spec.spans as f64;
        let mut poly = vec![0.0; d + 1];
        let mut total = 0.0;
        for k in 0..self.spec.spans {
            self.spline_on_span(c, k, &mut poly);
            let f = |x: f64| horner(&poly, x);
            let anti = |x: f64| {
                let mut acc = 0.0;
                for e in (0..=d).rev() {
                    acc = acc * x + poly[e] / (e + 1) as f64;
                }
                acc * x
            };
            let mut last_anti = 0.0;
            let mut prev_x = 0.0;
            let mut prev_v = f(0.0);
            for step in 1..=PROBES {
                let x = step as f64 / PROBES as f64;
                let v = f(x);
                if prev_v * v < 0.0 {
                    let (mut lo, mut hi, mut flo) = (prev_x, x, prev_v);
                    while hi - lo > 1e-16 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let fm = f(mid);
                        if (fm < 0.0) == (flo < 0.0) && fm != 0.0 {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    let root = 0.5 * (lo + hi);
                    let a = anti(root);
                    total += h * (a - last_anti).abs();
                    last_anti = a;
                }
                prev_x = x;
                prev_v = v;
            }
            total += h * (anti(1.0) - last_anti).abs();
        }
        total
    }
}

#[inline]
fn horner(poly: &[f64], x: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> BasisSpec {
        BasisSpec::new(0.0, 23.0, 3, 23).unwrap()
    }

    #[test]
    fn dimension_is_spans_plus_degree() {
        let spec = BasisSpec::with_dimension(0.0, 23.0, 3, 35).unwrap();
        assert_eq!(spec.spans, 32);
        assert_eq!(spec.dimension(), 35);
        assert_eq!(spec.knots().len(), 35 + 3 + 1);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(BasisSpec::new(1.0, 1.0, 3, 4).is_err());
        assert!(BasisSpec::new(0.0, 1.0, 0, 4).is_err());
        assert!(BasisSpec::new(0.0, 1.0, 2, 0).is_err());
        assert!(BasisSpec::with_dimension(0.0, 1.0, 3, 3).is_err());
    }

    #[test]
    fn clamped_boundary_values() {
        let spec = cubic();
        let b0 = eval_basis(&spec, 0.0).unwrap();
        assert_eq!(b0[0], 1.0);
        assert!(b0[1..].iter().all(|&v| v == 0.0));
        let b1 = eval_basis(&spec, 23.0).unwrap();
        assert_eq!(*b1.last().unwrap(), 1.0);
        assert!(b1[..b1.len() - 1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let spec = cubic();
        assert!(matches!(
            eval_basis(&spec, -1e-9),
            Err(GhfmError::Domain { .. })
        ));
        assert!(matches!(
            eval_basis_deriv2(&spec, 23.5),
            Err(GhfmError::Domain { .. })
        ));
    }

    #[test]
    fn linear_basis_has_no_curvature() {
        let spec = BasisSpec::new(0.0, 5.0, 1, 4).unwrap();
        for t in [0.0, 0.3, 1.0, 2.5, 5.0] {
            assert!(eval_basis_deriv2(&spec, t)
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
        }
        let rule = QuadratureRule::for_basis(&spec);
        let r = roughness_block(&spec, &rule).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hat_function_gram() {
        let spec = BasisSpec::new(0.0, 1.0, 1, 1).unwrap();
        let g = gram_block(&spec, &QuadratureRule::for_basis(&spec)).unwrap();
        let expect = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gauss_legendre_weights_and_exactness() {
        for n in 1..=12 {
            let rule = QuadratureRule::gauss_legendre(n);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-14, "n = {n}");
            // exact for x^(2n-1) and x^(2n-2)
            let deg = 2 * n - 2;
            let got = rule.integrate(|x| x.powi(deg as i32));
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((got - exact).abs() < 1e-13, "n = {n}");
        }
    }
}
