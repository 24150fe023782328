//! Penalized likelihood minimization over "units" that share an intercept.
//!
//! Every subject `i` owns a feature row `x_i` (length `s`) and belongs to one
//! unit `u(i)`; its linear predictor is `α + x_iᵀ b_{u(i)}`. The objective is
//!
//! ```text
//! F(α, b) = (1/n) Σ_i nll(y_i, η_i) + Σ_u b_uᵀ P b_u
//!         + (ρ/2) Σ_{a<b} ‖V(b_a - b_b) - c_ab‖²          (optional fusion term)
//! ```
//!
//! The fusion term's Hessian is `ρ (U I - 11ᵀ) ⊗ G`, so the full Hessian is an
//! arrow matrix (intercept row/column) around a block diagonal minus a rank-`s`
//! correction. [`ArrowFactor`] solves it with a Schur complement for the
//! intercept and the Woodbury identity for the correction, in `O(U s³)`.
//!
//! The per-unit coupling `(ρ/2) Σ_u ‖V b_u - c_u‖²` has the block diagonal
//! Hessian `ρ I ⊗ G` and needs no correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::error::{GhfmError, Result};
use crate::family::Family;
use crate::linalg::{axpy, dot, Cholesky, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CouplingKind {
    /// `(ρ/2) Σ_{a<b} ‖V(b_a - b_b) - c_ab‖²` with `t_u = Vᵀ (Σ_{b>u} c_ub - Σ_{a<u} c_au)`.
    Pairwise,
    /// `(ρ/2) Σ_u ‖V b_u - c_u‖²` with `t_u = Vᵀ c_u`.
    PerUnit,
}

/// Quadratic fusion coupling given by its kind, `ρ`, `G = VᵀV` (block size
/// `s`) and the per-unit linear terms `t_u`.
pub(crate) struct FusionCoupling<'a> {
    pub kind: CouplingKind,
    pub rho: f64,
    pub g: &'a Matrix,
    pub linear: &'a [f64],
}

pub(crate) struct UnitSystem<'a> {
    pub family: Family,
    pub y: &'a [f64],
    /// `n x s` row-major features.
    pub x: &'a [f64],
    pub s: usize,
    pub unit_of: &'a [usize],
    pub n_units: usize,
    /// Per-unit penalty matrix `P` (`s x s`); the objective adds `b_uᵀ P b_u`.
    pub penalty: &'a Matrix,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NewtonStats {
    pub steps: usize,
    pub grad_norm: f64,
}

impl<'a> UnitSystem<'a> {
    #[inline]
    fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.s..(i + 1) * self.s]
    }

    pub fn linear_predictor(&self, alpha: f64, b: &[f64]) -> Vec<f64> {
        let s = self.s;
        (0..self.n())
            .map(|i| {
                let u = self.unit_of[i];
                alpha + dot(self.row(i), &b[u * s..(u + 1) * s])
            })
            .collect()
    }

    pub fn objective(&self, alpha: f64, b: &[f64], fusion: Option<&FusionCoupling>) -> Result<f64> {
        let eta = self.linear_predictor(alpha, b);
        let mut lik = 0.0;
        for (&yi, &e) in self.y.iter().zip(&eta) {
            lik += self.family.nll(yi, e)?;
        }
        let s = self.s;
        let mut pen = 0.0;
        for u in 0..self.n_units {
            pen += self.penalty.quad_form(&b[u * s..(u + 1) * s]);
        }
        let fuse = match fusion {
            Some(f) => fusion_value(f, b, s, self.n_units),
            None => 0.0,
        };
        Ok(lik / self.n() as f64 + pen + fuse)
    }

    /// Gradient `(g_α, g_b)` and per-subject curvatures at `(α, b)`.
    fn gradient(
        &self,
        alpha: f64,
        b: &[f64],
        fusion: Option<&FusionCoupling>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (n, s) = (self.n(), self.s);
        let inv_n = 1.0 / n as f64;
        let eta = self.linear_predictor(alpha, b);
        let mut g_alpha = 0.0;
        let mut g_b = vec![0.0; self.n_units * s];
        let mut curv = Vec::with_capacity(n);
        for i in 0..n {
            let (g, h) = self.family.grad_hess(self.y[i], eta[i])?;
            g_alpha += g * inv_n;
            let u = self.unit_of[i];
            axpy(g * inv_n, self.row(i), &mut g_b[u * s..(u + 1) * s]);
            curv.push(h);
        }
        for u in 0..self.n_units {
            let pb = self.penalty.mul_vec(&b[u * s..(u + 1) * s]);
            axpy(2.0, &pb, &mut g_b[u * s..(u + 1) * s]);
        }
        if let Some(f) = fusion {
            let total = match f.kind {
                CouplingKind::Pairwise => block_sum(b, s, self.n_units),
                CouplingKind::PerUnit => vec![0.0; s],
            };
            let uf = match f.kind {
                CouplingKind::Pairwise => self.n_units as f64,
                CouplingKind::PerUnit => 1.0,
            };
            for u in 0..self.n_units {
                let mut dev: Vec<f64> = b[u * s..(u + 1) * s].iter().map(|v| uf * v).collect();
                axpy(-1.0, &total, &mut dev);
                let gd = f.g.mul_vec(&dev);
                let gu = &mut g_b[u * s..(u + 1) * s];
                axpy(f.rho, &gd, gu);
                axpy(-f.rho, &f.linear[u * s..(u + 1) * s], gu);
            }
        }
        Ok((g_alpha, g_b, curv))
    }

    /// Factors the Hessian for per-subject curvatures `curv`.
    pub fn factor(
        &self,
        curv: &[f64],
        fusion: Option<(CouplingKind, f64, &Matrix)>,
    ) -> Result<ArrowFactor> {
        let (n, s, nu) = (self.n(), self.s, self.n_units);
        let inv_n = 1.0 / n as f64;
        let mut h_aa = 0.0;
        let mut cross = vec![0.0; nu * s];
        let mut blocks: Vec<Matrix> = (0..nu)
            .map(|_| {
                let mut m = self.penalty.clone();
                m.scale(2.0);
                m
            })
            .collect();
        for i in 0..n {
            let h = curv[i] * inv_n;
            let u = self.unit_of[i];
            let xi = self.row(i);
            h_aa += h;
            axpy(h, xi, &mut cross[u * s..(u + 1) * s]);
            blocks[u].add_outer(h, xi);
        }
        let low_rank = match fusion {
            Some((CouplingKind::Pairwise, rho, g)) => {
                for blk in blocks.iter_mut() {
                    blk.add_scaled(rho * nu as f64, g);
                }
                let mut sm = g.clone();
                sm.scale(rho);
                Some(sm)
            }
            Some((CouplingKind::PerUnit, rho, g)) => {
                for blk in blocks.iter_mut() {
                    blk.add_scaled(rho, g);
                }
                None
            }
            None => None,
        };
        ArrowFactor::new(h_aa, cross, blocks, low_rank)
    }

    /// Minimizer of the objective for the Gaussian family (a single linear solve
    /// with a prefactored Hessian).
    pub fn solve_gaussian(
        &self,
        factor: &ArrowFactor,
        fusion_linear: Option<(f64, &[f64])>,
    ) -> (f64, Vec<f64>) {
        let (n, s) = (self.n(), self.s);
        let inv_n = 1.0 / n as f64;
        let mut r_alpha = 0.0;
        let mut r_b = vec![0.0; self.n_units * s];
        for i in 0..n {
            let yi = self.y[i] * inv_n;
            r_alpha += yi;
            let u = self.unit_of[i];
            axpy(yi, self.row(i), &mut r_b[u * s..(u + 1) * s]);
        }
        if let Some((rho, lin)) = fusion_linear {
            axpy(rho, lin, &mut r_b);
        }
        factor.solve(r_alpha, &r_b)
    }

    /// Damped Newton iterations from `(alpha, b)` until the gradient norm drops
    /// below `tol` (one exact step for the Gaussian family).
    pub fn newton(
        &self,
        alpha: &mut f64,
        b: &mut [f64],
        fusion: Option<&FusionCoupling>,
        tol: f64,
        max_steps: usize,
    ) -> Result<NewtonStats> {
        let mut stats = NewtonStats::default();
        let fusion_mat = fusion.map(|f| (f.kind, f.rho, f.g));
        let mut current = self.objective(*alpha, b, fusion)?;
        for step in 0..max_steps {
            let (g_a, g_b, curv) = self.gradient(*alpha, b, fusion)?;
            let gnorm = (g_a * g_a + dot(&g_b, &g_b)).sqrt();
            stats.grad_norm = gnorm;
            if gnorm < tol {
                stats.steps = step;
                return Ok(stats);
            }
            let factor = self.factor(&curv, fusion_mat)?;
            let (d_a, d_b) = factor.solve(-g_a, &g_b.iter().map(|v| -v).collect::<Vec<_>>());
            let slope = g_a * d_a + dot(&g_b, &d_b);
            if self.family == Family::Gaussian {
                *alpha += d_a;
                axpy(1.0, &d_b, b);
                stats.steps = step + 1;
                let (g_a, g_b, _) = self.gradient(*alpha, b, fusion)?;
                stats.grad_norm = (g_a * g_a + dot(&g_b, &g_b)).sqrt();
                return Ok(stats);
            }
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial_b = b.to_vec();
            for _ in 0..60 {
                let trial_a = *alpha + t * d_a;
                trial_b.copy_from_slice(b);
                axpy(t, &d_b, &mut trial_b);
                if let Ok(val) = self.objective(trial_a, &trial_b, fusion) {
                    if val <= current + 1e-4 * t * slope {
                        *alpha = trial_a;
                        b.copy_from_slice(&trial_b);
                        current = val;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            stats.steps = step + 1;
            if !accepted {
                // no further decrease representable in floating point
                let (g_a, g_b, _) = self.gradient(*alpha, b, fusion)?;
                stats.grad_norm = (g_a * g_a + dot(&g_b, &g_b)).sqrt();
                return Ok(stats);
            }
        }
        let (g_a, g_b, _) = self.gradient(*alpha, b, fusion)?;
        stats.grad_norm = (g_a * g_a + dot(&g_b, &g_b)).sqrt();
        Ok(stats)
    }
}

fn block_sum(b: &[f64], s: usize, n_units: usize) -> Vec<f64> {
    let mut total = vec![0.0; s];
    for u in 0..n_units {
        axpy(1.0, &b[u * s..(u + 1) * s], &mut total);
    }
    total
}

/// `(ρ/2) [bᵀ (H ⊗ G) b - 2 Σ_u b_uᵀ t_u]` with `H` the graph Laplacian
/// (pairwise) or the identity (per unit): the fusion term up to a constant.
fn fusion_value(f: &FusionCoupling, b: &[f64], s: usize, n_units: usize) -> f64 {
    let (mut quad, scale) = match f.kind {
        CouplingKind::Pairwise => (-f.g.quad_form(&block_sum(b, s, n_units)), n_units as f64),
        CouplingKind::PerUnit => (0.0, 1.0),
    };
    let mut lin = 0.0;
    for u in 0..n_units {
        let bu = &b[u * s..(u + 1) * s];
        quad += scale * f.g.quad_form(bu);
        lin += dot(bu, &f.linear[u * s..(u + 1) * s]);
    }
    0.5 * f.rho * (quad - 2.0 * lin)
}

/// Factorization of
/// `[[h_αα, cᵀ], [c, blockdiag(D_u) - (1 ⊗ I) S (1 ⊗ I)ᵀ]]`.
pub(crate) struct ArrowFactor {
    s: usize,
    block_inv: Vec<Matrix>,
    capacitance: Option<Cholesky>,
    /// `M⁻¹ c`.
    m_inv_cross: Vec<f64>,
    cross: Vec<f64>,
    schur: f64,
}

impl ArrowFactor {
    pub fn new(
        h_aa: f64,
        cross: Vec<f64>,
        blocks: Vec<Matrix>,
        low_rank: Option<Matrix>,
    ) -> Result<Self> {
        let nu = blocks.len();
        let s = blocks.first().map_or(0, |m| m.rows());
        let mut block_inv = Vec::with_capacity(nu);
        for (u, blk) in blocks.iter().enumerate() {
            let chol = Cholesky::new(blk).map_err(|e| {
                GhfmError::Numeric(format!("coefficient block of unit {u} is singular: {e}"))
            })?;
            block_inv.push(chol.inverse());
        }
        let capacitance = match low_rank {
            Some(sm) => {
                let mut c = Cholesky::new(&sm)
                    .map_err(|e| GhfmError::Numeric(format!("fusion Gram matrix: {e}")))?
                    .inverse();
                for inv in &block_inv {
                    c.add_scaled(-1.0, inv);
                }
                Some(Cholesky::new(&c).map_err(|e| {
                    GhfmError::Numeric(format!("consensus system is singular: {e}"))
                })?)
            }
            None => None,
        };
        let mut f = ArrowFactor {
            s,
            block_inv,
            capacitance,
            m_inv_cross: Vec::new(),
            cross,
            schur: 0.0,
        };
        f.m_inv_cross = f.solve_blocks(&f.cross);
        f.schur = h_aa - dot(&f.cross, &f.m_inv_cross);
        if !(f.schur > 0.0) {
            return Err(GhfmError::Numeric(format!(
                "intercept Schur complement is not positive ({:e})",
                f.schur
            )));
        }
        Ok(f)
    }

    /// Solves the coefficient block `M x = r`.
    fn solve_blocks(&self, r: &[f64]) -> Vec<f64> {
        let s = self.s;
        let mut x: Vec<f64> = Vec::with_capacity(r.len());
        for (u, inv) in self.block_inv.iter().enumerate() {
            x.extend(inv.mul_vec(&r[u * s..(u + 1) * s]));
        }
        if let Some(cap) = &self.capacitance {
            let mut w = block_sum(&x, s, self.block_inv.len());
            cap.solve_in_place(&mut w);
            for (u, inv) in self.block_inv.iter().enumerate() {
                let corr = inv.mul_vec(&w);
                axpy(1.0, &corr, &mut x[u * s..(u + 1) * s]);
            }
        }
        x
    }

    pub fn solve(&self, r_alpha: f64, r_b: &[f64]) -> (f64, Vec<f64>) {
        let mut x = self.solve_blocks(r_b);
        let alpha = (r_alpha - dot(&self.cross, &x)) / self.schur;
        axpy(-alpha, &self.m_inv_cross, &mut x);
        (alpha, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense assembly of the arrow matrix for comparison.
    fn dense(h_aa: f64, cross: &[f64], blocks: &[Matrix], low: Option<&Matrix>) -> Matrix {
        let nu = blocks.len();
        let s = blocks[0].rows();
        let dim = 1 + nu * s;
        let mut m = Matrix::zeros(dim, dim);
        m[(0, 0)] = h_aa;
        for k in 0..nu * s {
            m[(0, 1 + k)] = cross[k];
            m[(1 + k, 0)] = cross[k];
        }
        for (u, blk) in blocks.iter().enumerate() {
            for i in 0..s {
                for j in 0..s {
                    m[(1 + u * s + i, 1 + u * s + j)] += blk[(i, j)];
                }
            }
        }
        if let Some(sm) = low {
            for a in 0..nu {
                for b in 0..nu {
                    for i in 0..s {
                        for j in 0..s {
                            m[(1 + a * s + i, 1 + b * s + j)] -= sm[(i, j)];
                        }
                    }
                }
            }
        }
        m
    }

    fn spd(s: usize, seed: u64, shift: f64) -> Matrix {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = Matrix::from_row_major(s, s, (0..s * s).map(|_| next()).collect()).unwrap();
        let mut g = a.gram();
        g.add_diagonal(shift);
        g
    }

    #[test]
    fn arrow_solve_matches_dense_cholesky() {
        let (nu, s) = (4, 3);
        let g = spd(s, 7, 0.5);
        let rho = 0.8;
        let blocks: Vec<Matrix> = (0..nu)
            .map(|u| {
                let mut b = spd(s, 100 + u as u64, 0.1);
                b.add_scaled(rho * nu as f64, &g);
                b
            })
            .collect();
        let cross: Vec<f64> = (0..nu * s).map(|k| 0.05 * (k as f64).sin()).collect();
        let mut sm = g.clone();
        sm.scale(rho);
        let h_aa = 3.0;
        let factor =
            ArrowFactor::new(h_aa, cross.clone(), blocks.clone(), Some(sm.clone())).unwrap();
        let rhs: Vec<f64> = (0..=nu * s).map(|k| (k as f64 * 0.37).cos()).collect();
        let (a, x) = factor.solve(rhs[0], &rhs[1..]);
        let full = dense(h_aa, &cross, &blocks, Some(&sm));
        let reference = Cholesky::new(&full).unwrap().solve(&rhs);
        assert!((a - reference[0]).abs() < 1e-10);
        for k in 0..nu * s {
            assert!((x[k] - reference[1 + k]).abs() < 1e-10);
        }
    }

    #[test]
    fn block_diagonal_solve_matches_dense_cholesky() {
        let (nu, s) = (3, 4);
        let blocks: Vec<Matrix> = (0..nu).map(|u| spd(s, 40 + u as u64, 0.2)).collect();
        let cross: Vec<f64> = (0..nu * s).map(|k| 0.1 * (k as f64 * 0.7).sin()).collect();
        let factor = ArrowFactor::new(2.0, cross.clone(), blocks.clone(), None).unwrap();
        let rhs: Vec<f64> = (0..=nu * s).map(|k| 1.0 - 0.1 * k as f64).collect();
        let (a, x) = factor.solve(rhs[0], &rhs[1..]);
        let reference = Cholesky::new(&dense(2.0, &cross, &blocks, None))
            .unwrap()
            .solve(&rhs);
        assert!((a - reference[0]).abs() < 1e-10);
        for k in 0..nu * s {
            assert!((x[k] - reference[1 + k]).abs() < 1e-10);
        }
    }
}
