//! ℓ2-fidelity denoising: the quadratic system built from the normal models,
//! its conjugate-gradient and Lanczos solvers, and the alternating driver.
//!
//! For one color with positions `p` (one 3-vector per node), normals
//! `n = A p + b` and a Laplacian `L` over that color, the regularizer is
//! `f(p) = Σ_c n_cᵀ L n_c = pᵀ L̃ p + 2 pᵀ L̄ + const`. Minimizing
//! `‖q − p‖² + γ f(p)` gives `(I + γ L̃) p = q − γ L̄`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, WeightParams};
use crate::normals::NormalModel;
use crate::pipeline::{self, InnerOutcome, PipelineOptions, Report};
use crate::pointcloud::PointCloud;
use crate::{Matrix3, Vector3};

pub(crate) fn dot(a: &[Vector3], b: &[Vector3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub(crate) fn norm(a: &[Vector3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn all_finite(a: &[Vector3]) -> bool {
    a.iter().all(|v| v.iter().all(|c| c.is_finite()))
}

/// Operators of the quadratic regularizer for one color.
#[derive(Debug, Clone)]
pub struct SystemOperators {
    graph: Graph,
    a: Vec<Matrix3>,
    b: Vec<Vector3>,
    l_bar: Vec<Vector3>,
    constant: f64,
    rho_max: f64,
    min_scale: f64,
}

/// Builds `L̃` (matrix-free) and `L̄` from a Laplacian over the models' nodes.
pub fn assemble(graph: &Graph, models: &[NormalModel]) -> SystemOperators {
    assert_eq!(graph.n(), models.len(), "one model per graph node");
    let a: Vec<Matrix3> = models.iter().map(|m| m.a).collect();
    let b: Vec<Vector3> = models.iter().map(|m| m.b).collect();
    let mut lb = vec![Vector3::zeros(); b.len()];
    graph.laplacian_mul3(&b, &mut lb);
    let l_bar = a.iter().zip(&lb).map(|(a, v)| a.transpose() * v).collect();
    let constant = dot(&b, &lb);
    let min_scale = models.iter().map(|m| m.scale_term()).fold(f64::INFINITY, f64::min);
    SystemOperators {
        rho_max: graph.rho_max(),
        graph: graph.clone(),
        a,
        b,
        l_bar,
        constant,
        min_scale,
    }
}

impl SystemOperators {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn l_bar(&self) -> &[Vector3] {
        &self.l_bar
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    /// min_i ‖p_i − p_k‖² sin²β_i over the models.
    pub fn min_scale(&self) -> f64 {
        self.min_scale
    }

    /// out = L̃ x.
    pub fn apply(&self, x: &[Vector3], out: &mut [Vector3]) {
        let ax: Vec<Vector3> = self.a.par_iter().zip(x.par_iter()).map(|(a, x)| a * x).collect();
        let g = &self.graph;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = ax[i] * g.degree()[i];
            for &(j, w) in g.neighbors(i) {
                acc -= ax[j] * w;
            }
            *o = self.a[i].transpose() * acc;
        });
    }

    /// out = (I + γ L̃) x.
    pub fn apply_shifted(&self, gamma: f64, x: &[Vector3], out: &mut [Vector3]) {
        self.apply(x, out);
        out.iter_mut().zip(x).for_each(|(o, x)| *o = x + *o * gamma);
    }

    /// Regularizer value f(p) = Σ_edges w ‖n_i − n_j‖² with n = A p + b.
    pub fn regularizer(&self, p: &[Vector3]) -> f64 {
        let n: Vec<Vector3> = self.a.iter().zip(&self.b).zip(p).map(|((a, b), p)| a * p + b).collect();
        self.graph
            .edges()
            .iter()
            .map(|&(i, j, w)| w * (n[i] - n[j]).norm_squared())
            .sum()
    }

    /// Same value through the quadratic form pᵀL̃p + 2pᵀL̄ + bᵀLb.
    pub fn regularizer_quadratic(&self, p: &[Vector3]) -> f64 {
        let mut lp = vec![Vector3::zeros(); p.len()];
        self.apply(p, &mut lp);
        dot(p, &lp) + 2.0 * dot(p, &self.l_bar) + self.constant
    }

    /// ∇ of γ f at `p`: 2γ(L̃p + L̄).
    pub fn gradient(&self, gamma: f64, p: &[Vector3], out: &mut [Vector3]) {
        self.apply(p, out);
        out.iter_mut().zip(&self.l_bar).for_each(|(o, l)| *o = (*o + l) * (2.0 * gamma));
    }

    /// Right-hand side q − γ L̄.
    pub fn rhs(&self, gamma: f64, q: &[Vector3]) -> Vec<Vector3> {
        q.iter().zip(&self.l_bar).map(|(q, l)| q - l * gamma).collect()
    }

    /// Certified upper bound on the condition number of I + γL̃:
    /// 1 + 6γρ_max / min_i(‖p_i − p_k‖² sin²β_i).
    pub fn cond_bound(&self, gamma: f64) -> f64 {
        if self.rho_max == 0.0 {
            1.0
        } else {
            1.0 + 6.0 * gamma * self.rho_max / self.min_scale
        }
    }

    /// Upper bound on λ_max(L̃): 6ρ_max / min_i(‖p_i − p_k‖² sin²β_i).
    pub fn lambda_max_bound(&self) -> f64 {
        if self.rho_max == 0.0 {
            0.0
        } else {
            6.0 * self.rho_max / self.min_scale
        }
    }

    /// Dense `(L̃, L̄)` in node-major order `[x_0, y_0, z_0, x_1, …]`.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let l = self.graph.dense_laplacian();
        let mut a = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for i in 0..n {
            a.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&self.a[i]);
        }
        // L ⊗ I₃ couples the same coordinate of different nodes
        let mut lk = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for i in 0..n {
            for j in 0..n {
                for c in 0..3 {
                    lk[(3 * i + c, 3 * j + c)] = l[(i, j)];
                }
            }
        }
        let lt = a.transpose() * &lk * &a;
        let lbar = DVector::from_iterator(3 * n, self.l_bar.iter().flat_map(|v| v.iter().copied()));
        (lt, lbar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<Vector3>,
    pub iterations: usize,
    /// ‖r_k‖ after each iteration, starting with the initial residual.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradient on (I + γL̃) x = rhs, stopping at
/// ‖r‖ ≤ tol · ‖rhs‖. Returns the last iterate with a flag when the
/// iteration cap is hit.
pub fn cg(ops: &SystemOperators, gamma: f64, rhs: &[Vector3], x0: Option<&[Vector3]>, tol: f64, max_iters: usize) -> CgResult {
    let n = rhs.len();
    let b_norm = norm(rhs);
    let mut x: Vec<Vector3> = x0.map_or_else(|| rhs.to_vec(), |x| x.to_vec());
    if b_norm == 0.0 {
        return CgResult {
            x: vec![Vector3::zeros(); n],
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
        };
    }
    let mut ap = vec![Vector3::zeros(); n];
    ops.apply_shifted(gamma, &x, &mut ap);
    let mut r: Vec<Vector3> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut residuals = vec![rs.sqrt()];
    let threshold = tol * b_norm;
    let mut iterations = 0;
    while rs.sqrt() > threshold && iterations < max_iters {
        ops.apply_shifted(gamma, &p, &mut ap);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
        rs = rs_new;
        residuals.push(rs.sqrt());
        iterations += 1;
    }
    CgResult {
        converged: rs.sqrt() <= threshold,
        x,
        iterations,
        residuals,
    }
}

/// Inner ℓ2 solve with CG started from `q`.
pub fn solve_inner_cg(ops: &SystemOperators, q: &[Vector3], gamma: f64, cg_tol: f64) -> CgResult {
    let rhs = ops.rhs(gamma, q);
    cg(ops, gamma, &rhs, Some(q), cg_tol, 10 * 3 * q.len().max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosResult {
    pub x: Vec<Vector3>,
    /// Krylov dimension actually used.
    pub steps: usize,
    /// Set when an invariant subspace was found before `M` steps.
    pub breakdown: bool,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

/// Order-M Lanczos approximation of (I + γL̃)⁻¹ q̃:
/// ‖q̃‖ V_M (I + γH_M)⁻¹ e₁ with H_M = V_Mᵀ L̃ V_M tridiagonal.
///
/// Uses full reorthogonalization. A vanishing β means the Krylov space is
/// invariant under L̃, which makes the truncated result exact.
pub fn solve_inner_lanczos(ops: &SystemOperators, q_tilde: &[Vector3], gamma: f64, m: usize) -> Result<LanczosResult> {
    if m == 0 {
        return Err(Error::InvalidInput("Lanczos order must be at least 1".into()));
    }
    let n = q_tilde.len();
    let beta0 = norm(q_tilde);
    if beta0 == 0.0 {
        return Ok(LanczosResult {
            x: vec![Vector3::zeros(); n],
            steps: 0,
            breakdown: false,
            alphas: vec![],
            betas: vec![],
        });
    }
    let m = m.min(3 * n);
    let mut basis: Vec<Vec<Vector3>> = vec![q_tilde.iter().map(|v| v / beta0).collect()];
    let mut alphas = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut w = vec![Vector3::zeros(); n];
    let mut breakdown = false;
    let mut scale = 0.0f64;
    for j in 0..m {
        ops.apply(&basis[j], &mut w);
        let alpha = dot(&w, &basis[j]);
        for i in 0..n {
            w[i] -= basis[j][i] * alpha;
            if j > 0 {
                w[i] -= basis[j - 1][i] * betas[j - 1];
            }
        }
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= v * c);
            }
        }
        alphas.push(alpha);
        if !alpha.is_finite() {
            return Err(Error::Breakdown { step: j });
        }
        if j + 1 == m {
            break;
        }
        let beta = norm(&w);
        scale = scale.max(alpha.abs()).max(beta);
        if !(beta > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            breakdown = true;
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|v| v / beta).collect());
    }
    let k = alphas.len();
    let y = tridiagonal_shifted_solve(&alphas, &betas[..k - 1], gamma, beta0);
    let mut x = vec![Vector3::zeros(); n];
    for (yj, v) in y.iter().zip(&basis) {
        x.iter_mut().zip(v).for_each(|(x, v)| *x += v * *yj);
    }
    Ok(LanczosResult {
        x,
        steps: k,
        breakdown,
        alphas,
        betas,
    })
}

/// Solves (I + γH) y = r e₁ for symmetric tridiagonal H (diagonal `alpha`,
/// off-diagonal `beta`) by the Thomas algorithm.
fn tridiagonal_shifted_solve(alpha: &[f64], beta: &[f64], gamma: f64, r: f64) -> Vec<f64> {
    let k = alpha.len();
    let diag: Vec<f64> = alpha.iter().map(|a| 1.0 + gamma * a).collect();
    let off: Vec<f64> = beta.iter().map(|b| gamma * b).collect();
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    let mut denom = diag[0];
    c[0] = if k > 1 { off[0] / denom } else { 0.0 };
    d[0] = r / denom;
    for i in 1..k {
        denom = diag[i] - off[i - 1] * c[i - 1];
        c[i] = if i + 1 < k { off[i] / denom } else { 0.0 };
        d[i] = -off[i - 1] * d[i - 1] / denom;
    }
    let mut y = vec![0.0; k];
    y[k - 1] = d[k - 1];
    for i in (0..k - 1).rev() {
        y[i] = d[i] - c[i] * y[i + 1];
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Backend {
    Cg,
    Lanczos(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Config {
    pub gamma: f64,
    pub outer_iters: usize,
    pub reweight_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub backend: Backend,
}

impl Default for L2Config {
    fn default() -> Self {
        L2Config {
            gamma: 0.1,
            outer_iters: 3,
            reweight_iters: 5,
            cg_tol: 1e-10,
            cg_max_iters: 2000,
            backend: Backend::Cg,
        }
    }
}

impl L2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.cg_tol.is_finite() && self.cg_tol > 0.0) {
            return Err(Error::InvalidInput(format!("cg_tol must be positive, got {}", self.cg_tol)));
        }
        if self.backend == Backend::Lanczos(0) {
            return Err(Error::InvalidInput("Lanczos order must be at least 1".into()));
        }
        Ok(())
    }

    /// One inner ℓ2 solve for the given operators, starting from `p0`.
    pub(crate) fn inner(&self, ops: &SystemOperators, q: &[Vector3], p0: &[Vector3]) -> Result<InnerOutcome> {
        let rhs = ops.rhs(self.gamma, q);
        let (x, iterations, converged) = match self.backend {
            Backend::Cg => {
                let r = cg(ops, self.gamma, &rhs, Some(p0), self.cg_tol, self.cg_max_iters);
                (r.x, r.iterations, r.converged)
            }
            Backend::Lanczos(m) => {
                // filter the residual at p0 rather than the rhs itself, so the
                // truncation error scales with the correction and not with the
                // absolute coordinates
                let mut ap = vec![Vector3::zeros(); p0.len()];
                ops.apply_shifted(self.gamma, p0, &mut ap);
                let r0: Vec<Vector3> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
                let r = solve_inner_lanczos(ops, &r0, self.gamma, m)?;
                let x = p0.iter().zip(&r.x).map(|(p, d)| p + d).collect();
                (x, r.steps, true)
            }
        };
        let mut ax = vec![Vector3::zeros(); x.len()];
        ops.apply_shifted(self.gamma, &x, &mut ax);
        let residual = norm(&ax.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&rhs).max(f64::MIN_POSITIVE);
        Ok(InnerOutcome {
            p: x,
            iterations,
            residual,
            converged,
            lipschitz: None,
            step: None,
        })
    }
}

/// Full ℓ2 denoising pipeline. The returned cloud is in the input's frame.
pub fn denoise_l2(cloud: &PointCloud, config: &L2Config, weights: &WeightParams) -> Result<(PointCloud, Report)> {
    let opts = PipelineOptions::from_weights(weights);
    denoise_l2_with(cloud, config, &opts)
}

pub fn denoise_l2_with(cloud: &PointCloud, config: &L2Config, opts: &PipelineOptions) -> Result<(PointCloud, Report)> {
    config.validate()?;
    let prepared = pipeline::prepare(cloud, opts)?;
    pipeline::run_l2(&prepared, config, opts)
}

/// Dense-assembled fidelity + regularizer objective ‖q − p‖² + γ f(p).
pub fn objective_l2(ops: &SystemOperators, gamma: f64, q: &[Vector3], p: &[Vector3]) -> f64 {
    let fid: f64 = q.iter().zip(p).map(|(q, p)| (q - p).norm_squared()).sum();
    fid + gamma * ops.regularizer(p)
}
