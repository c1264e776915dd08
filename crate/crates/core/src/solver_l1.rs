//! ℓ1-fidelity denoising by accelerated proximal gradient.
//!
//! Minimizes `‖q − p‖₁ + γ f(p)` where `f` is the quadratic regularizer of
//! [`SystemOperators`]. The smooth part has gradient `2γ(L̃p + L̄)` with
//! Lipschitz constant `2γ λ_max(L̃)`; the proximal map of the fidelity is a
//! soft threshold centered at `q`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{lanczos_lambda_max, WeightParams};
use crate::pipeline::{self, fidelity_l1, InnerOutcome, PipelineOptions, Report};
use crate::pointcloud::{PointCloud, DEFAULT_TARGET_DIAGONAL};
use crate::solver_l2::{norm, SystemOperators};
use crate::Vector3;

const EIG_TOL: f64 = 1e-10;
const EIG_MAX_STEPS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// t = 1/L.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApgConfig {
    pub gamma: f64,
    pub step: StepSize,
    pub apg_iters: usize,
    pub reweight_iters: usize,
    pub outer_iters: usize,
    /// Stop when ‖p̂ᵐ − p̂ᵐ⁻¹‖ falls to this (absolute, in the solver's units).
    pub stop_tol: f64,
}

impl Default for ApgConfig {
    fn default() -> Self {
        ApgConfig {
            gamma: 0.1,
            step: StepSize::Auto,
            apg_iters: 200,
            reweight_iters: 5,
            outer_iters: 3,
            stop_tol: 1e-7 * DEFAULT_TARGET_DIAGONAL,
        }
    }
}

impl ApgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if let StepSize::Fixed(t) = self.step {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidInput(format!("step must be positive, got {t}")));
            }
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput(format!("stop_tol must be >= 0, got {}", self.stop_tol)));
        }
        Ok(())
    }

    pub(crate) fn inner(&self, ops: &SystemOperators, q: &[Vector3], p0: &[Vector3]) -> Result<InnerOutcome> {
        let r = apg_solve_from(ops, q, p0, self)?;
        Ok(InnerOutcome {
            residual: r.last_change,
            converged: r.converged,
            iterations: r.iterations,
            lipschitz: Some(r.lipschitz),
            step: Some(r.step),
            p: r.p,
        })
    }
}

/// λ_max(L̃). Plain power iteration stalls on the nearly double top
/// eigenvalues these operators tend to have, so the Krylov space is used.
pub fn lambda_max(ops: &SystemOperators) -> f64 {
    let n = ops.n();
    let apply = |x: &[f64], y: &mut [f64]| {
        let xv: Vec<Vector3> = x.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let mut yv = vec![Vector3::zeros(); n];
        ops.apply(&xv, &mut yv);
        for (dst, src) in y.chunks_mut(3).zip(&yv) {
            dst.copy_from_slice(src.as_slice());
        }
    };
    lanczos_lambda_max(3 * n, apply, EIG_TOL, EIG_MAX_STEPS, 0x5eed)
}

/// Lipschitz constant of the smooth part's gradient: 2γ λ_max(L̃).
pub fn lipschitz(ops: &SystemOperators, gamma: f64) -> f64 {
    if gamma == 0.0 || ops.graph().num_edges() == 0 {
        return 0.0;
    }
    2.0 * gamma * lambda_max(ops)
}

/// Upper bound on the Lipschitz constant: 2γ · 6ρ_max / min_i(‖p_i − p_k‖² sin²β_i).
pub fn lipschitz_bound(ops: &SystemOperators, gamma: f64) -> f64 {
    2.0 * gamma * ops.lambda_max_bound()
}

/// argmin_x |x − q| + (x − v)²/(2t), coordinatewise.
pub fn prox_l1(v: &[Vector3], q: &[Vector3], t: f64) -> Vec<Vector3> {
    v.iter()
        .zip(q)
        .map(|(v, q)| Vector3::from_fn(|c, _| soft(v[c], q[c], t)))
        .collect()
}

#[inline]
fn soft(v: f64, q: f64, t: f64) -> f64 {
    let d = v - q;
    if d.abs() <= t {
        q
    } else {
        v - t * d.signum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgResult {
    /// Iterate with the lowest objective seen, including the starting point.
    pub p: Vec<Vector3>,
    pub iterations: usize,
    pub converged: bool,
    pub lipschitz: f64,
    pub step: f64,
    /// Objective at the start and after every iteration.
    pub objectives: Vec<f64>,
    pub last_change: f64,
}

impl ApgResult {
    pub fn initial_objective(&self) -> f64 {
        self.objectives[0]
    }

    pub fn best_objective(&self) -> f64 {
        self.objectives.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn objective_l1(ops: &SystemOperators, gamma: f64, q: &[Vector3], p: &[Vector3]) -> f64 {
    fidelity_l1(q, p) + gamma * ops.regularizer(p)
}

/// Step size for the configuration given the Lipschitz constant.
pub fn step_for(config: &ApgConfig, l: f64) -> Result<f64> {
    let max = if l > 0.0 { 1.0 / l } else { f64::INFINITY };
    match config.step {
        StepSize::Auto => Ok(if l > 0.0 { 1.0 / l } else { 1.0 }),
        StepSize::Fixed(t) if t > max * (1.0 + 1e-12) => Err(Error::StepTooLarge { step: t, max }),
        StepSize::Fixed(t) => Ok(t),
    }
}

/// APG started from `q`.
pub fn apg_solve(ops: &SystemOperators, q: &[Vector3], config: &ApgConfig) -> Result<ApgResult> {
    apg_solve_from(ops, q, q, config)
}

pub fn apg_solve_from(ops: &SystemOperators, q: &[Vector3], p0: &[Vector3], config: &ApgConfig) -> Result<ApgResult> {
    config.validate()?;
    let gamma = config.gamma;
    let l = lipschitz(ops, gamma);
    let t = step_for(config, l)?;
    let n = q.len();
    let mut prev = p0.to_vec();
    let mut cur = p0.to_vec();
    let mut best = p0.to_vec();
    let mut best_obj = objective_l1(ops, gamma, q, p0);
    let mut objectives = vec![best_obj];
    let mut grad = vec![Vector3::zeros(); n];
    let mut iterations = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for m in 1..=config.apg_iters {
        let mom = (m as f64 - 2.0) / (m as f64 + 1.0);
        let z: Vec<Vector3> = cur.iter().zip(&prev).map(|(c, p)| c + (c - p) * mom).collect();
        ops.gradient(gamma, &z, &mut grad);
        let v: Vec<Vector3> = z.iter().zip(&grad).map(|(z, g)| z - g * t).collect();
        let next = prox_l1(&v, q, t);
        let diff: Vec<Vector3> = next.iter().zip(&cur).map(|(a, b)| a - b).collect();
        last_change = norm(&diff);
        prev = std::mem::replace(&mut cur, next);
        iterations = m;
        let obj = objective_l1(ops, gamma, q, &cur);
        objectives.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&cur);
        }
        if last_change <= config.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(ApgResult {
        p: best,
        iterations,
        converged,
        lipschitz: l,
        step: t,
        objectives,
        last_change,
    })
}

/// Full ℓ1 denoising pipeline. The returned cloud is in the input's frame.
pub fn denoise_l1(cloud: &PointCloud, config: &ApgConfig, weights: &WeightParams) -> Result<(PointCloud, Report)> {
    let opts = PipelineOptions::from_weights(weights);
    denoise_l1_with(cloud, config, &opts)
}

pub fn denoise_l1_with(cloud: &PointCloud, config: &ApgConfig, opts: &PipelineOptions) -> Result<(PointCloud, Report)> {
    config.validate()?;
    let prepared = pipeline::prepare(cloud, opts)?;
    pipeline::run_l1(&prepared, config, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::normals::NormalModel;
    use crate::pointcloud::rng_from_seed;
    use crate::solver_l2::{assemble, tests::random_instance};
    use nalgebra::SymmetricEigen;
    use rand::Rng;

    fn rand_vecs(n: usize, rng: &mut impl Rng, s: f64) -> Vec<Vector3> {
        (0..n)
            .map(|_| Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * s)
            .collect()
    }

    #[test]
    fn prox_basic_cases() {
        let q = vec![Vector3::new(1.0, -2.0, 0.5)];
        assert_eq!(prox_l1(&q, &q, 0.3), q);
        let t = 0.25;
        let v = vec![q[0] + Vector3::repeat(2.0 * t)];
        let got = prox_l1(&v, &q, t);
        assert!((got[0] - (q[0] + Vector3::repeat(t))).norm() < 1e-15);
    }

    #[test]
    fn prox_matches_grid_search() {
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let v = rng.random::<f64>() * 4.0 - 2.0;
            let q = rng.random::<f64>() * 4.0 - 2.0;
            let t = rng.random::<f64>() * 1.5 + 0.01;
            let obj = |x: f64| (x - q).abs() + (x - v).powi(2) / (2.0 * t);
            let mut best = (f64::INFINITY, 0.0);
            let mut x = -5.0;
            while x <= 5.0 {
                let o = obj(x);
                if o < best.0 {
                    best = (o, x);
                }
                x += 1e-4;
            }
            assert!((soft(v, q, t) - best.1).abs() <= 1e-4);
        }
    }

    #[test]
    fn prox_is_nonexpansive() {
        let mut rng = rng_from_seed(2);
        for _ in 0..100 {
            let q = rand_vecs(5, &mut rng, 2.0);
            let a = rand_vecs(5, &mut rng, 4.0);
            let b = rand_vecs(5, &mut rng, 4.0);
            let t = rng.random::<f64>();
            let pa = prox_l1(&a, &q, t);
            let pb = prox_l1(&b, &q, t);
            let d1: Vec<Vector3> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            let d0: Vec<Vector3> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(norm(&d1) <= norm(&d0) + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (ops, pts) = random_instance(60, 3);
        let gamma = 0.4;
        let f = |p: &[Vector3]| gamma * ops.regularizer(p);
        let mut g = vec![Vector3::zeros(); 60];
        ops.gradient(gamma, &pts, &mut g);
        let h = 1e-5;
        let mut fd = vec![Vector3::zeros(); 60];
        for i in 0..60 {
            for c in 0..3 {
                let mut a = pts.clone();
                let mut b = pts.clone();
                a[i][c] += h;
                b[i][c] -= h;
                fd[i][c] = (f(&a) - f(&b)) / (2.0 * h);
            }
        }
        let diff: Vec<Vector3> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-5 * norm(&g), "{} vs {}", norm(&diff), norm(&g));
    }

    #[test]
    fn lipschitz_matches_dense_and_bound() {
        for seed in 0..10 {
            let (ops, _) = random_instance(50, 10 + seed);
            let gamma = 0.3;
            let l = lipschitz(&ops, gamma);
            let ev = SymmetricEigen::new(ops.to_dense().0).eigenvalues;
            let mut e: Vec<f64> = ev.iter().copied().collect();
            e.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let exact = 2.0 * gamma * e[0];
            assert!((l - exact).abs() <= 1e-5, "{l} vs {exact}");
            assert!(l <= lipschitz_bound(&ops, gamma) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_operator_gives_zero_lipschitz_unit_step() {
        let (_, pts) = random_instance(10, 4);
        let models: Vec<NormalModel> = (0..10)
            .map(|t| NormalModel::from_points(t, &pts[t], (0, pts[t] + Vector3::x()), (1, pts[t] + Vector3::y())).unwrap())
            .collect();
        let ops = assemble(&Graph::from_edges(10, []).unwrap(), &models);
        assert_eq!(lipschitz(&ops, 0.5), 0.0);
        assert_eq!(step_for(&ApgConfig::default(), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn gamma_zero_one_step() {
        let (ops, pts) = random_instance(40, 5);
        let cfg = ApgConfig {
            gamma: 0.0,
            ..Default::default()
        };
        let r = apg_solve(&ops, &pts, &cfg).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.p, pts);
    }

    #[test]
    fn step_guard_rejects_large_step() {
        let (ops, pts) = random_instance(40, 6);
        let l = lipschitz(&ops, 0.5);
        let cfg = ApgConfig {
            gamma: 0.5,
            step: StepSize::Fixed(2.0 / l),
            ..Default::default()
        };
        assert!(matches!(apg_solve(&ops, &pts, &cfg), Err(Error::StepTooLarge { .. })));
        let ok = ApgConfig {
            step: StepSize::Fixed(0.5 / l),
            ..cfg
        };
        assert!(apg_solve(&ops, &pts, &ok).is_ok());
    }

    #[test]
    fn objective_never_above_initial() {
        let (ops, q) = random_instance(200, 7);
        let mut rng = rng_from_seed(8);
        let noisy: Vec<Vector3> = q.iter().map(|p| p + rand_vecs(1, &mut rng, 0.2)[0]).collect();
        let cfg = ApgConfig {
            gamma: 0.5,
            stop_tol: 0.0,
            apg_iters: 300,
            ..Default::default()
        };
        let r = apg_solve(&ops, &noisy, &cfg).unwrap();
        let init = r.initial_objective();
        for &o in &r.objectives {
            assert!(o <= init * (1.0 + 1e-12));
        }
        assert!(objective_l1(&ops, 0.5, &noisy, &r.p) <= init);
    }

    #[test]
    fn short_run_close_to_long_run() {
        let (ops, q) = random_instance(300, 9);
        let cfg = ApgConfig {
            gamma: 0.5,
            stop_tol: 0.0,
            apg_iters: 200,
            ..Default::default()
        };
        let short = apg_solve(&ops, &q, &cfg).unwrap();
        let long = apg_solve(&ops, &q, &ApgConfig { apg_iters: 2000, ..cfg }).unwrap();
        let (s, l) = (short.best_objective(), long.best_objective());
        assert!(s - l <= 0.01 * l.abs(), "{s} vs {l}");
    }
}
