//! Offline fit of the γ model: sweep γ on noisy copies of clean surfaces,
//! keep the γ with the lowest C2P for each (surface, σ), then fit
//! γ_opt = slope · σ² through the origin.
//!
//! C2P as a function of γ is close to unimodal, so the sweep evaluates every
//! `coarse_stride`-th grid value first and then refines around the best one
//! with halving strides. All runs for one noisy cloud share a single
//! [`prepare`].

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{c2p, DEFAULT_PLANE_K};
use crate::noise_est::GammaModel;
use crate::pipeline::{prepare, run_l1, run_l2, PipelineOptions, Prepared};
use crate::pointcloud::{add_noise, rescale_to_diagonal, NoiseKind, NoiseSpec, PointCloud, DEFAULT_TARGET_DIAGONAL};
use crate::solver_l1::ApgConfig;
use crate::solver_l2::L2Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    L2,
    L1,
}

impl Solver {
    /// ℓ2 for Gaussian noise, ℓ1 for Laplacian.
    pub fn for_noise(kind: NoiseKind) -> Solver {
        match kind {
            NoiseKind::Gaussian => Solver::L2,
            NoiseKind::Laplacian => Solver::L1,
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Solver> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Solver::L2),
            "l1" => Ok(Solver::L1),
            _ => Err(Error::InvalidInput(format!("unknown fidelity {s:?} (expected l2 or l1)"))),
        }
    }
}

/// Uniform grid `0, step, 2·step, …, (points − 1)·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub step: f64,
    pub points: usize,
}

impl GammaGrid {
    pub fn value(&self, j: usize) -> f64 {
        self.step * j as f64
    }

    pub fn max(&self) -> f64 {
        self.value(self.points.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) || self.points < 2 {
            return Err(Error::InvalidInput(format!("bad gamma grid: step {} with {} points", self.step, self.points)));
        }
        Ok(())
    }
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid { step: 0.25, points: 129 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub kind: NoiseKind,
    pub solver: Solver,
    pub sigmas: Vec<f64>,
    pub grid: GammaGrid,
    /// Evaluate every `coarse_stride`-th grid value first; 1 evaluates the whole grid.
    pub coarse_stride: usize,
    pub outer_iters: usize,
    pub plane_k: usize,
    pub seed: u64,
    pub pipeline: PipelineOptions,
}

impl CalibrationConfig {
    pub fn new(kind: NoiseKind) -> Self {
        CalibrationConfig {
            kind,
            solver: Solver::for_noise(kind),
            sigmas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            grid: GammaGrid::default(),
            coarse_stride: 8,
            outer_iters: 3,
            plane_k: DEFAULT_PLANE_K,
            seed: 1,
            pipeline: PipelineOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.coarse_stride == 0 {
            return Err(Error::InvalidInput("coarse_stride must be >= 1".into()));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(format!("sigmas must be positive, got {:?}", self.sigmas)));
        }
        Ok(())
    }
}

/// Grid index minimizing `eval`, searched coarse to fine. Ties go to the smaller γ.
pub fn coarse_to_fine(points: usize, coarse_stride: usize, mut eval: impl FnMut(usize) -> Result<f64>) -> Result<(usize, BTreeMap<usize, f64>)> {
    let mut seen = BTreeMap::new();
    let mut visit = |j: usize, seen: &mut BTreeMap<usize, f64>| -> Result<()> {
        if let std::collections::btree_map::Entry::Vacant(e) = seen.entry(j) {
            e.insert(eval(j)?);
        }
        Ok(())
    };
    let last = points - 1;
    let mut stride = coarse_stride.max(1);
    let mut j = 0;
    while j < last {
        visit(j, &mut seen)?;
        j += stride;
    }
    visit(last, &mut seen)?;
    let best = |seen: &BTreeMap<usize, f64>| {
        seen.iter().fold((0, f64::INFINITY), |acc, (&j, &v)| if v < acc.1 { (j, v) } else { acc }).0
    };
    while stride > 1 {
        let centre = best(&seen);
        let next = stride / 2;
        for j in [centre.saturating_sub(stride - next), centre.saturating_sub(next), centre + next, centre + stride - next] {
            if j <= last {
                visit(j, &mut seen)?;
            }
        }
        stride = next;
    }
    Ok((best(&seen), seen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub surface: String,
    pub sigma: f64,
    pub gamma_opt: f64,
    pub c2p_opt: f64,
    pub c2p_noisy: f64,
    /// (γ, C2P) for every evaluated grid value, in γ order.
    pub evaluated: Vec<(f64, f64)>,
}

fn denoise(prepared: &Prepared, solver: Solver, gamma: f64, outer_iters: usize, opts: &PipelineOptions) -> Result<PointCloud> {
    let out = match solver {
        Solver::L2 => run_l2(prepared, &L2Config { gamma, outer_iters, ..Default::default() }, opts)?,
        Solver::L1 => run_l1(prepared, &ApgConfig { gamma, outer_iters, ..Default::default() }, opts)?,
    };
    Ok(out.0)
}

/// γ_opt for one noisy copy of `clean`. Both clouds must share a frame.
pub fn sweep_gamma(surface: &str, clean: &PointCloud, noisy: &PointCloud, sigma: f64, config: &CalibrationConfig) -> Result<SweepResult> {
    config.validate()?;
    let prepared = prepare(noisy, &config.pipeline)?;
    let (best, seen) = coarse_to_fine(config.grid.points, config.coarse_stride, |j| {
        let gamma = config.grid.value(j);
        let out = if gamma == 0.0 { noisy.clone() } else { denoise(&prepared, config.solver, gamma, config.outer_iters, &config.pipeline)? };
        c2p(clean, &out, config.plane_k)
    })?;
    let result = SweepResult {
        surface: surface.to_string(),
        sigma,
        gamma_opt: config.grid.value(best),
        c2p_opt: seen[&best],
        c2p_noisy: seen.get(&0).copied().unwrap_or(f64::NAN),
        evaluated: seen.iter().map(|(&j, &v)| (config.grid.value(j), v)).collect(),
    };
    info!(
        "{surface} sigma={sigma}: gamma_opt={} c2p {:.3e} -> {:.3e} ({} runs)",
        result.gamma_opt,
        result.c2p_noisy,
        result.c2p_opt,
        result.evaluated.len()
    );
    Ok(result)
}

/// Least-squares slope of y = a·x through the origin.
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> f64 {
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    sxy / sxx
}

/// R² of the ordinary least-squares line y = a + b·x.
pub fn linear_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return if sxx == 0.0 { 1.0 } else { 0.0 };
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: NoiseKind,
    pub solver: Solver,
    pub model: GammaModel,
    /// R² of the line through (σ, mean over surfaces of √γ_opt).
    pub r2: f64,
    pub sweeps: Vec<SweepResult>,
}

impl Calibration {
    /// (σ, √γ_opt averaged over surfaces), in σ order.
    pub fn sqrt_gamma_by_sigma(&self) -> Vec<(f64, f64)> {
        mean_sqrt_gamma(&self.sweeps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }
}

fn mean_sqrt_gamma(sweeps: &[SweepResult]) -> Vec<(f64, f64)> {
    let mut sigmas: Vec<f64> = sweeps.iter().map(|s| s.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    sigmas
        .into_iter()
        .map(|sigma| {
            let v: Vec<f64> = sweeps.iter().filter(|s| s.sigma == sigma).map(|s| s.gamma_opt.sqrt()).collect();
            (sigma, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Fit from finished sweeps. σ is taken in the rescaled frame.
pub fn fit(kind: NoiseKind, solver: Solver, sweeps: Vec<SweepResult>, ceiling: f64) -> Result<Calibration> {
    if sweeps.is_empty() {
        return Err(Error::InvalidInput("no sweeps to fit".into()));
    }
    let s2: Vec<f64> = sweeps.iter().map(|s| s.sigma * s.sigma).collect();
    let g: Vec<f64> = sweeps.iter().map(|s| s.gamma_opt).collect();
    let slope = fit_through_origin(&s2, &g);
    if !(slope > 0.0) {
        return Err(Error::InvalidInput(format!("every sweep picked gamma = 0; cannot fit a positive slope ({slope})")));
    }
    let means = mean_sqrt_gamma(&sweeps);
    let (xs, ys): (Vec<f64>, Vec<f64>) = means.into_iter().unzip();
    Ok(Calibration {
        kind,
        solver,
        model: GammaModel::with_ceiling(slope, ceiling)?,
        r2: linear_r2(&xs, &ys),
        sweeps,
    })
}

/// Sweeps every surface at every σ and fits the model. Surfaces are rescaled
/// to the pipeline's diagonal first, so σ is in that frame.
pub fn calibrate(surfaces: &[(String, PointCloud)], config: &CalibrationConfig) -> Result<Calibration> {
    config.validate()?;
    if surfaces.is_empty() {
        return Err(Error::InvalidInput("calibration corpus is empty".into()));
    }
    let diag = config.pipeline.target_diag.unwrap_or(DEFAULT_TARGET_DIAGONAL);
    let mut sweeps = Vec::new();
    for (si, (name, cloud)) in surfaces.iter().enumerate() {
        let (clean, _) = rescale_to_diagonal(cloud, diag)?;
        for (ki, &sigma) in config.sigmas.iter().enumerate() {
            let seed = config.seed.wrapping_add(1000 * si as u64 + ki as u64);
            let noisy = add_noise(&clean, &NoiseSpec { kind: config.kind, sigma, seed })?;
            sweeps.push(sweep_gamma(name, &clean, &noisy, sigma, config)?);
        }
    }
    fit(config.kind, config.solver, sweeps, config.grid.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_est::gamma_opt;
    use crate::synthetic::plane;

    #[test]
    fn coarse_to_fine_finds_unimodal_minimum() {
        for target in [0usize, 1, 7, 37, 64, 100, 127, 128] {
            let mut calls = 0;
            let (best, seen) = coarse_to_fine(129, 8, |j| {
                calls += 1;
                Ok((j as f64 - target as f64).abs())
            })
            .unwrap();
            assert_eq!(best, target);
            assert_eq!(seen.len(), calls);
            assert!(calls <= 17 + 8, "{calls}");
        }
    }

    #[test]
    fn coarse_to_fine_stride_one_is_exhaustive() {
        let vals = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let (best, seen) = coarse_to_fine(vals.len(), 1, |j| Ok(vals[j])).unwrap();
        assert_eq!(seen.len(), vals.len());
        assert_eq!(best, 1);
    }

    #[test]
    fn coarse_to_fine_matches_exhaustive_on_random_unimodal() {
        use rand::Rng;
        let mut rng = crate::pointcloud::rng_from_seed(3);
        for _ in 0..200 {
            let n = rng.random_range(2..150);
            let c: f64 = rng.random_range(0.0..n as f64);
            let p: f64 = rng.random_range(0.5..3.0);
            let f = |j: usize| (j as f64 - c).abs().powf(p);
            let exhaustive = (0..n).min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap();
            let (best, _) = coarse_to_fine(n, 8, |j| Ok(f(j))).unwrap();
            assert_eq!(f(best), f(exhaustive));
        }
    }

    #[test]
    fn slope_through_origin() {
        let xs = [0.01, 0.04, 0.09, 0.16];
        let ys: Vec<f64> = xs.iter().map(|x| 7.5 * x).collect();
        assert!((fit_through_origin(&xs, &ys) - 7.5).abs() < 1e-12);
        // Oracle: grid search over the slope.
        let ys = [0.1, 0.2, 0.8, 1.1];
        let sse = |a: f64| xs.iter().zip(&ys).map(|(x, y)| (y - a * x).powi(2)).sum::<f64>();
        let a = fit_through_origin(&xs, &ys);
        for k in 0..2000 {
            assert!(sse(a) <= sse(k as f64 * 0.01) + 1e-15);
        }
    }

    #[test]
    fn r2_values() {
        let xs = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!((linear_r2(&xs, &[1.0, 2.0, 3.0, 4.0, 5.0]) - 1.0).abs() < 1e-12);
        assert!(linear_r2(&xs, &[1.0, -1.0, 1.0, -1.0, 1.0]) < 0.1);
        let ys = [1.1, 1.9, 3.2, 3.8, 5.1];
        let r2 = linear_r2(&xs, &ys);
        let (mx, my) = (0.3, ys.iter().sum::<f64>() / 5.0);
        let b = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - b * (x - mx)).powi(2)).sum();
        let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((r2 - (1.0 - sse / sst)).abs() < 1e-12);
    }

    fn sweep(surface: &str, sigma: f64, gamma: f64) -> SweepResult {
        SweepResult { surface: surface.into(), sigma, gamma_opt: gamma, c2p_opt: 0.0, c2p_noisy: 0.0, evaluated: vec![] }
    }

    #[test]
    fn fitted_model_reproduces_line() {
        let sweeps = vec![sweep("a", 0.1, 0.5), sweep("a", 0.2, 2.0), sweep("b", 0.1, 0.7), sweep("b", 0.2, 1.8)];
        let cal = fit(NoiseKind::Gaussian, Solver::L2, sweeps, 32.0).unwrap();
        for s2 in [0.0025, 0.01, 0.04, 0.2] {
            assert!((gamma_opt(s2, &cal.model) - cal.model.slope * s2).abs() <= 1e-12);
        }
        assert_eq!(cal.sqrt_gamma_by_sigma().len(), 2);
        assert_eq!(cal.r2, 1.0);
        let back: Calibration = serde_json::from_str(&cal.to_json()).unwrap();
        assert_eq!(back, cal);
    }

    #[test]
    fn all_zero_sweeps_cannot_fit() {
        assert!(fit(NoiseKind::Gaussian, Solver::L2, vec![sweep("a", 0.1, 0.0)], 1.0).is_err());
        assert!(fit(NoiseKind::Gaussian, Solver::L2, vec![], 1.0).is_err());
    }

    #[test]
    fn sweep_on_noisy_plane_picks_positive_gamma() {
        let clean = PointCloud::new(plane(1500, 100.0, 4)).unwrap();
        let mut config = CalibrationConfig::new(NoiseKind::Gaussian);
        config.sigmas = vec![0.4];
        config.grid = GammaGrid { step: 1.0, points: 17 };
        config.coarse_stride = 4;
        config.outer_iters = 2;
        let cal = calibrate(&[("plane".into(), clean)], &config).unwrap();
        let s = &cal.sweeps[0];
        assert!(s.gamma_opt > 0.0);
        assert!(s.c2p_opt < s.c2p_noisy);
        assert!(s.evaluated.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(cal.model.ceiling, 16.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = CalibrationConfig::new(NoiseKind::Laplacian);
        assert_eq!(c.solver, Solver::L1);
        c.sigmas.clear();
        assert!(c.validate().is_err());
        let mut c = CalibrationConfig::new(NoiseKind::Gaussian);
        c.grid.points = 1;
        assert!(c.validate().is_err());
        assert!(calibrate(&[], &CalibrationConfig::new(NoiseKind::Gaussian)).is_err());
        assert!("l0".parse::<Solver>().is_err());
    }
}
