//! Alternating red/blue driver shared by the ℓ2 and ℓ1 solvers.
//!
//! rescale → k-NN graph → bipartite partition, then per outer iteration and
//! per color: normal models from the other color's current positions, a k-NN
//! graph over the active color, and a reweighting loop that fixes the
//! Laplacian at the current positions and normals before each inner solve.
//! Fidelity is always measured against the original noisy positions.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::bipartite::{self, BipartitePartition, GmrfConfig};
use crate::error::{Error, Result};
use crate::graph::{angle_weight, distance_weight, knn_graph_points, mean_knn_distance, Graph, WeightParams};
use crate::normals::{build_models, eval_all, orient, NormalModel};
use crate::pointcloud::{rescale_to_diagonal, unscale, Color, PointCloud, DEFAULT_TARGET_DIAGONAL};
use crate::solver_l1::ApgConfig;
use crate::solver_l2::{all_finite, L2Config, SystemOperators};
use crate::{Point3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub k: usize,
    /// Distance-kernel bandwidth in rescaled units; defaults to the mean k-NN distance.
    pub sigma_p: Option<f64>,
    pub mutual: bool,
    /// Diagonal the cloud is rescaled to before processing; `None` keeps the input scale.
    pub target_diag: Option<f64>,
    pub gmrf: GmrfConfig,
    /// Minimum red-to-blue distance for plane selection; defaults to
    /// `normals::MIN_DIST_FACTOR` times the mean cross-color edge length.
    pub min_dist: Option<f64>,
    /// Outer loop stops when the mean displacement falls below this times the diagonal.
    pub outer_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            k: 6,
            sigma_p: None,
            mutual: false,
            target_diag: Some(DEFAULT_TARGET_DIAGONAL),
            gmrf: GmrfConfig::default(),
            min_dist: None,
            outer_tol: 1e-6,
        }
    }
}

impl PipelineOptions {
    pub fn from_weights(w: &WeightParams) -> Self {
        PipelineOptions {
            k: w.k,
            sigma_p: Some(w.sigma_p),
            mutual: w.mutual,
            ..Default::default()
        }
    }
}

/// Rescaled input with its partition, reusable across solver runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub q: Vec<Point3>,
    pub center: Point3,
    pub scale: f64,
    pub diagonal: f64,
    pub sigma_p: f64,
    pub k: usize,
    pub mutual: bool,
    pub partition: BipartitePartition,
    pub graph_edges: usize,
    pub prepare_seconds: f64,
}

pub fn prepare(cloud: &PointCloud, opts: &PipelineOptions) -> Result<Prepared> {
    let start = Instant::now();
    if cloud.len() < 2 * opts.k {
        return Err(Error::TooFewPoints {
            needed: 2 * opts.k,
            got: cloud.len(),
        });
    }
    let (lo, hi) = cloud.bounding_box().ok_or(Error::EmptyCloud)?;
    let center = (lo + hi) * 0.5;
    let (scaled, scale) = match opts.target_diag {
        Some(d) => rescale_to_diagonal(cloud, d)?,
        None => (cloud.clone(), 1.0),
    };
    let q = scaled.points().to_vec();
    let sigma_p = match opts.sigma_p {
        Some(s) => s,
        None => mean_knn_distance(&q, opts.k),
    };
    let params = WeightParams {
        sigma_p,
        k: opts.k,
        mutual: opts.mutual,
    };
    let graph = knn_graph_points(&q, None, &params)?;
    let partition = bipartite::approximate(&graph, &opts.gmrf)?;
    info!(
        "partition: {} red, {} blue, {} of {} edges kept",
        partition.red().len(),
        partition.blue().len(),
        partition.kept_edges().num_edges(),
        graph.num_edges()
    );
    Ok(Prepared {
        diagonal: scaled.diagonal(),
        q,
        center,
        scale,
        sigma_p,
        k: opts.k,
        mutual: opts.mutual,
        graph_edges: graph.num_edges(),
        partition,
        prepare_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub p: Vec<Vector3>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub lipschitz: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    /// Objective with the Laplacian of this step, before and after the solve.
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub cond_bound: f64,
    pub rho_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub outer: usize,
    pub color: Color,
    pub nodes: usize,
    pub borrowed_neighbors: usize,
    pub reweights: Vec<InnerReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_s: f64,
    pub solve_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub fidelity: String,
    pub backend: String,
    pub gamma: f64,
    pub k: usize,
    pub sigma_p: f64,
    pub scale: f64,
    pub diagonal: f64,
    pub red_nodes: usize,
    pub blue_nodes: usize,
    pub graph_edges: usize,
    pub kept_edges: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Mean point displacement per outer iteration (rescaled units).
    pub displacements: Vec<f64>,
    pub phases: Vec<PhaseReport>,
    pub timings: Timings,
}

impl Report {
    pub fn objective_trajectory(&self) -> Vec<f64> {
        self.inner_reports().map(|r| r.objective_after).collect()
    }

    pub fn cond_bounds(&self) -> Vec<f64> {
        self.inner_reports().map(|r| r.cond_bound).collect()
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_reports().map(|r| r.iterations).sum()
    }

    pub fn inner_reports(&self) -> impl Iterator<Item = &InnerReport> {
        self.phases.iter().flat_map(|p| p.reweights.iter())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub(crate) type InnerSolve<'a> = &'a dyn Fn(&SystemOperators, &[Vector3], &[Vector3]) -> Result<InnerOutcome>;

pub(crate) struct Fidelity<'a> {
    pub name: &'static str,
    pub backend: String,
    pub gamma: f64,
    pub outer_iters: usize,
    pub reweight_iters: usize,
    /// ‖q − p‖ term of the objective.
    pub fidelity: fn(&[Vector3], &[Vector3]) -> f64,
    pub inner: InnerSolve<'a>,
}

pub(crate) fn fidelity_l2(q: &[Vector3], p: &[Vector3]) -> f64 {
    q.iter().zip(p).map(|(q, p)| (q - p).norm_squared()).sum()
}

pub(crate) fn fidelity_l1(q: &[Vector3], p: &[Vector3]) -> f64 {
    q.iter().zip(p).map(|(q, p)| (q - p).lp_norm(1)).sum()
}

pub fn run_l2(prepared: &Prepared, config: &L2Config, opts: &PipelineOptions) -> Result<(PointCloud, Report)> {
    config.validate()?;
    let inner = |ops: &SystemOperators, q: &[Vector3], p0: &[Vector3]| config.inner(ops, q, p0);
    let fid = Fidelity {
        name: "l2",
        backend: match config.backend {
            crate::solver_l2::Backend::Cg => "cg".into(),
            crate::solver_l2::Backend::Lanczos(m) => format!("lanczos({m})"),
        },
        gamma: config.gamma,
        outer_iters: config.outer_iters,
        reweight_iters: config.reweight_iters,
        fidelity: fidelity_l2,
        inner: &inner,
    };
    run(prepared, opts, &fid)
}

pub fn run_l1(prepared: &Prepared, config: &ApgConfig, opts: &PipelineOptions) -> Result<(PointCloud, Report)> {
    config.validate()?;
    let inner = |ops: &SystemOperators, q: &[Vector3], p0: &[Vector3]| config.inner(ops, q, p0);
    let fid = Fidelity {
        name: "l1",
        backend: "apg".into(),
        gamma: config.gamma,
        outer_iters: config.outer_iters,
        reweight_iters: config.reweight_iters,
        fidelity: fidelity_l1,
        inner: &inner,
    };
    run(prepared, opts, &fid)
}

/// Operators for the Laplacian fixed at positions `p_act` and the normals the models give there.
fn reweighted_operators(topo: &Graph, models: &[NormalModel], p_act: &[Vector3], sigma_p: f64) -> SystemOperators {
    let normals: Vec<Vector3> = eval_all(models, p_act)
        .into_iter()
        .map(|n| n.try_normalize(0.0).unwrap_or(n))
        .collect();
    let lg = topo.reweighted(|i, j| distance_weight(&p_act[i], &p_act[j], sigma_p) * angle_weight(&normals[i], &normals[j]));
    crate::solver_l2::assemble(&lg, models)
}

/// The operators of the first inner solve for `color`: normal models and the
/// reweighted Laplacian at the noisy positions. Returns the node indices of
/// that color with the operators.
pub fn color_operators(prepared: &Prepared, color: Color, opts: &PipelineOptions) -> Result<(Vec<usize>, SystemOperators)> {
    let part = &prepared.partition;
    let idx = part.indices(color);
    if idx.len() < 2 || part.indices(color.other()).len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: idx.len().min(part.indices(color.other()).len()) });
    }
    let mut models = build_models(&prepared.q, part, color, opts.min_dist)?;
    let p_act: Vec<Vector3> = idx.iter().map(|&i| prepared.q[i]).collect();
    let params = WeightParams {
        sigma_p: prepared.sigma_p,
        k: prepared.k.min(idx.len() - 1),
        mutual: prepared.mutual,
    };
    let topo = knn_graph_points(&p_act, None, &params)?;
    orient(&mut models, &topo);
    Ok((idx, reweighted_operators(&topo, &models, &p_act, prepared.sigma_p)))
}

fn run(prepared: &Prepared, opts: &PipelineOptions, fid: &Fidelity) -> Result<(PointCloud, Report)> {
    let start = Instant::now();
    let part = &prepared.partition;
    let q = &prepared.q;
    let mut p = q.clone();
    let mut phases = Vec::new();
    let mut displacements = Vec::new();
    let mut converged = false;
    let mut outer_done = 0;
    for outer in 0..fid.outer_iters {
        let prev = p.clone();
        for color in [Color::Red, Color::Blue] {
            let idx = part.indices(color);
            if idx.len() < 2 || part.indices(color.other()).len() < 2 {
                continue;
            }
            let k = prepared.k.min(idx.len() - 1);
            let mut models = build_models(&p, part, color, opts.min_dist)?;
            let mut p_act: Vec<Vector3> = idx.iter().map(|&i| p[i]).collect();
            let q_act: Vec<Vector3> = idx.iter().map(|&i| q[i]).collect();
            let params = WeightParams {
                sigma_p: prepared.sigma_p,
                k,
                mutual: prepared.mutual,
            };
            let topo = knn_graph_points(&p_act, None, &params)?;
            orient(&mut models, &topo);
            let mut reweights = Vec::with_capacity(fid.reweight_iters);
            for _ in 0..fid.reweight_iters {
                let ops = reweighted_operators(&topo, &models, &p_act, prepared.sigma_p);
                let objective = |x: &[Vector3]| (fid.fidelity)(&q_act, x) + fid.gamma * ops.regularizer(x);
                let before = objective(&p_act);
                let out = (fid.inner)(&ops, &q_act, &p_act)?;
                if !all_finite(&out.p) {
                    return Err(Error::NonFinite("inner solver iterate"));
                }
                let after = objective(&out.p);
                debug!(
                    "outer {outer} {color:?}: objective {before:.6e} -> {after:.6e} in {} iterations",
                    out.iterations
                );
                reweights.push(InnerReport {
                    objective_before: before,
                    objective_after: after,
                    iterations: out.iterations,
                    residual: out.residual,
                    converged: out.converged,
                    cond_bound: ops.cond_bound(fid.gamma),
                    rho_max: ops.rho_max(),
                    lipschitz_constant: out.lipschitz,
                    step_size: out.step,
                });
                p_act = out.p;
            }
            for (t, &i) in idx.iter().enumerate() {
                p[i] = p_act[t];
            }
            phases.push(PhaseReport {
                outer,
                color,
                nodes: idx.len(),
                borrowed_neighbors: models.iter().filter(|m| m.borrowed).count(),
                reweights,
            });
        }
        outer_done = outer + 1;
        let disp = p.iter().zip(&prev).map(|(a, b)| (a - b).norm()).sum::<f64>() / p.len() as f64;
        displacements.push(disp);
        if disp < opts.outer_tol * prepared.diagonal {
            converged = true;
            break;
        }
    }
    let solve_s = start.elapsed().as_secs_f64();
    let out_points = unscale(&p, prepared.center, prepared.scale);
    let cloud = PointCloud::new(out_points)?.with_labels(part.labels().to_vec())?;
    let report = Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        fidelity: fid.name.to_string(),
        backend: fid.backend.clone(),
        gamma: fid.gamma,
        k: prepared.k,
        sigma_p: prepared.sigma_p,
        scale: prepared.scale,
        diagonal: prepared.diagonal,
        red_nodes: part.red().len(),
        blue_nodes: part.blue().len(),
        graph_edges: prepared.graph_edges,
        kept_edges: part.kept_edges().num_edges(),
        outer_iterations: outer_done,
        converged,
        displacements,
        phases,
        timings: Timings {
            prepare_s: prepared.prepare_seconds,
            solve_s,
            total_s: prepared.prepare_seconds + solve_s,
        },
    };
    Ok((cloud, report))
}
