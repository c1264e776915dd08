//! Noise-variance estimation from flat patches, and the γ model.
//!
//! Flat patches come from hierarchical mean shift: first over oriented
//! tangent-plane normals of all nodes, then over positions inside each normal
//! cluster. The nodes' normal models are flipped to agree with the cluster.
//! Within a patch every node should share one normal `s`, which turns
//! denoising the normals into a mean filter (Gaussian noise) or a median
//! filter (Laplacian noise). The estimate is computed for the red and the
//! blue nodes of every patch and averaged.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bipartite::{self, BipartitePartition, GmrfConfig};
use crate::error::{Error, Result};
use crate::graph::{knn_graph_points, mean_knn_distance, WeightParams};
use crate::metrics::tangent_planes;
use crate::normals::{build_models, orient, orientation_flips, NormalModel};
use crate::pointcloud::{rescale_to_diagonal, Color, NoiseKind, PointCloud, DEFAULT_TARGET_DIAGONAL};
use crate::spatial::KdTree;
use crate::{Matrix3, Point3, Vector3};

pub const DEFAULT_MIN_PATCH_SIZE: usize = 25;
pub const DEFAULT_NORMAL_BANDWIDTH: f64 = 1.0;
/// Default `min_dist` for the estimator's normal models, relative to the mean
/// cross-color edge length.
pub const ESTIMATE_MIN_DIST_FACTOR: f64 = 0.1;
pub const DEFAULT_GEOMETRY_FACTOR: f64 = 2.0;
pub const GAMMA_FLOOR: f64 = 1e-6;
pub const GAMMA_CEIL: f64 = 0.8;

const SHIFT_MAX_ITERS: usize = 300;
const SHIFT_TOL: f64 = 1e-3;

/// Flat-kernel mean shift. Seeds are the centers of the occupied bins of a
/// grid with cell size `bandwidth`; converged modes closer than
/// `bandwidth / 2` to a mode with more support are merged. Every vector gets
/// the label of its nearest mode; labels are ordered by decreasing support.
pub fn mean_shift(vectors: &[Vector3], bandwidth: f64) -> Result<Vec<usize>> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if vectors.is_empty() {
        return Ok(Vec::new());
    }
    let tree = KdTree::new(vectors);
    let mut bins: BTreeMap<[i64; 3], ()> = BTreeMap::new();
    for v in vectors {
        bins.insert([0, 1, 2].map(|c| (v[c] / bandwidth).round() as i64), ());
    }
    let seeds: Vec<Vector3> = bins
        .keys()
        .map(|k| Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64) * bandwidth)
        .collect();
    let converged: Vec<Option<(Vector3, usize)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut x = seed;
            let mut support = 0;
            for _ in 0..SHIFT_MAX_ITERS {
                let nb = tree.within(&x, bandwidth);
                if nb.is_empty() {
                    break;
                }
                support = nb.len();
                let mean = nb.iter().map(|&i| vectors[i]).sum::<Vector3>() / nb.len() as f64;
                let step = (mean - x).norm();
                x = mean;
                if step <= SHIFT_TOL * bandwidth {
                    break;
                }
            }
            (support > 0).then_some((x, support))
        })
        .collect();
    let mut found: Vec<(Vector3, usize)> = converged.into_iter().flatten().collect();
    // stable: equal support keeps seed order
    found.sort_by_key(|a| std::cmp::Reverse(a.1));
    let mut modes: Vec<Vector3> = Vec::new();
    for (m, _) in found {
        if modes.iter().all(|k| (k - m).norm() >= 0.5 * bandwidth) {
            modes.push(m);
        }
    }
    let mode_tree = KdTree::new(&modes);
    Ok(vectors.par_iter().map(|v| mode_tree.nearest(v, 1, None)[0].0).collect())
}

/// Closed-form real eigenbasis of a scaled skew-symmetric matrix `A x = a × x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewEigen {
    /// Nonzero eigenvalues are ±iλ.
    pub lambda: f64,
    /// Null vector of A.
    pub v1: Vector3,
    pub v2: Vector3,
    pub v3: Vector3,
}

pub fn skew_eigen(a: &Matrix3) -> Result<SkewEigen> {
    if a.norm() < 1e-14 {
        return Err(Error::ZeroMatrix);
    }
    let axis = crate::normals::axial(a);
    let lambda = axis.norm();
    let v1 = axis / lambda;
    // the coordinate axis least aligned with v1 gives a well-conditioned perpendicular
    let e = Vector3::ith(v1.iamin(), 1.0);
    let v2 = (e - v1 * v1.dot(&e)).normalize();
    let v3 = v1.cross(&v2);
    Ok(SkewEigen { lambda, v1, v2, v3 })
}

impl SkewEigen {
    /// A_v = [v1ᵀ; v2ᵀA; v3ᵀA].
    pub fn a_v(&self, a: &Matrix3) -> Matrix3 {
        let r2 = self.v2.transpose() * a;
        let r3 = self.v3.transpose() * a;
        Matrix3::from_rows(&[self.v1.transpose(), r2, r3])
    }
}

/// Coordinatewise median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub normal_bandwidth: f64,
    /// Geometry bandwidth; defaults to [`DEFAULT_GEOMETRY_FACTOR`] times the mean k-NN distance.
    pub geometry_bandwidth: Option<f64>,
    pub min_patch_size: usize,
    /// Neighbors for the geometry bandwidth and for the tangent planes whose
    /// normals are clustered.
    pub k: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            normal_bandwidth: DEFAULT_NORMAL_BANDWIDTH,
            geometry_bandwidth: None,
            min_patch_size: DEFAULT_MIN_PATCH_SIZE,
            k: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatPatch {
    pub red_indices: Vec<usize>,
    pub blue_indices: Vec<usize>,
    pub red_points: Vec<Point3>,
    pub blue_points: Vec<Point3>,
    pub red_models: Vec<NormalModel>,
    pub blue_models: Vec<NormalModel>,
    pub min_size: usize,
}

impl FlatPatch {
    pub fn len(&self) -> usize {
        self.red_indices.len() + self.blue_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn roles(&self) -> [(&[NormalModel], &[Point3]); 2] {
        [(&self.red_models, &self.red_points), (&self.blue_models, &self.blue_points)]
    }
}

/// Models for every node, indexed by global index: red nodes from blue
/// positions and vice versa, oriented consistently over `graph`.
pub fn all_models(
    positions: &[Point3],
    partition: &BipartitePartition,
    graph: &crate::graph::Graph,
    min_dist: Option<f64>,
) -> Result<Vec<NormalModel>> {
    let mut slots: Vec<Option<NormalModel>> = vec![None; positions.len()];
    for color in [Color::Red, Color::Blue] {
        if partition.indices(color).is_empty() {
            continue;
        }
        for m in build_models(positions, partition, color, min_dist)? {
            let node = m.node;
            slots[node] = Some(m);
        }
    }
    let mut models: Vec<NormalModel> = slots
        .into_iter()
        .map(|m| m.ok_or(Error::TooFewBlueNeighbors { node: usize::MAX }))
        .collect::<Result<_>>()?;
    orient(&mut models, graph);
    Ok(models)
}

/// Hierarchical clustering, normals first and positions second; clusters of
/// at least `min_patch_size` nodes are returned.
pub fn detect_flat_patches(
    cloud: &PointCloud,
    partition: &BipartitePartition,
    models: &[NormalModel],
    config: &PatchConfig,
) -> Result<Vec<FlatPatch>> {
    let positions = cloud.points();
    if models.len() != positions.len() || partition.labels().len() != positions.len() {
        return Err(Error::InvalidInput("models and partition must cover every point".into()));
    }
    let geo_bw = match config.geometry_bandwidth {
        Some(b) => b,
        None => DEFAULT_GEOMETRY_FACTOR * mean_knn_distance(positions, config.k.min(positions.len().saturating_sub(1)).max(1)),
    };
    let normals = clustering_normals(positions, models, config)?;
    let normal_labels = mean_shift(&normals, config.normal_bandwidth)?;
    let mut patches = Vec::new();
    for members in group(&normal_labels) {
        if members.len() < config.min_patch_size {
            continue;
        }
        let pts: Vec<Point3> = members.iter().map(|&i| positions[i]).collect();
        let geo_labels = join_touching(&pts, &mean_shift(&pts, geo_bw)?, geo_bw);
        for sub in group(&geo_labels) {
            if sub.len() < config.min_patch_size {
                continue;
            }
            let mut patch = FlatPatch {
                red_indices: Vec::new(),
                blue_indices: Vec::new(),
                red_points: Vec::new(),
                blue_points: Vec::new(),
                red_models: Vec::new(),
                blue_models: Vec::new(),
                min_size: config.min_patch_size,
            };
            let mut nodes: Vec<usize> = sub.iter().map(|&t| members[t]).collect();
            nodes.sort_unstable();
            for i in nodes {
                let (idx, pts, ms) = match partition.color(i) {
                    Color::Red => (&mut patch.red_indices, &mut patch.red_points, &mut patch.red_models),
                    Color::Blue => (&mut patch.blue_indices, &mut patch.blue_points, &mut patch.blue_models),
                };
                idx.push(i);
                pts.push(positions[i]);
                let mut m = models[i].clone();
                if m.normal.dot(&normals[i]) < 0.0 {
                    m.flip();
                }
                ms.push(m);
            }
            patches.push(patch);
        }
    }
    if patches.is_empty() {
        return Err(Error::NoFlatPatches);
    }
    Ok(patches)
}

/// Normals of least-squares tangent planes through each point and its `k`
/// nearest neighbors, oriented best-first over the k-NN graph. Points with a
/// degenerate neighborhood keep their model normal.
fn clustering_normals(positions: &[Point3], models: &[NormalModel], config: &PatchConfig) -> Result<Vec<Vector3>> {
    let k = config.k.min(positions.len().saturating_sub(1)).max(1);
    let planes = tangent_planes(positions, k);
    let normals: Vec<Vector3> = planes
        .iter()
        .zip(models)
        .map(|(plane, m)| plane.map_or(m.normal, |(_, n)| n))
        .collect();
    let graph = knn_graph_points(positions, None, &WeightParams::new(1.0, k))?;
    let flips = orientation_flips(&normals, &graph);
    Ok(normals.into_iter().zip(flips).map(|(n, f)| if f { -n } else { n }).collect())
}

/// Merges clusters that have members within `radius` of each other and
/// relabels by first occurrence. Flat-kernel mean shift on uniformly sampled
/// surfaces stops at modes about one bandwidth apart, which cuts a connected
/// flat region into pieces much smaller than a patch.
pub fn join_touching(points: &[Point3], labels: &[usize], radius: f64) -> Vec<usize> {
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let tree = KdTree::new(points);
    for (i, p) in points.iter().enumerate() {
        for j in tree.within(p, radius) {
            let (a, b) = (find(&mut parent, labels[i]), find(&mut parent, labels[j]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let root = find(&mut parent, l);
            let next = relabel.len();
            *relabel.entry(root).or_insert(next)
        })
        .collect()
}

/// Member lists per label, in label order.
fn group(labels: &[usize]) -> Vec<Vec<usize>> {
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn normalized(v: Vector3) -> Result<Vector3> {
    v.try_normalize(1e-300).ok_or(Error::DegenerateModels(v.norm()))
}

/// Mean-filter estimate for one set of nodes sharing a normal.
pub fn gaussian_sigma2_role(models: &[NormalModel], points: &[Point3]) -> Result<f64> {
    let tr: f64 = models.iter().map(|m| m.tr_ata()).sum();
    if tr < 1e-15 {
        return Err(Error::DegenerateModels(tr));
    }
    let n: Vec<Vector3> = models.iter().zip(points).map(|(m, p)| m.eval(p)).collect();
    let s = normalized(n.iter().sum::<Vector3>() / n.len() as f64)?;
    let residual: f64 = n.iter().map(|n| (s - n).norm_squared()).sum();
    Ok(residual / tr)
}

/// Median-filter estimate for one set of nodes sharing a normal.
pub fn laplacian_sigma2_role(models: &[NormalModel], points: &[Point3]) -> Result<f64> {
    let n: Vec<Vector3> = models.iter().zip(points).map(|(m, p)| m.eval(p)).collect();
    let s = normalized(Vector3::from_fn(|c, _| median(&n.iter().map(|v| v[c]).collect::<Vec<_>>())))?;
    let mut total = 0.0;
    for (m, q) in models.iter().zip(points) {
        let eig = skew_eigen(&m.a)?;
        let a_v = eig.a_v(&m.a);
        let rhs = Vector3::new(eig.v1.dot(q), eig.v2.dot(&(s - m.b)), eig.v3.dot(&(s - m.b)));
        let p = a_v
            .lu()
            .solve(&rhs)
            .expect("A_v is invertible whenever A is nonzero");
        total += (q - p).norm_squared();
    }
    Ok(total / (3 * models.len()) as f64)
}

fn per_role(patch: &FlatPatch, f: impl Fn(&[NormalModel], &[Point3]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (models, points) in patch.roles() {
        if models.len() >= 2 {
            out.push(f(models, points)?);
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// σ² of a patch from the mean filter, averaged over its red and blue nodes.
pub fn estimate_gaussian_sigma2(patch: &FlatPatch) -> Result<f64> {
    let v = per_role(patch, gaussian_sigma2_role)?;
    if v.is_empty() {
        return Err(Error::TooFewPoints { needed: 2, got: patch.len() });
    }
    Ok(mean(&v))
}

/// σ² of a patch from the median filter, averaged over its red and blue nodes.
pub fn estimate_laplacian_sigma2(patch: &FlatPatch) -> Result<f64> {
    let v = per_role(patch, laplacian_sigma2_role)?;
    if v.is_empty() {
        return Err(Error::TooFewPoints { needed: 2, got: patch.len() });
    }
    Ok(mean(&v))
}

/// Variances are in the units of the input cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub sigma2: f64,
    pub kind: NoiseKind,
    pub patches_used: usize,
    /// One value per patch and node color.
    pub per_patch: Vec<f64>,
    /// Factor the input was scaled by before estimation.
    pub scale: f64,
}

impl NoiseEstimate {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// σ² in the rescaled frame the denoiser works in, which is what a
    /// [`GammaModel`] expects.
    pub fn sigma2_scaled(&self) -> f64 {
        self.sigma2 * self.scale * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub k: usize,
    pub target_diag: Option<f64>,
    pub gmrf: GmrfConfig,
    /// Defaults to [`ESTIMATE_MIN_DIST_FACTOR`] times the mean cross-color edge length.
    pub min_dist: Option<f64>,
    pub patches: PatchConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            k: 6,
            target_diag: Some(DEFAULT_TARGET_DIAGONAL),
            gmrf: GmrfConfig::default(),
            min_dist: None,
            patches: PatchConfig::default(),
        }
    }
}

/// Full estimator: rescale, partition, normals, flat patches, per-patch σ².
pub fn estimate_noise(cloud: &PointCloud, kind: NoiseKind, config: &NoiseConfig) -> Result<NoiseEstimate> {
    let (scaled, scale) = match config.target_diag {
        Some(d) => rescale_to_diagonal(cloud, d)?,
        None => (cloud.clone(), 1.0),
    };
    let q = scaled.points();
    if q.len() <= config.k {
        return Err(Error::TooFewPoints {
            needed: config.k + 1,
            got: q.len(),
        });
    }
    let params = WeightParams {
        sigma_p: mean_knn_distance(q, config.k),
        k: config.k,
        mutual: false,
    };
    let graph = knn_graph_points(q, None, &params)?;
    let partition = bipartite::approximate(&graph, &config.gmrf)?;
    let min_dist = config
        .min_dist
        .unwrap_or_else(|| ESTIMATE_MIN_DIST_FACTOR * crate::normals::mean_cross_distance(q, &partition));
    let models = all_models(q, &partition, &graph, Some(min_dist))?;
    let patch_cfg = PatchConfig {
        k: config.k,
        ..config.patches
    };
    let patches = detect_flat_patches(&scaled, &partition, &models, &patch_cfg)?;
    let mut per_patch = Vec::new();
    for p in &patches {
        let v = match kind {
            NoiseKind::Gaussian => per_role(p, gaussian_sigma2_role)?,
            NoiseKind::Laplacian => per_role(p, laplacian_sigma2_role)?,
        };
        per_patch.extend(v);
    }
    if per_patch.is_empty() {
        warn!("flat patches have fewer than two nodes of each color");
        return Err(Error::NoFlatPatches);
    }
    let unscale = 1.0 / (scale * scale);
    per_patch.iter_mut().for_each(|v| *v *= unscale);
    let sigma2 = mean(&per_patch);
    info!("{} flat patches, sigma = {:.4}", patches.len(), sigma2.sqrt());
    Ok(NoiseEstimate {
        sigma2,
        kind,
        patches_used: patches.len(),
        per_patch,
        scale,
    })
}

/// γ_opt ≈ slope · σ², with σ² in the rescaled frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaModel {
    pub slope: f64,
    /// Upper clamp for γ. Models written by a calibration sweep carry the
    /// sweep's upper end.
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
}

fn default_ceiling() -> f64 {
    GAMMA_CEIL
}

impl GammaModel {
    pub fn new(slope: f64) -> Result<Self> {
        Self::with_ceiling(slope, GAMMA_CEIL)
    }

    pub fn with_ceiling(slope: f64, ceiling: f64) -> Result<Self> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(Error::InvalidInput(format!("slope must be positive and finite, got {slope}")));
        }
        if !(ceiling.is_finite() && ceiling >= GAMMA_FLOOR) {
            return Err(Error::InvalidInput(format!("ceiling must be finite and >= {GAMMA_FLOOR}, got {ceiling}")));
        }
        Ok(GammaModel { slope, ceiling })
    }
}

/// slope · σ², clamped to [1e-6, ceiling].
pub fn gamma_opt(sigma2: f64, model: &GammaModel) -> f64 {
    (model.slope * sigma2).clamp(GAMMA_FLOOR, model.ceiling)
}
