//! Linearized surface-normal models.
//!
//! The normal at a node `i` of one color is the unit normal of the plane
//! through `p_i` and two nodes `k`, `l` of the other color. With `k` and `l`
//! held fixed the unnormalized normal `(p_i − p_k) × (p_k − p_l)` is affine in
//! `p_i`, so freezing the normalization at the current position gives
//! `n_i ≈ A_i p_i + b_i` with `A_i` a scaled skew-symmetric matrix.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use log::{debug, warn};
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::bipartite::BipartitePartition;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::pointcloud::Color;
use crate::spatial::KdTree;
use crate::{Matrix3, Point3, Vector3};

const COLLINEAR_TOL: f64 = 1e-12;

/// Cross-product matrix: `skew(a) * x == a × x`.
pub fn skew(a: &Vector3) -> Matrix3 {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Axial vector of a skew-symmetric matrix, the inverse of [`skew`].
pub fn axial(m: &Matrix3) -> Vector3 {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BluePairCriteria {
    pub min_dist: f64,
    pub target_angle: f64,
}

impl BluePairCriteria {
    pub fn new(min_dist: f64) -> Self {
        BluePairCriteria {
            min_dist,
            target_angle: 90.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BluePair {
    pub k: usize,
    pub l: usize,
    /// Angle between p_i − p_k and p_k − p_l in degrees.
    pub beta_deg: f64,
    pub dist_ik: f64,
    /// The three points are (numerically) collinear.
    pub degenerate: bool,
    /// No candidate passed the distance filter.
    pub relaxed: bool,
}

fn angle_deg(a: &Vector3, b: &Vector3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Chooses the ordered pair `(k, l)` of candidates whose angle at `k` is
/// closest to the target, among those with `‖p_i − p_k‖ ≥ min_dist`. Ties go
/// to the pair enumerated first. When no candidate is far enough, only the
/// farthest candidates are eligible for `k`.
pub fn select_blue_pair(p_i: &Point3, candidates: &[(usize, Point3)], criteria: &BluePairCriteria) -> Result<BluePair> {
    if candidates.len() < 2 {
        return Err(Error::TooFewBlueNeighbors { node: usize::MAX });
    }
    let dists: Vec<f64> = candidates.iter().map(|(_, p)| (p_i - p).norm()).collect();
    let mut relaxed = false;
    let mut eligible: Vec<bool> = dists.iter().map(|&d| d >= criteria.min_dist).collect();
    if !eligible.iter().any(|&e| e) {
        relaxed = true;
        let far = dists.iter().copied().fold(f64::MIN, f64::max);
        eligible = dists.iter().map(|&d| d == far).collect();
    }
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for (a, (_, pk)) in candidates.iter().enumerate() {
        if !eligible[a] {
            continue;
        }
        for (b, (_, pl)) in candidates.iter().enumerate() {
            if a == b {
                continue;
            }
            let beta = angle_deg(&(p_i - pk), &(pk - pl));
            let score = (beta - criteria.target_angle).abs();
            if best.is_none_or(|(s, ..)| score < s) {
                best = Some((score, a, b, beta));
            }
        }
    }
    let (_, a, b, beta) = best.expect("at least one eligible ordered pair");
    let (k, pk) = candidates[a];
    let (l, pl) = candidates[b];
    let degenerate = (p_i - pk).cross(&(pk - pl)).norm() < COLLINEAR_TOL;
    Ok(BluePair {
        k,
        l,
        beta_deg: beta,
        dist_ik: dists[a],
        degenerate,
        relaxed,
    })
}

/// `(C, d)` with `C p + d = (p − p_k) × (p_k − p_l)` for every `p`; errors
/// when the cross product vanishes at `p_i`.
pub fn normal_model(p_i: &Point3, p_k: &Point3, p_l: &Point3) -> Result<(Matrix3, Vector3)> {
    let u = p_k - p_l;
    let c = skew(&(p_l - p_k));
    let d = -p_k.cross(&u);
    if (c * p_i + d).norm() < COLLINEAR_TOL {
        return Err(Error::CollinearPoints);
    }
    Ok((c, d))
}

/// Freezes the normalization at `p_in`: returns `(A, b)` with `A p_in + b` unit.
pub fn linearize(c: &Matrix3, d: &Vector3, p_in: &Point3) -> Result<(Matrix3, Vector3)> {
    let s = (c * p_in + d).norm();
    if s < COLLINEAR_TOL {
        return Err(Error::CollinearPoints);
    }
    Ok((c / s, d / s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalModel {
    /// Global index of the node this model belongs to.
    pub node: usize,
    pub a: Matrix3,
    pub b: Vector3,
    pub sign: f64,
    /// Global indices of the two other-color nodes defining the plane.
    pub pair: (usize, usize),
    pub beta_deg: f64,
    pub dist_ik: f64,
    /// Normal at the linearization point (unit).
    pub normal: Vector3,
    /// Built from globally nearest other-color nodes instead of graph neighbors.
    pub borrowed: bool,
}

impl NormalModel {
    pub fn from_points(node: usize, p_i: &Point3, k: (usize, Point3), l: (usize, Point3)) -> Result<NormalModel> {
        let (c, d) = normal_model(p_i, &k.1, &l.1)?;
        let (a, b) = linearize(&c, &d, p_i)?;
        let u = p_i - k.1;
        let v = k.1 - l.1;
        Ok(NormalModel {
            node,
            a,
            b,
            sign: 1.0,
            pair: (k.0, l.0),
            beta_deg: angle_deg(&u, &v),
            dist_ik: u.norm(),
            normal: a * p_i + b,
            borrowed: false,
        })
    }

    #[inline]
    pub fn eval(&self, p: &Point3) -> Vector3 {
        self.a * p + self.b
    }

    /// Axial vector `a` with `A x = a × x`.
    pub fn axial(&self) -> Vector3 {
        axial(&self.a)
    }

    /// Magnitude of the nonzero eigenvalues ±iλ of A; equals
    /// 1/(‖p_i − p_k‖ sin β).
    pub fn lambda(&self) -> f64 {
        self.axial().norm()
    }

    /// tr(AᵀA) = 2λ².
    pub fn tr_ata(&self) -> f64 {
        self.a.norm_squared()
    }

    /// ‖p_i − p_k‖² sin²β.
    pub fn scale_term(&self) -> f64 {
        (self.dist_ik * self.beta_deg.to_radians().sin()).powi(2)
    }

    pub fn flip(&mut self) {
        self.a = -self.a;
        self.b = -self.b;
        self.sign = -self.sign;
        self.normal = -self.normal;
    }
}

pub const MIN_DIST_FACTOR: f64 = 1.5;

/// Mean length of the cross-color edges of the partition at `positions`.
pub fn mean_cross_distance(positions: &[Point3], partition: &BipartitePartition) -> f64 {
    let edges = partition.kept_edges().edges();
    if edges.is_empty() {
        return 0.0;
    }
    edges.iter().map(|&(i, j, _)| (positions[i] - positions[j]).norm()).sum::<f64>() / edges.len() as f64
}

/// Models for every node of `color`, in increasing global index, built from
/// their other-color neighbors in the partition. `min_dist` defaults to
/// [`MIN_DIST_FACTOR`] times the mean cross-color edge length, which in practice
/// picks the farthest neighbor as `k`.
pub fn build_models(
    positions: &[Point3],
    partition: &BipartitePartition,
    color: Color,
    min_dist: Option<f64>,
) -> Result<Vec<NormalModel>> {
    let criteria = BluePairCriteria::new(min_dist.unwrap_or_else(|| MIN_DIST_FACTOR * mean_cross_distance(positions, partition)));
    let others = partition.indices(color.other());
    let other_pts: Vec<Point3> = others.iter().map(|&j| positions[j]).collect();
    let mut tree: Option<KdTree> = None;
    let mut nearest_others = |p: &Point3, count: usize| -> Vec<(usize, Point3)> {
        let t = tree.get_or_insert_with(|| KdTree::new(&other_pts));
        t.nearest(p, count, None).into_iter().map(|(j, _)| (others[j], other_pts[j])).collect()
    };
    let mut models = Vec::new();
    let mut borrowed = 0usize;
    let mut degenerate = 0usize;
    for i in partition.indices(color) {
        let p_i = positions[i];
        let mut cands: Vec<(usize, Point3)> = partition
            .kept_edges()
            .neighbors(i)
            .iter()
            .map(|&(j, _)| (j, positions[j]))
            .collect();
        let mut is_borrowed = false;
        if cands.len() < 2 {
            if other_pts.len() < 2 {
                return Err(Error::TooFewBlueNeighbors { node: i });
            }
            debug!("node {i} has {} other-color neighbors; borrowing nearest", cands.len());
            cands = nearest_others(&p_i, 2);
            is_borrowed = true;
            borrowed += 1;
        }
        let mut pair = select_blue_pair(&p_i, &cands, &criteria)?;
        if pair.degenerate {
            degenerate += 1;
            let relaxed = BluePairCriteria { min_dist: 0.0, ..criteria };
            pair = select_blue_pair(&p_i, &cands, &relaxed)?;
            let mut count = 6;
            while pair.degenerate && count <= other_pts.len().max(6) {
                cands = nearest_others(&p_i, count.min(other_pts.len()));
                is_borrowed = true;
                pair = select_blue_pair(&p_i, &cands, &relaxed)?;
                if count >= other_pts.len() {
                    break;
                }
                count *= 2;
            }
            if pair.degenerate {
                return Err(Error::CollinearPoints);
            }
        }
        let mut m = NormalModel::from_points(i, &p_i, (pair.k, positions[pair.k]), (pair.l, positions[pair.l]))?;
        m.borrowed = is_borrowed;
        models.push(m);
    }
    if borrowed > 0 || degenerate > 0 {
        warn!("{color:?} normals: {borrowed} nodes borrowed neighbors, {degenerate} degenerate pairs repaired");
    }
    Ok(models)
}

/// Propagates a consistent orientation over `graph`, whose node `t`
/// corresponds to `models[t]`. See [`orientation_flips`].
pub fn orient(models: &mut [NormalModel], graph: &Graph) {
    let normals: Vec<Vector3> = models.iter().map(|m| m.normal).collect();
    for (m, flip) in models.iter_mut().zip(orientation_flips(&normals, graph)) {
        if flip {
            m.flip();
        }
    }
}

/// Which normals to negate for a consistent orientation over `graph`. Each
/// component is rooted at its lowest index and grown best-first: the next
/// node reached is the one whose normal is most parallel to its parent's,
/// and it is flipped when the two disagree. Nearly perpendicular pairs are
/// crossed last, so a single bad normal cannot flip a whole region.
pub fn orientation_flips(normals: &[Vector3], graph: &Graph) -> Vec<bool> {
    let n = normals.len();
    debug_assert_eq!(graph.n(), n);
    let mut seen = vec![false; n];
    let mut oriented = normals.to_vec();
    let mut flips = vec![false; n];
    let mut heap: BinaryHeap<(Reverse<OrderedFloat<f64>>, Reverse<usize>, usize)> = BinaryHeap::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        heap.push((Reverse(OrderedFloat(0.0)), Reverse(root), root));
        while let Some((_, Reverse(v), u)) = heap.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if v != u && oriented[v].dot(&oriented[u]) < 0.0 {
                oriented[v] = -oriented[v];
                flips[v] = true;
            }
            for &(w, _) in graph.neighbors(v) {
                if !seen[w] {
                    let cost = 1.0 - oriented[w].dot(&oriented[v]).abs();
                    heap.push((Reverse(OrderedFloat(cost)), Reverse(w), v));
                }
            }
        }
    }
    flips
}

/// n = A p + b for every model, with `p` indexed like the models.
pub fn eval_all(models: &[NormalModel], p: &[Point3]) -> Vec<Vector3> {
    models.iter().zip(p).map(|(m, p)| m.eval(p)).collect()
}
