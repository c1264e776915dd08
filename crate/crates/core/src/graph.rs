//! Weighted k-NN graphs, Laplacians and the (reweighted) graph Laplacian
//! regularizers on surface normals.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{rng_from_seed, PointCloud};
use crate::spatial::KdTree;
use crate::{Point3, Vector3};

/// Weights below this are not stored.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// Bandwidth of the distance kernel.
    pub sigma_p: f64,
    pub k: usize,
    /// Keep an edge only when both endpoints select each other.
    pub mutual: bool,
}

impl WeightParams {
    pub fn new(sigma_p: f64, k: usize) -> Self {
        WeightParams {
            sigma_p,
            k,
            mutual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p.is_finite() && self.sigma_p > 0.0) {
            return Err(Error::InvalidInput(format!("sigma_p must be positive, got {}", self.sigma_p)));
        }
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Undirected weighted graph. Edges are stored once with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    degree: Vec<f64>,
    offsets: Vec<usize>,
    adj: Vec<(usize, f64)>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Endpoint order is
    /// normalized; self-loops, duplicates and invalid weights are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Graph> {
        let mut list: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at node {a}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) has weight {w}")));
            }
            list.push((a.min(b), a.max(b), w));
        }
        list.sort_by_key(|x| (x.0, x.1));
        if let Some(w) = list.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidInput(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Self::from_sorted(n, list))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize, f64)>) -> Graph {
        let mut count = vec![0usize; n + 1];
        for &(i, j, _) in &edges {
            count[i + 1] += 1;
            count[j + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let offsets = count;
        let mut fill = offsets.clone();
        let mut adj = vec![(0usize, 0.0f64); 2 * edges.len()];
        // edges are sorted by (i, j), so neighbors come out sorted per row:
        // for row r, entries with j == r arrive (ordered by i < r) before those with i == r
        for &(i, j, w) in &edges {
            adj[fill[j]] = (i, w);
            fill[j] += 1;
        }
        for &(i, j, w) in &edges {
            adj[fill[i]] = (j, w);
            fill[i] += 1;
        }
        let degree = (0..n)
            .map(|i| adj[offsets[i]..offsets[i + 1]].iter().map(|x| x.1).sum())
            .collect();
        Graph {
            n,
            edges,
            degree,
            offsets,
            adj,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// Neighbors of `i` with edge weights, sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let row = self.neighbors(i);
        row.binary_search_by_key(&j, |x| x.0).ok().map(|p| row[p].1)
    }

    pub fn rho_max(&self) -> f64 {
        self.degree.iter().copied().fold(0.0, f64::max)
    }

    /// Same topology with weights recomputed by `f(i, j)`; edges whose new
    /// weight falls below [`WEIGHT_FLOOR`] are dropped.
    pub fn reweighted(&self, f: impl Fn(usize, usize) -> f64) -> Graph {
        let edges = self
            .edges
            .iter()
            .map(|&(i, j, _)| (i, j, f(i, j)))
            .filter(|e| e.2 >= WEIGHT_FLOOR)
            .collect();
        Self::from_sorted(self.n, edges)
    }

    /// Subgraph keeping only edges for which `keep(i, j)` holds.
    pub fn filter_edges(&self, keep: impl Fn(usize, usize) -> bool) -> Graph {
        let edges = self.edges.iter().copied().filter(|&(i, j, _)| keep(i, j)).collect();
        Self::from_sorted(self.n, edges)
    }

    /// Connected components as lists of node indices, each sorted, ordered by
    /// their smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for root in 0..self.n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut comp = vec![root];
            let mut queue = VecDeque::from([root]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// y = L x for a scalar signal.
    pub fn laplacian_mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = self.degree[i] * x[i];
            for &(j, w) in self.neighbors(i) {
                acc -= w * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = L x applied independently to each coordinate channel.
    pub fn laplacian_mul3(&self, x: &[Vector3], y: &mut [Vector3]) {
        for i in 0..self.n {
            let mut acc = x[i] * self.degree[i];
            for &(j, w) in self.neighbors(i) {
                acc -= x[j] * w;
            }
            y[i] = acc;
        }
    }

    /// fᵀ L f evaluated as Σ w (f_i − f_j)².
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        self.edges.iter().map(|&(i, j, w)| w * (f[i] - f[j]).powi(2)).sum()
    }

    pub fn laplacian(&self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.adj.len() + self.n);
        let mut vals = Vec::with_capacity(self.adj.len() + self.n);
        row_ptr.push(0);
        for i in 0..self.n {
            let mut diag_done = false;
            for &(j, w) in self.neighbors(i) {
                if !diag_done && j > i {
                    cols.push(i);
                    vals.push(self.degree[i]);
                    diag_done = true;
                }
                cols.push(j);
                vals.push(-w);
            }
            if !diag_done {
                cols.push(i);
                vals.push(self.degree[i]);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.edges {
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    /// Edge list as text lines `i j w`.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for &(i, j, w) in &self.edges {
            s.push_str(&format!("{i} {j} {w}\n"));
        }
        s
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Distance term of the edge weight.
#[inline]
pub fn distance_weight(p_i: &Point3, p_j: &Point3, sigma_p: f64) -> f64 {
    (-(p_i - p_j).norm_squared() / (sigma_p * sigma_p)).exp()
}

/// Normal-agreement term ((2 − ‖n_i − n_j‖²)/2)², equal to (n_iᵀn_j)² for unit normals.
#[inline]
pub fn angle_weight(n_i: &Vector3, n_j: &Vector3) -> f64 {
    let d = (n_i - n_j).norm_squared();
    let h = (2.0 - d) / 2.0;
    h * h
}

/// Full edge weight: distance kernel times normal agreement. In [0, 1] for unit normals.
#[inline]
pub fn edge_weight(p_i: &Point3, p_j: &Point3, n_i: &Vector3, n_j: &Vector3, sigma_p: f64) -> f64 {
    distance_weight(p_i, p_j, sigma_p) * angle_weight(n_i, n_j)
}

/// Sorted neighbor lists of the `k` nearest neighbors of every point.
pub fn knn_lists(points: &[Point3], k: usize) -> Vec<Vec<(usize, f64)>> {
    let tree = KdTree::new(points);
    (0..points.len())
        .into_par_iter()
        .map(|i| tree.nearest(&points[i], k, Some(i)))
        .collect()
}

/// Mean Euclidean distance from each point to its `k` nearest neighbors.
pub fn mean_knn_distance(points: &[Point3], k: usize) -> f64 {
    let lists = knn_lists(points, k);
    let (sum, cnt) = lists
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), &(_, d2)| (s + d2.sqrt(), c + 1));
    if cnt == 0 {
        0.0
    } else {
        sum / cnt as f64
    }
}

/// Symmetrized k-NN graph over the cloud. Weights use normals when the cloud
/// carries them, otherwise only the distance kernel.
pub fn knn_graph(cloud: &PointCloud, params: &WeightParams) -> Result<Graph> {
    knn_graph_points(cloud.points(), cloud.normals(), params)
}

pub fn knn_graph_points(points: &[Point3], normals: Option<&[Vector3]>, params: &WeightParams) -> Result<Graph> {
    params.validate()?;
    if points.len() < params.k + 1 {
        return Err(Error::TooFewPoints {
            needed: params.k + 1,
            got: points.len(),
        });
    }
    let lists = knn_lists(points, params.k);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(points.len() * params.k);
    for (i, list) in lists.iter().enumerate() {
        for &(j, _) in list {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    let mut edges = Vec::with_capacity(pairs.len());
    let mut idx = 0;
    while idx < pairs.len() {
        let pair = pairs[idx];
        let mut run = 1;
        while idx + run < pairs.len() && pairs[idx + run] == pair {
            run += 1;
        }
        idx += run;
        if params.mutual && run < 2 {
            continue;
        }
        let (i, j) = pair;
        let w = match normals {
            Some(n) => edge_weight(&points[i], &points[j], &n[i], &n[j], params.sigma_p),
            None => distance_weight(&points[i], &points[j], params.sigma_p),
        };
        if w >= WEIGHT_FLOOR {
            edges.push((i, j, w));
        }
    }
    Ok(Graph::from_sorted(points.len(), edges))
}

/// Graph Laplacian regularizer with the graph's weights held fixed.
pub fn glr(normals: &[Vector3], graph: &Graph) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j, w)| w * (normals[i] - normals[j]).norm_squared())
        .sum()
}

/// Reweighted regularizer: every edge weight is recomputed from the current
/// positions and normals before summing.
pub fn rglr(normals: &[Vector3], graph: &Graph, sigma_p: f64, positions: &[Point3]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j, _)| {
            let w = edge_weight(&positions[i], &positions[j], &normals[i], &normals[j], sigma_p);
            w * (normals[i] - normals[j]).norm_squared()
        })
        .sum()
}

/// Same quantity as [`rglr`] written as Σ_c n_cᵀ L(n) n_c over the three
/// coordinate channels.
pub fn rglr_matrix_form(normals: &[Vector3], graph: &Graph, sigma_p: f64, positions: &[Point3]) -> f64 {
    let g = graph.reweighted(|i, j| edge_weight(&positions[i], &positions[j], &normals[i], &normals[j], sigma_p));
    let mut y = vec![Vector3::zeros(); normals.len()];
    g.laplacian_mul3(normals, &mut y);
    normals.iter().zip(&y).map(|(n, ln)| n.dot(ln)).sum()
}

/// Regularizer value of a single edge with unit distance term as a function
/// of d = ‖n_i − n_j‖² ∈ [0, 2].
pub fn rglr_pair(d: f64) -> f64 {
    (2.0 - d).powi(2) / 4.0 * d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub rho_max: f64,
    pub lambda_max_bound: f64,
}

/// Gershgorin bound on the largest Laplacian eigenvalue.
pub fn spectral_bounds(graph: &Graph) -> SpectralBounds {
    let rho_max = graph.rho_max();
    SpectralBounds {
        rho_max,
        lambda_max_bound: 2.0 * rho_max,
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite operator by power
/// iteration, stopping when the eigen-residual ‖Ax − λx‖ falls below `tol · λ`.
pub fn power_iteration(n: usize, apply: impl Fn(&[f64], &mut [f64]), tol: f64, max_iters: usize, seed: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut rng = rng_from_seed(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    normalize(&mut x);
    for _ in 0..max_iters {
        apply(&x, &mut y);
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let residual = x.iter().zip(&y).map(|(a, b)| (b - lambda * a).powi(2)).sum::<f64>().sqrt();
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / norm);
        let done = residual <= tol * lambda.abs();
        if done {
            break;
        }
    }
    lambda
}

/// Largest eigenvalue of a symmetric operator from the Lanczos process with
/// full reorthogonalization, started from a seeded random vector. Stops when
/// the top Ritz value changes by less than `tol` relative between checks, or
/// when the Krylov space becomes invariant.
pub fn lanczos_lambda_max(n: usize, apply: impl Fn(&[f64], &mut [f64]), tol: f64, max_steps: usize, seed: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut rng = rng_from_seed(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut ritz = f64::NEG_INFINITY;
    let steps = max_steps.min(n).max(1);
    for j in 0..steps {
        apply(&v, &mut w);
        let alpha: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        basis.push(std::mem::take(&mut v));
        alphas.push(alpha);
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(y, x)| *y -= c * x);
            }
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let invariant = beta <= 1e-12 * scale.max(f64::MIN_POSITIVE);
        if j % 5 == 4 || invariant || j + 1 == steps {
            let k = alphas.len();
            let t = DMatrix::from_fn(k, k, |r, c| {
                if r == c {
                    alphas[r]
                } else if r + 1 == c {
                    betas[r]
                } else if c + 1 == r {
                    betas[c]
                } else {
                    0.0
                }
            });
            let top = nalgebra::SymmetricEigen::new(t).eigenvalues.max();
            let done = (top - ritz).abs() <= tol * top.abs();
            ritz = top;
            if done || invariant {
                break;
            }
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }
    ritz.max(0.0)
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}
