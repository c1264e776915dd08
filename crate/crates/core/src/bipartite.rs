//! Greedy bipartite approximation of a graph.
//!
//! Nodes are visited in breadth-first order and each is placed in the set
//! (red or blue) whose resulting bipartite graph is closer to the original in
//! the KL divergence between the zero-mean Gaussian Markov random fields with
//! precision matrices `L + δI`. Edges inside a set are dropped.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::pointcloud::{rng_from_seed, Color};

const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartNode {
    Random(u64),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmrfConfig {
    /// Precision added to the Laplacian; 1/δ is the variance of the DC component.
    pub delta: f64,
    pub start_node: StartNode,
    /// Largest number of already placed nodes (within two hops of the
    /// candidate) used to evaluate the divergence. `None` uses every placed
    /// node of the component, which is exact but cubic in its size.
    pub window: Option<usize>,
}

impl Default for GmrfConfig {
    fn default() -> Self {
        GmrfConfig {
            delta: 1e-2,
            start_node: StartNode::Fixed(0),
            window: Some(48),
        }
    }
}

impl GmrfConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {}", self.delta)));
        }
        if let StartNode::Fixed(s) = self.start_node {
            if s >= n && n > 0 {
                return Err(Error::InvalidInput(format!("start node {s} out of range for {n} nodes")));
            }
        }
        if self.window == Some(0) {
            return Err(Error::InvalidInput("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartitePartition {
    labels: Vec<Color>,
    kept: Graph,
}

impl BipartitePartition {
    /// Partition of `graph` induced by `labels`; only cross-set edges are kept.
    pub fn from_labels(graph: &Graph, labels: Vec<Color>) -> Result<Self> {
        if labels.len() != graph.n() {
            return Err(Error::InvalidInput(format!(
                "{} labels for a graph with {} nodes",
                labels.len(),
                graph.n()
            )));
        }
        let kept = graph.filter_edges(|i, j| labels[i] != labels[j]);
        Ok(BipartitePartition { labels, kept })
    }

    pub fn labels(&self) -> &[Color] {
        &self.labels
    }

    pub fn color(&self, i: usize) -> Color {
        self.labels[i]
    }

    pub fn indices(&self, color: Color) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == color).collect()
    }

    pub fn red(&self) -> Vec<usize> {
        self.indices(Color::Red)
    }

    pub fn blue(&self) -> Vec<usize> {
        self.indices(Color::Blue)
    }

    /// Graph holding only the cross-set edges.
    pub fn kept_edges(&self) -> &Graph {
        &self.kept
    }

    pub fn is_bipartite(&self) -> bool {
        self.kept.edges().iter().all(|&(i, j, _)| self.labels[i] != self.labels[j])
    }

    /// Text lines `index R|B`.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity(self.labels.len() * 8);
        for (i, c) in self.labels.iter().enumerate() {
            s.push_str(&format!("{i} {}\n", c.tag()));
        }
        s
    }
}

/// KL divergence from N(0, (L+δI)⁻¹) to N(0, (L_b+δI)⁻¹):
/// ½(tr(P_b P⁻¹) + ln det P − ln det P_b − N).
pub fn kld(l_b: &DMatrix<f64>, l: &DMatrix<f64>, delta: f64) -> Result<f64> {
    let n = l.nrows();
    if l.shape() != l_b.shape() || l.ncols() != n {
        return Err(Error::InvalidInput("Laplacians must be square and of equal size".into()));
    }
    let shift = DMatrix::<f64>::identity(n, n) * delta;
    let p = Cholesky::new(l + &shift).ok_or(Error::SingularPrecision)?;
    let pb_mat = l_b + &shift;
    let pb = Cholesky::new(pb_mat.clone()).ok_or(Error::SingularPrecision)?;
    let cov = p.inverse();
    let trace = pb_mat.component_mul(&cov).sum();
    Ok(0.5 * (trace + log_det(&p) - log_det(&pb) - n as f64))
}

fn log_det(c: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Runs the greedy approximation on every connected component.
pub fn approximate(graph: &Graph, config: &GmrfConfig) -> Result<BipartitePartition> {
    let n = graph.n();
    config.validate(n)?;
    let mut labels: Vec<Option<Color>> = vec![None; n];
    let mut rng = match config.start_node {
        StartNode::Random(seed) => Some(rng_from_seed(seed)),
        StartNode::Fixed(_) => None,
    };
    let mut hop = vec![usize::MAX; n];
    for comp in graph.components() {
        let root = match (config.start_node, rng.as_mut()) {
            (StartNode::Fixed(s), _) if comp.binary_search(&s).is_ok() => s,
            (StartNode::Random(_), Some(r)) => comp[r.random_range(0..comp.len())],
            _ => comp[0],
        };
        greedy_component(graph, root, config, &mut labels, &mut hop)?;
    }
    let labels = labels.into_iter().map(|c| c.expect("every node visited")).collect();
    BipartitePartition::from_labels(graph, labels)
}

fn greedy_component(
    graph: &Graph,
    root: usize,
    config: &GmrfConfig,
    labels: &mut [Option<Color>],
    hop: &mut [usize],
) -> Result<()> {
    // tie alternation starts as if the previous tie went to blue, so the
    // first tie (always the root) is red
    let mut last_tie = Color::Blue;
    let mut placed_in_comp: Vec<usize> = Vec::new();
    let mut queued = vec![false; graph.n()];
    let mut queue = VecDeque::from([root]);
    queued[root] = true;
    while let Some(v) = queue.pop_front() {
        let window = match config.window {
            Some(cap) => local_window(graph, v, labels, cap, hop),
            None => {
                let mut w = placed_in_comp.clone();
                w.push(v);
                w
            }
        };
        let d_red = window_kld(graph, &window, labels, v, Color::Red, config.delta)?;
        let d_blue = window_kld(graph, &window, labels, v, Color::Blue, config.delta)?;
        let color = if (d_blue - d_red).abs() <= TIE_TOL {
            last_tie = last_tie.other();
            last_tie
        } else if d_blue > d_red {
            Color::Red
        } else {
            Color::Blue
        };
        labels[v] = Some(color);
        placed_in_comp.push(v);
        for &(u, _) in graph.neighbors(v) {
            if !queued[u] {
                queued[u] = true;
                queue.push_back(u);
            }
        }
    }
    Ok(())
}

/// Candidate `v` (last) preceded by placed nodes within two hops, nearest
/// hops first, ties by index, at most `cap` of them.
fn local_window(graph: &Graph, v: usize, labels: &[Option<Color>], cap: usize, hop: &mut [usize]) -> Vec<usize> {
    let mut touched = vec![v];
    hop[v] = 0;
    let mut frontier = vec![v];
    for h in 1..=2 {
        let mut next = Vec::new();
        for &u in &frontier {
            for &(x, _) in graph.neighbors(u) {
                if hop[x] == usize::MAX {
                    hop[x] = h;
                    touched.push(x);
                    next.push(x);
                }
            }
        }
        frontier = next;
    }
    let mut placed: Vec<(usize, usize)> = touched
        .iter()
        .filter(|&&x| labels[x].is_some())
        .map(|&x| (hop[x], x))
        .collect();
    for &x in &touched {
        hop[x] = usize::MAX;
    }
    placed.sort_unstable();
    placed.truncate(cap);
    let mut w: Vec<usize> = placed.into_iter().map(|(_, x)| x).collect();
    w.push(v);
    w
}

/// Divergence of the window's induced subgraph against its bipartite
/// version when `v` takes `color`.
fn window_kld(graph: &Graph, window: &[usize], labels: &[Option<Color>], v: usize, color: Color, delta: f64) -> Result<f64> {
    let m = window.len();
    let local = |x: usize| window.iter().position(|&y| y == x);
    let label = |x: usize| if x == v { Some(color) } else { labels[x] };
    let mut p = DMatrix::<f64>::identity(m, m) * delta;
    let mut removed: Vec<(usize, usize, f64)> = Vec::new();
    for (a, &x) in window.iter().enumerate() {
        for &(y, w) in graph.neighbors(x) {
            if y <= x {
                continue;
            }
            let Some(b) = local(y) else { continue };
            p[(a, a)] += w;
            p[(b, b)] += w;
            p[(a, b)] -= w;
            p[(b, a)] -= w;
            if label(x) == label(y) {
                removed.push((a, b, w));
            }
        }
    }
    if removed.is_empty() {
        return Ok(0.0);
    }
    let mut pb = p.clone();
    for &(a, b, w) in &removed {
        pb[(a, a)] -= w;
        pb[(b, b)] -= w;
        pb[(a, b)] += w;
        pb[(b, a)] += w;
    }
    let chol = Cholesky::new(p).ok_or(Error::SingularPrecision)?;
    let chol_b = Cholesky::new(pb).ok_or(Error::SingularPrecision)?;
    let cov = chol.inverse();
    // tr(P_b P⁻¹) = m − tr(ΔL P⁻¹) with ΔL the Laplacian of the removed edges
    let tr_delta: f64 = removed
        .iter()
        .map(|&(a, b, w)| w * (cov[(a, a)] + cov[(b, b)] - 2.0 * cov[(a, b)]))
        .sum();
    Ok(0.5 * (log_det(&chol) - log_det(&chol_b) - tr_delta))
}
