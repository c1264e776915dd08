//! Point-to-point (C2C) and point-to-plane (C2P) errors between a ground
//! truth cloud and a denoised one, and the relative error of a noise estimate.
//!
//! Both metrics are directed means of squared distances; the smaller of the
//! two directions is reported.

use log::warn;
use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::spatial::KdTree;
use crate::{Matrix3, Point3, Vector3};

pub const DEFAULT_PLANE_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    GtToDen,
    DenToGt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub c2c: f64,
    pub c2p: f64,
    pub c2c_direction: Direction,
    pub c2p_direction: Direction,
    /// Points whose tangent plane could not be fitted and fell back to C2C.
    pub degenerate_planes: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }
}

fn pick(a: f64, b: f64) -> (f64, Direction) {
    if a <= b {
        (a, Direction::GtToDen)
    } else {
        (b, Direction::DenToGt)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean squared distance from each point of `from` to its nearest point in `to`.
pub fn directed_c2c(from: &[Point3], to: &[Point3]) -> f64 {
    let tree = KdTree::new(to);
    let d: Vec<f64> = from.par_iter().map(|p| tree.nearest(p, 1, None)[0].1).collect();
    mean(&d)
}

pub fn c2c(gt: &PointCloud, den: &PointCloud) -> f64 {
    c2c_with_direction(gt, den).0
}

pub fn c2c_with_direction(gt: &PointCloud, den: &PointCloud) -> (f64, Direction) {
    pick(
        directed_c2c(gt.points(), den.points()),
        directed_c2c(den.points(), gt.points()),
    )
}

/// Least-squares plane through `pts` as (centroid, unit normal). `None` when
/// the points are (nearly) collinear.
pub fn fit_plane(pts: &[Point3]) -> Option<(Point3, Vector3)> {
    let c = pts.iter().sum::<Point3>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix3::zeros(), |m, p| {
        let d = p - c;
        m + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if top <= 0.0 || mid <= 1e-12 * top {
        return None;
    }
    Some((c, eig.eigenvectors.column(order[0]).into_owned()))
}

/// Tangent plane at every point from the point and its `plane_k` nearest neighbors.
pub fn tangent_planes(points: &[Point3], plane_k: usize) -> Vec<Option<(Point3, Vector3)>> {
    let tree = KdTree::new(points);
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nb: Vec<Point3> = tree.nearest(p, plane_k, Some(i)).into_iter().map(|(j, _)| points[j]).collect();
            nb.push(*p);
            fit_plane(&nb)
        })
        .collect()
}

/// Mean squared distance from each point of `from` to the tangent plane at its
/// nearest point in `to`. Returns the mean and the number of fallbacks.
pub fn directed_c2p(from: &[Point3], to: &[Point3], plane_k: usize) -> (f64, usize) {
    let tree = KdTree::new(to);
    let planes = tangent_planes(to, plane_k);
    let d: Vec<(f64, bool)> = from
        .par_iter()
        .map(|p| {
            let (j, d2) = tree.nearest(p, 1, None)[0];
            match planes[j] {
                Some((c, n)) => ((p - c).dot(&n).powi(2), false),
                None => (d2, true),
            }
        })
        .collect();
    let fallbacks = d.iter().filter(|x| x.1).count();
    let dist: Vec<f64> = d.into_iter().map(|x| x.0).collect();
    (mean(&dist), fallbacks)
}

fn check(gt: &PointCloud, den: &PointCloud, plane_k: usize) -> Result<()> {
    if plane_k < 2 {
        return Err(Error::InvalidInput(format!("plane_k must be >= 2, got {plane_k}")));
    }
    for c in [gt, den] {
        if c.len() < plane_k + 1 {
            return Err(Error::TooFewPoints {
                needed: plane_k + 1,
                got: c.len(),
            });
        }
    }
    Ok(())
}

pub fn c2p(gt: &PointCloud, den: &PointCloud, plane_k: usize) -> Result<f64> {
    Ok(evaluate(gt, den, plane_k)?.c2p)
}

pub fn evaluate(gt: &PointCloud, den: &PointCloud, plane_k: usize) -> Result<MetricReport> {
    check(gt, den, plane_k)?;
    let (c2c, c2c_direction) = c2c_with_direction(gt, den);
    let (a, fa) = directed_c2p(gt.points(), den.points(), plane_k);
    let (b, fb) = directed_c2p(den.points(), gt.points(), plane_k);
    let (c2p, c2p_direction) = pick(a, b);
    let degenerate_planes = match c2p_direction {
        Direction::GtToDen => fa,
        Direction::DenToGt => fb,
    };
    if degenerate_planes > 0 {
        warn!("{degenerate_planes} collinear neighborhoods; used point distance instead of plane distance");
    }
    Ok(MetricReport {
        c2c,
        c2p,
        c2c_direction,
        c2p_direction,
        degenerate_planes,
    })
}

/// Relative error of a noise estimate in percent.
pub fn rel_error(sigma_true: f64, sigma_est: f64) -> Result<f64> {
    if !(sigma_true > 0.0) {
        return Err(Error::InvalidInput(format!("sigma_true must be > 0, got {sigma_true}")));
    }
    Ok((sigma_true - sigma_est).abs() / sigma_true * 100.0)
}
