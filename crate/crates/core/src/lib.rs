//! Point-cloud denoising with a reweighted graph Laplacian regularizer (RGLR)
//! on surface normals.
//!
//! The pipeline splits the cloud into red and blue nodes with a bipartite
//! graph approximation, models each node's normal as a linear function of its
//! own position given two neighbors of the other color, and alternately solves
//! for red and blue positions with an ℓ2 (CG or Lanczos) or ℓ1 (accelerated
//! proximal gradient) fidelity term.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bipartite;
pub mod calibrate;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod noise_est;
pub mod normals;
pub mod pipeline;
pub mod pointcloud;
pub mod solver_l1;
pub mod solver_l2;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use pointcloud::{Color, NoiseKind, NoiseSpec, PointCloud};

pub type Point3 = nalgebra::Vector3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type Matrix3 = nalgebra::Matrix3<f64>;
