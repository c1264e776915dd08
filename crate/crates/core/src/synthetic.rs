//! Synthetic surfaces with known geometry, sampled at roughly uniform density.
//!
//! Used for tests, calibration of the γ model and as a stand-in for scanned
//! models. All samplers are deterministic given their seed.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::rng_from_seed;
use crate::Point3;

const JITTER: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Plane,
    Sphere,
    Cube,
    Fandisk,
    Wave,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Plane, Shape::Sphere, Shape::Cube, Shape::Fandisk, Shape::Wave];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Plane => "plane",
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Fandisk => "fandisk",
            Shape::Wave => "wave",
        }
    }

    /// About `n` points on the surface.
    pub fn sample(self, n: usize, seed: u64) -> Vec<Point3> {
        match self {
            Shape::Plane => plane(n, 100.0, seed),
            Shape::Sphere => fibonacci_sphere(n, 50.0),
            Shape::Cube => cube_surface(n, 60.0, seed),
            Shape::Fandisk => fandisk_like(n, seed),
            Shape::Wave => wave_surface(n, 100.0, 8.0, seed),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Shape> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown shape {s:?}")))
    }
}

/// Jittered grid over `[0, a] × [0, b]` with cell size about `h`, mapped through `f`.
fn grid(a: f64, b: f64, h: f64, rng: &mut impl Rng, mut f: impl FnMut(f64, f64) -> Option<Point3>) -> Vec<Point3> {
    let cols = ((a / h).round() as usize).max(1);
    let rows = ((b / h).round() as usize).max(1);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let ju = (rng.random::<f64>() - 0.5) * 2.0 * JITTER;
            let jv = (rng.random::<f64>() - 0.5) * 2.0 * JITTER;
            let u = (c as f64 + 0.5 + ju) / cols as f64 * a;
            let v = (r as f64 + 0.5 + jv) / rows as f64 * b;
            if let Some(p) = f(u, v) {
                out.push(p);
            }
        }
    }
    out
}

/// Square `[0, size]²` in the plane z = 0.
pub fn plane(n: usize, size: f64, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    let h = size / (n as f64).sqrt();
    grid(size, size, h, &mut rng, |u, v| Some(Point3::new(u, v, 0.0)))
}

/// Fibonacci spiral on a sphere centered at the origin.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Point3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Point3::new(r * t.cos(), r * t.sin(), z) * radius
        })
        .collect()
}

/// Surface of the axis-aligned cube `[0, side]³`.
pub fn cube_surface(n: usize, side: f64, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    let h = side / (n as f64 / 6.0).sqrt();
    let mut out = Vec::new();
    for axis in 0..3 {
        for &level in &[0.0, side] {
            out.extend(grid(side, side, h, &mut rng, |u, v| {
                let mut p = Point3::zeros();
                p[axis] = level;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                Some(p)
            }));
        }
    }
    out
}

const FAN_LEN: f64 = 60.0;
const FAN_DEPTH: f64 = 30.0;

/// Height of the top profile of [`fandisk_like`]: a plateau, a slanted
/// face, a smooth bump and a lower plateau, with creases between them.
pub fn fandisk_profile(x: f64) -> f64 {
    if x < 15.0 {
        20.0
    } else if x < 25.0 {
        20.0 - 0.8 * (x - 15.0)
    } else if x < 45.0 {
        12.0 + 6.0 * (PI * (x - 25.0) / 20.0).sin()
    } else {
        12.0
    }
}

/// Closed prism whose top is [`fandisk_profile`] extruded along y: flat
/// faces, sharp creases and a curved region.
pub fn fandisk_like(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    // arc-length table of the top profile
    let steps = 6000;
    let xs: Vec<f64> = (0..=steps).map(|i| FAN_LEN * i as f64 / steps as f64).collect();
    let mut arc = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        arc[i] = arc[i - 1] + (xs[i] - xs[i - 1]).hypot(fandisk_profile(xs[i]) - fandisk_profile(xs[i - 1]));
    }
    let top_len = arc[steps];
    let wall_area: f64 = xs.windows(2).map(|w| (w[1] - w[0]) * fandisk_profile(0.5 * (w[0] + w[1]))).sum();
    let area = top_len * FAN_DEPTH
        + 2.0 * wall_area
        + FAN_DEPTH * (fandisk_profile(0.0) + fandisk_profile(FAN_LEN))
        + FAN_LEN * FAN_DEPTH;
    let h = (area / n as f64).sqrt();
    let x_at = |s: f64| {
        let idx = arc.partition_point(|&a| a < s).clamp(1, steps);
        let t = (s - arc[idx - 1]) / (arc[idx] - arc[idx - 1]);
        xs[idx - 1] + t * (xs[idx] - xs[idx - 1])
    };
    let mut out = grid(top_len, FAN_DEPTH, h, &mut rng, |s, y| {
        let x = x_at(s);
        Some(Point3::new(x, y, fandisk_profile(x)))
    });
    for &y in &[0.0, FAN_DEPTH] {
        out.extend(grid(FAN_LEN, 20.0, h, &mut rng, |x, z| {
            (z < fandisk_profile(x)).then(|| Point3::new(x, y, z))
        }));
    }
    for &x in &[0.0, FAN_LEN] {
        out.extend(grid(FAN_DEPTH, fandisk_profile(x), h, &mut rng, |y, z| Some(Point3::new(x, y, z))));
    }
    out.extend(grid(FAN_LEN, FAN_DEPTH, h, &mut rng, |x, y| Some(Point3::new(x, y, 0.0))));
    out
}

/// Height field z = amplitude · sin(2πx/λ) · sin(2πy/λ) over `[0, size]²`
/// with λ = size / 2.
pub fn wave_surface(n: usize, size: f64, amplitude: f64, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    let h = size / (n as f64).sqrt();
    let k = 4.0 * PI / size;
    grid(size, size, h, &mut rng, |x, y| Some(Point3::new(x, y, amplitude * (k * x).sin() * (k * y).sin())))
}
