//! Point-cloud container, ASCII file I/O, bounding-box rescaling and
//! synthetic noise injection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Point3, Vector3};

/// Default diagonal of the bounding box every cloud is rescaled to before
/// denoising. Noise levels and weight parameters are expressed in these units.
pub const DEFAULT_TARGET_DIAGONAL: f64 = 100.0;

const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub fn other(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }

    pub fn tag(self) -> char {
        match self {
            Color::Red => 'R',
            Color::Blue => 'B',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3>>,
    labels: Option<Vec<Color>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            normals: None,
            labels: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vector3>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| !((n.norm() - 1.0).abs() <= UNIT_NORM_TOL))
        {
            return Err(Error::InvalidInput(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Color>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[Color]> {
        self.labels.as_deref()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn diagonal(&self) -> f64 {
        self.bounding_box().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }

    /// Copy with the same normals/labels and new positions.
    pub(crate) fn with_points(&self, points: Vec<Point3>) -> PointCloud {
        debug_assert_eq!(points.len(), self.points.len());
        PointCloud {
            points,
            normals: self.normals.clone(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Xyz,
    PlyAscii,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ref e) if e == "xyz" || e == "txt" => Ok(Format::Xyz),
            Some(ref e) if e == "ply" => Ok(Format::PlyAscii),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer format from {}",
                path.display()
            ))),
        }
    }
}

pub fn load(path: impl AsRef<Path>, format: Format) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Xyz => parse_xyz(&text),
        Format::PlyAscii => parse_ply(&text),
    }
}

pub fn save(cloud: &PointCloud, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        Format::Xyz => format_xyz(cloud),
        Format::PlyAscii => format_ply(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_numbers(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {tok:?}"),
            })
        })
        .collect()
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals: Option<bool> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = parse_numbers(line, lineno)?;
        let has_n = match vals.len() {
            3 => false,
            6 => true,
            n => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 3 or 6 values, found {n}"),
                })
            }
        };
        if *with_normals.get_or_insert(has_n) != has_n {
            return Err(Error::Parse {
                line: lineno,
                message: "inconsistent column count".into(),
            });
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if has_n {
            normals.push(Vector3::new(vals[3], vals[4], vals[5]));
        }
    }
    finish(points, with_normals.unwrap_or(false).then_some(normals))
}

fn finish(points: Vec<Point3>, normals: Option<Vec<Vector3>>) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cloud = PointCloud::new(points)?;
    match normals {
        Some(n) => cloud.with_normals(n),
        None => Ok(cloud),
    }
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing 'ply' magic".into(),
            })
        }
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_done = false;
    for (idx, raw) in lines.by_ref() {
        let lineno = idx + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("format") => match toks.next() {
                Some("ascii") => {}
                Some(other) => {
                    return Err(Error::UnsupportedFormat(format!(
                        "PLY format {other} (only ascii is supported)"
                    )))
                }
                None => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "empty format line".into(),
                    })
                }
            },
            Some("element") => {
                let name = toks.next().unwrap_or("");
                let count = toks.next().and_then(|c| c.parse::<usize>().ok());
                in_vertex = name == "vertex";
                if in_vertex {
                    vertex_count = Some(count.ok_or(Error::Parse {
                        line: lineno,
                        message: "bad vertex count".into(),
                    })?);
                } else if count.unwrap_or(0) > 0 {
                    return Err(Error::UnsupportedFormat(format!("PLY element {name:?}")));
                }
            }
            Some("property") if in_vertex => {
                let name = toks.last().unwrap_or("").to_string();
                props.push(name);
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "missing end_header".into(),
        });
    }
    let count = vertex_count.unwrap_or(0);
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::UnsupportedFormat("PLY vertex lacks x/y/z".into())),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    for (idx, raw) in lines {
        if points.len() == count {
            break;
        }
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let vals = parse_numbers(raw, lineno)?;
        if vals.len() != props.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} values, found {}", props.len(), vals.len()),
            });
        }
        points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
        if let Some((a, b, c)) = normal_cols {
            normals.push(Vector3::new(vals[a], vals[b], vals[c]));
        }
    }
    if points.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {count} vertices, found {}", points.len()),
        });
    }
    finish(points, normal_cols.map(|_| normals))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &cloud.normals {
            let _ = write!(out, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        out.push('\n');
    }
    out
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    out.push_str(&format_xyz(cloud));
    out
}

/// Uniformly scales `cloud` about its bounding-box center so the box diagonal
/// equals `target_diag`. Returns the new cloud and the applied scale factor.
pub fn rescale_to_diagonal(cloud: &PointCloud, target_diag: f64) -> Result<(PointCloud, f64)> {
    if !(target_diag.is_finite() && target_diag > 0.0) {
        return Err(Error::InvalidInput(format!("target diagonal {target_diag}")));
    }
    let (lo, hi) = cloud.bounding_box().ok_or(Error::EmptyCloud)?;
    let diag = (hi - lo).norm();
    if !(diag > 0.0) {
        return Err(Error::DegenerateCloud("all points coincide".into()));
    }
    let scale = target_diag / diag;
    if scale == 1.0 {
        return Ok((cloud.clone(), 1.0));
    }
    let center = (lo + hi) * 0.5;
    let points = cloud.points.iter().map(|p| center + (p - center) * scale).collect();
    Ok((cloud.with_points(points), scale))
}

/// Inverse of [`rescale_to_diagonal`] given the original cloud's box center.
pub(crate) fn unscale(points: &[Point3], center: Point3, scale: f64) -> Vec<Point3> {
    if scale == 1.0 {
        return points.to_vec();
    }
    points.iter().map(|p| center + (p - center) / scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian,
    Laplacian,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(NoiseKind::Gaussian),
            "laplacian" | "laplace" => Ok(NoiseKind::Laplacian),
            other => Err(Error::InvalidInput(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Per-coordinate standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_finite() && self.sigma >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("sigma must be finite and >= 0, got {}", self.sigma)))
        }
    }
}

/// Zero-mean Laplace sample with scale `b` by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    // u uniform on (-1/2, 1/2), never exactly at the ends
    let u: f64 = loop {
        let u = rng.random::<f64>() - 0.5;
        if u.abs() < 0.5 {
            break u;
        }
    };
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Seeded generator used for all randomness in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    if spec.sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng_from_seed(spec.seed);
    let points = match spec.kind {
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, spec.sigma).expect("sigma validated");
            cloud
                .points
                .iter()
                .map(|p| p + Vector3::from_fn(|_, _| dist.sample(&mut rng)))
                .collect()
        }
        NoiseKind::Laplacian => {
            let b = spec.sigma / std::f64::consts::SQRT_2;
            cloud
                .points
                .iter()
                .map(|p| p + Vector3::from_fn(|_, _| sample_laplace(&mut rng, b)))
                .collect()
        }
    };
    Ok(cloud.with_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord_stats(a: &PointCloud, b: &PointCloud) -> (f64, f64) {
        let diffs: Vec<f64> = a
            .points()
            .iter()
            .zip(b.points())
            .flat_map(|(p, q)| (q - p).iter().copied().collect::<Vec<_>>())
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let m4 = diffs.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n;
        (var.sqrt(), m4 / (var * var) - 3.0)
    }

    fn zeros(n: usize) -> PointCloud {
        PointCloud::new(vec![Point3::zeros(); n]).unwrap()
    }

    #[test]
    fn xyz_two_points() {
        let c = parse_xyz("0 0 0\n1 0 0").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1], Point3::new(1.0, 0.0, 0.0));
        assert!(c.normals().is_none());
    }

    #[test]
    fn xyz_malformed_row_reports_line() {
        match parse_xyz("0 0 0\n1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn xyz_empty_is_error() {
        assert!(matches!(parse_xyz("\n# nothing\n"), Err(Error::EmptyCloud)));
    }

    #[test]
    fn ply_three_vertices() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn ply_binary_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(parse_ply(text), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ply_roundtrip_keeps_normals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let c = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(1.0 / 3.0, -2.5e-7, 1e5),
        ])
        .unwrap()
        .with_normals(vec![Vector3::z(), Vector3::new(0.6, 0.8, 0.0)])
        .unwrap();
        save(&c, &path, Format::PlyAscii).unwrap();
        let back = load(&path, Format::PlyAscii).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn xyz_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(std::f64::consts::PI, -1e-300, 7.0),
            Point3::new(-0.0, 2.0, 1e15),
        ])
        .unwrap();
        save(&c, &path, Format::Xyz).unwrap();
        assert_eq!(load(&path, Format::Xyz).unwrap(), c);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let c = zeros(1);
        let r = save(&c, "/nonexistent-dir/x/y.xyz", Format::Xyz);
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn rescale_unit_cube() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let c = PointCloud::new(pts).unwrap();
        let (r, s) = rescale_to_diagonal(&c, 2.0 * 3f64.sqrt()).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        let (lo, hi) = r.bounding_box().unwrap();
        assert!(((hi - lo) - Vector3::repeat(2.0)).norm() < 1e-12);
        assert!(((lo + hi) * 0.5 - Point3::repeat(0.5)).norm() < 1e-12);
    }

    #[test]
    fn rescale_conforming_is_identity() {
        let c = PointCloud::new(vec![Point3::zeros(), Point3::new(100.0, 0.0, 0.0)]).unwrap();
        let (r, s) = rescale_to_diagonal(&c, 100.0).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(r, c);
    }

    #[test]
    fn rescale_random_hits_target_and_is_idempotent() {
        let mut rng = rng_from_seed(5);
        let pts: Vec<Point3> = (0..100)
            .map(|_| Point3::new(rng.random::<f64>() * 3.0, rng.random(), rng.random::<f64>() - 7.0))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let (r, _) = rescale_to_diagonal(&c, 100.0).unwrap();
        assert!((r.diagonal() - 100.0).abs() <= 1e-9 * 100.0);
        let (r2, _) = rescale_to_diagonal(&r, 100.0).unwrap();
        for (a, b) in r.points().iter().zip(r2.points()) {
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn rescale_degenerate() {
        let c = PointCloud::new(vec![Point3::new(1.0, 1.0, 1.0); 4]).unwrap();
        assert!(matches!(rescale_to_diagonal(&c, 1.0), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = PointCloud::new(vec![Point3::new(0.3, 0.1, 0.2); 10]).unwrap();
        for kind in [NoiseKind::Gaussian, NoiseKind::Laplacian] {
            let n = add_noise(&c, &NoiseSpec { kind, sigma: 0.0, seed: 3 }).unwrap();
            assert_eq!(n, c);
        }
    }

    #[test]
    fn gaussian_sample_sd() {
        let c = zeros(100_000);
        let n = add_noise(&c, &NoiseSpec { kind: NoiseKind::Gaussian, sigma: 0.2, seed: 11 }).unwrap();
        let (sd, _) = coord_stats(&c, &n);
        assert!((0.195..=0.205).contains(&sd), "sd {sd}");
    }

    #[test]
    fn laplacian_sample_sd_and_kurtosis() {
        let c = zeros(100_000);
        let n = add_noise(&c, &NoiseSpec { kind: NoiseKind::Laplacian, sigma: 0.3, seed: 12 }).unwrap();
        let (sd, kurt) = coord_stats(&c, &n);
        assert!((0.29..=0.31).contains(&sd), "sd {sd}");
        assert!((kurt - 3.0).abs() <= 0.3, "excess kurtosis {kurt}");
    }

    #[test]
    fn laplace_sampler_variance_at_1e6() {
        let mut rng = rng_from_seed(99);
        let sigma = 0.7;
        let b = sigma / std::f64::consts::SQRT_2;
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_laplace(&mut rng, b)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let c = zeros(50);
        let spec = NoiseSpec { kind: NoiseKind::Laplacian, sigma: 0.5, seed: 1 };
        let a = add_noise(&c, &spec).unwrap();
        let b = add_noise(&c, &spec).unwrap();
        assert_eq!(a, b);
        let d = add_noise(&c, &NoiseSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn negative_sigma_rejected() {
        let c = zeros(1);
        let r = add_noise(&c, &NoiseSpec { kind: NoiseKind::Gaussian, sigma: -1.0, seed: 0 });
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
