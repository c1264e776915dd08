//! Python bindings for the `rglr` point-cloud denoiser.
//!
//! Points cross the boundary as lists of `(x, y, z)` tuples. Reports are
//! returned as JSON strings.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rglr::bipartite::{approximate, GmrfConfig};
use rglr::graph::{knn_graph_points, mean_knn_distance, WeightParams};
use rglr::metrics::{self, DEFAULT_PLANE_K};
use rglr::noise_est::{self, GammaModel, NoiseConfig, PatchConfig};
use rglr::pipeline::PipelineOptions;
use rglr::pointcloud::{self as pc, Format, NoiseKind, NoiseSpec};
use rglr::solver_l1::{denoise_l1_with, ApgConfig};
use rglr::solver_l2::{denoise_l2_with, Backend, L2Config};
use rglr::{Error, Point3};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Parse { .. }
        | Error::EmptyCloud
        | Error::DegenerateCloud(_)
        | Error::UnsupportedFormat(_)
        | Error::InvalidInput(_)
        | Error::TooFewPoints { .. }
        | Error::StepTooLarge { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn noise_kind(kind: &str) -> PyResult<NoiseKind> {
    kind.parse().map_err(to_py)
}

#[pyclass(name = "PointCloud", module = "rglr_py", from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: pc::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    fn new(points: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let pts = points.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
        Ok(PyPointCloud { inner: pc::PointCloud::new(pts).map_err(to_py)? })
    }

    /// Reads `.xyz` or ASCII `.ply`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let format = Format::from_path(path.as_ref()).map_err(to_py)?;
        Ok(PyPointCloud { inner: pc::load(path, format).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let format = Format::from_path(path.as_ref()).map_err(to_py)?;
        pc::save(&self.inner, path, format).map_err(to_py)
    }

    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.inner.points().iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    fn diagonal(&self) -> f64 {
        self.inner.diagonal()
    }

    /// Copy uniformly scaled about its bounding-box center to the given
    /// diagonal, with the scale factor.
    fn rescaled(&self, target_diag: f64) -> PyResult<(PyPointCloud, f64)> {
        let (inner, scale) = pc::rescale_to_diagonal(&self.inner, target_diag).map_err(to_py)?;
        Ok((PyPointCloud { inner }, scale))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(len={}, diagonal={:.4})", self.inner.len(), self.inner.diagonal())
    }
}

/// Adds i.i.d. Gaussian or Laplacian noise with standard deviation `sigma`
/// to every coordinate.
#[pyfunction]
#[pyo3(signature = (cloud, kind, sigma, seed = 0))]
fn add_noise(cloud: &PyPointCloud, kind: &str, sigma: f64, seed: u64) -> PyResult<PyPointCloud> {
    let spec = NoiseSpec { kind: noise_kind(kind)?, sigma, seed };
    Ok(PyPointCloud { inner: pc::add_noise(&cloud.inner, &spec).map_err(to_py)? })
}

/// Denoises `cloud` and returns the result with the run report as JSON.
/// `fidelity` is "l2" (Gaussian noise) or "l1" (Laplacian noise); `backend`
/// selects CG or a Lanczos approximation of order `lanczos_m` for l2.
#[pyfunction]
#[pyo3(signature = (
    cloud, gamma, fidelity = "l2", k = 6, sigma_p = None, outer_iters = 3, reweight_iters = 5,
    backend = "cg", lanczos_m = 30, apg_iters = 200, target_diag = Some(100.0)
))]
#[allow(clippy::too_many_arguments)]
fn denoise(
    py: Python<'_>,
    cloud: &PyPointCloud,
    gamma: f64,
    fidelity: &str,
    k: usize,
    sigma_p: Option<f64>,
    outer_iters: usize,
    reweight_iters: usize,
    backend: &str,
    lanczos_m: usize,
    apg_iters: usize,
    target_diag: Option<f64>,
) -> PyResult<(PyPointCloud, String)> {
    let opts = PipelineOptions { k, sigma_p, target_diag, ..Default::default() };
    let input = cloud.inner.clone();
    let (out, report) = match fidelity.to_ascii_lowercase().as_str() {
        "l2" => {
            let backend = match backend {
                "cg" => Backend::Cg,
                "lanczos" => Backend::Lanczos(lanczos_m),
                other => return Err(PyValueError::new_err(format!("unknown backend {other:?} (expected cg or lanczos)"))),
            };
            let cfg = L2Config { gamma, outer_iters, reweight_iters, backend, ..Default::default() };
            py.detach(|| denoise_l2_with(&input, &cfg, &opts)).map_err(to_py)?
        }
        "l1" => {
            let cfg = ApgConfig { gamma, outer_iters, reweight_iters, apg_iters, ..Default::default() };
            py.detach(|| denoise_l1_with(&input, &cfg, &opts)).map_err(to_py)?
        }
        other => return Err(PyValueError::new_err(format!("unknown fidelity {other:?} (expected l2 or l1)"))),
    };
    Ok((PyPointCloud { inner: out }, report.to_json()))
}

/// Estimates the noise level from flat patches. Returns a dict with
/// `sigma`, `sigma2`, `sigma2_scaled` and `patches`.
#[pyfunction]
#[pyo3(signature = (cloud, kind, k = 6, normal_bandwidth = noise_est::DEFAULT_NORMAL_BANDWIDTH, min_patch_size = noise_est::DEFAULT_MIN_PATCH_SIZE))]
fn estimate_noise(
    py: Python<'_>,
    cloud: &PyPointCloud,
    kind: &str,
    k: usize,
    normal_bandwidth: f64,
    min_patch_size: usize,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let kind = noise_kind(kind)?;
    let config = NoiseConfig {
        k,
        patches: PatchConfig { normal_bandwidth, min_patch_size, k, ..Default::default() },
        ..Default::default()
    };
    let input = cloud.inner.clone();
    let est = py.detach(|| noise_est::estimate_noise(&input, kind, &config)).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("sigma", est.sigma())?;
    d.set_item("sigma2", est.sigma2)?;
    d.set_item("sigma2_scaled", est.sigma2_scaled())?;
    d.set_item("patches", est.patches_used)?;
    Ok(d.unbind())
}

/// γ = slope · σ², clamped to the model's range.
#[pyfunction]
#[pyo3(signature = (sigma2, slope, ceiling = noise_est::GAMMA_CEIL))]
fn gamma_opt(sigma2: f64, slope: f64, ceiling: f64) -> PyResult<f64> {
    let model = GammaModel::with_ceiling(slope, ceiling).map_err(to_py)?;
    Ok(noise_est::gamma_opt(sigma2, &model))
}

/// Symmetric point-to-point error.
#[pyfunction]
fn c2c(gt: &PyPointCloud, den: &PyPointCloud) -> f64 {
    metrics::c2c(&gt.inner, &den.inner)
}

/// Symmetric point-to-plane error with tangent planes from `plane_k` neighbors.
#[pyfunction]
#[pyo3(signature = (gt, den, plane_k = DEFAULT_PLANE_K))]
fn c2p(gt: &PyPointCloud, den: &PyPointCloud, plane_k: usize) -> PyResult<f64> {
    metrics::c2p(&gt.inner, &den.inner, plane_k).map_err(to_py)
}

/// Red/blue labels ("R"/"B") from the bipartite approximation of the k-NN graph.
#[pyfunction]
#[pyo3(signature = (cloud, k = 6))]
fn partition(cloud: &PyPointCloud, k: usize) -> PyResult<Vec<String>> {
    let pts = cloud.inner.points();
    let params = WeightParams::new(mean_knn_distance(pts, k), k);
    let graph = knn_graph_points(pts, None, &params).map_err(to_py)?;
    let part = approximate(&graph, &GmrfConfig::default()).map_err(to_py)?;
    Ok(part.labels().iter().map(|c| c.tag().to_string()).collect())
}

#[pymodule]
fn rglr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_noise, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_opt, m)?)?;
    m.add_function(wrap_pyfunction!(c2c, m)?)?;
    m.add_function(wrap_pyfunction!(c2p, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    Ok(())
}
