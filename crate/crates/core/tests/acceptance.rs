//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured values and runtime; the process exits non-zero if any fails.
//!
//! Run a subset with `cargo test --release --test acceptance -- 3 7`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Rotation3, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rglr::bipartite::{approximate, GmrfConfig, StartNode};
use rglr::calibrate::{calibrate, CalibrationConfig};
use rglr::graph::{knn_graph_points, mean_knn_distance, power_iteration, rglr, spectral_bounds, Graph, WeightParams};
use rglr::metrics::{c2c, c2p, rel_error, DEFAULT_PLANE_K};
use rglr::noise_est::{estimate_noise, skew_eigen, NoiseConfig};
use rglr::normals::NormalModel;
use rglr::pipeline::{color_operators, prepare, run_l1, run_l2, PipelineOptions, Prepared};
use rglr::pointcloud::{add_noise, rescale_to_diagonal, rng_from_seed, NoiseKind, NoiseSpec};
use rglr::solver_l1::{apg_solve, objective_l1, prox_l1, ApgConfig};
use rglr::solver_l2::{cg, solve_inner_cg, solve_inner_lanczos, L2Config, SystemOperators};
use rglr::synthetic::{fandisk_like, Shape};
use rglr::{Color, Point3, PointCloud, Vector3};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "rotation invariance", limit: Some(Duration::from_secs(10)), run: rotation_invariance },
    Criterion { id: 2, name: "gershgorin certification", limit: minutes(1), run: gershgorin },
    Criterion { id: 3, name: "solver exactness", limit: minutes(1), run: solver_exactness },
    Criterion { id: 4, name: "prox and gradient oracles", limit: None, run: prox_and_gradient },
    Criterion { id: 5, name: "apg convergence", limit: minutes(2), run: apg_convergence },
    Criterion { id: 6, name: "bipartiteness", limit: None, run: bipartiteness },
    Criterion { id: 7, name: "noise estimation", limit: minutes(2), run: noise_estimation },
    Criterion { id: 8, name: "denoising efficacy", limit: minutes(10), run: denoising_efficacy },
    Criterion { id: 9, name: "gamma-sigma linearity", limit: minutes(15), run: gamma_sigma_linearity },
    Criterion { id: 10, name: "estimator identities", limit: None, run: estimator_identities },
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let out = (c.run)();
        let secs = start.elapsed();
        let in_time = c.limit.is_none_or(|l| secs <= l);
        let pass = out.pass && in_time;
        let limit = c.limit.map_or(String::new(), |l| format!(" / limit {}s", l.as_secs()));
        println!(
            "criterion {:>2} {:<26} {}  {} [{:.1}s{}]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            secs.as_secs_f64(),
            limit
        );
        ran += 1;
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {} failed", ran - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3 {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::new(random_unit(rng) * rng.random_range(0.0..std::f64::consts::PI))
}

/// Noisy sample of a random test surface, rescaled to diagonal 100.
fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let shape = [Shape::Plane, Shape::Sphere, Shape::Wave, Shape::Cube][rng.random_range(0..4)];
    let clean = PointCloud::new(shape.sample(n, rng.random())).unwrap();
    let (clean, _) = rescale_to_diagonal(&clean, 100.0).unwrap();
    let spacing = mean_knn_distance(clean.points(), 6);
    let spec = NoiseSpec {
        kind: if rng.random_bool(0.5) { NoiseKind::Gaussian } else { NoiseKind::Laplacian },
        sigma: spacing * rng.random_range(0.05..0.3),
        seed: rng.random(),
    };
    add_noise(&clean, &spec).unwrap()
}

/// First-solve operators of a random cloud for a random color.
fn random_operators(n: usize, rng: &mut ChaCha8Rng) -> (Prepared, Vec<Vector3>, SystemOperators) {
    let cloud = random_cloud(n, rng);
    let opts = PipelineOptions::default();
    let prepared = prepare(&cloud, &opts).unwrap();
    let color = if rng.random_bool(0.5) { Color::Red } else { Color::Blue };
    let (idx, ops) = color_operators(&prepared, color, &opts).unwrap();
    let q = idx.iter().map(|&i| prepared.q[i]).collect();
    (prepared, q, ops)
}

/// γ spanning weak to strong smoothing relative to the squared point spacing.
fn random_gamma(prepared: &Prepared, rng: &mut ChaCha8Rng) -> f64 {
    prepared.sigma_p.powi(2) * 10f64.powf(rng.random_range(-2.0..1.0))
}

fn flat(v: &[Vector3]) -> DVector<f64> {
    DVector::from_iterator(3 * v.len(), v.iter().flat_map(|x| x.iter().copied()))
}

fn rel_diff(a: &[Vector3], b: &[Vector3]) -> f64 {
    (flat(a) - flat(b)).norm() / flat(b).norm()
}

fn rotation_invariance() -> Outcome {
    let mut rng = rng_from_seed(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
            .collect();
        let normals: Vec<Vector3> = (0..500).map(|_| random_unit(&mut rng)).collect();
        let sigma_p = mean_knn_distance(&pts, 6);
        let g = knn_graph_points(&pts, None, &WeightParams::new(sigma_p, 6)).unwrap();
        let base = rglr(&normals, &g, sigma_p, &pts);
        let r = random_rotation(&mut rng);
        let rp: Vec<Point3> = pts.iter().map(|p| r * p).collect();
        let rn: Vec<Vector3> = normals.iter().map(|n| r * n).collect();
        let rg = knn_graph_points(&rp, None, &WeightParams::new(sigma_p, 6)).unwrap();
        let rotated = rglr(&rn, &rg, sigma_p, &rp);
        worst = worst.max((rotated - base).abs() / base);
    }
    Outcome::new(worst <= 1e-9, format!("max rel diff {worst:.2e} (tol 1e-9)"))
}

fn gershgorin() -> Outcome {
    let mut rng = rng_from_seed(102);
    let mut worst_power = 0.0f64;
    let mut worst_cond = 0.0f64;
    let mut violations = 0;
    for t in 0..100 {
        let n = rng.random_range(60..=300);
        let (prepared, _, ops) = random_operators(n, &mut rng);
        // Laplacian of the full k-NN graph
        let pts = &prepared.q;
        let g = knn_graph_points(pts, None, &WeightParams::new(prepared.sigma_p, prepared.k)).unwrap();
        let lambda = power_iteration(g.n(), |x, y| g.laplacian_mul(x, y), 1e-10, 20_000, t);
        let bound = spectral_bounds(&g).lambda_max_bound;
        worst_power = worst_power.max(lambda / bound);
        violations += usize::from(lambda > bound);
        // true condition number of I + γL̃ against the certified bound
        let gamma = random_gamma(&prepared, &mut rng);
        let (lt, _) = ops.to_dense();
        let eig = SymmetricEigen::new(lt).eigenvalues;
        let (lo, hi) = (eig.min().max(0.0), eig.max());
        let cond = (1.0 + gamma * hi) / (1.0 + gamma * lo);
        let cbound = ops.cond_bound(gamma);
        worst_cond = worst_cond.max(cond / cbound);
        violations += usize::from(cond > cbound);
    }
    Outcome::new(
        violations == 0,
        format!("max λ/2ρ {worst_power:.3}, max cond/bound {worst_cond:.2e}, {violations} violations in 100 graphs"),
    )
}

fn solver_exactness() -> Outcome {
    let mut rng = rng_from_seed(103);
    let mut worst_dense = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(100..=300);
        let (prepared, q, ops) = random_operators(n, &mut rng);
        let gamma = random_gamma(&prepared, &mut rng);
        let (lt, lbar) = ops.to_dense();
        let m = DMatrix::<f64>::identity(lt.nrows(), lt.nrows()) + lt * gamma;
        let exact = m.cholesky().unwrap().solve(&(flat(&q) - lbar * gamma));
        let rhs = ops.rhs(gamma, &q);
        let r = cg(&ops, gamma, &rhs, Some(&q), 1e-13, 10_000);
        worst_dense = worst_dense.max((flat(&r.x) - &exact).norm() / exact.norm());
    }
    // Lanczos of order 30 against CG with 1000 nodes in the active color
    let mut worst_lanczos = 0.0f64;
    for seed in 0..3 {
        let clean = rescale_to_diagonal(&PointCloud::new(Shape::Wave.sample(2000, seed)).unwrap(), 100.0).unwrap().0;
        let noisy = add_noise(&clean, &NoiseSpec { kind: NoiseKind::Gaussian, sigma: 0.2, seed }).unwrap();
        let opts = PipelineOptions::default();
        let prepared = prepare(&noisy, &opts).unwrap();
        let (idx, ops) = color_operators(&prepared, Color::Red, &opts).unwrap();
        let q: Vec<Vector3> = idx.iter().map(|&i| prepared.q[i]).collect();
        let gamma = 2.0;
        let rhs = ops.rhs(gamma, &q);
        let l = solve_inner_lanczos(&ops, &rhs, gamma, 30).unwrap();
        let c = solve_inner_cg(&ops, &q, gamma, 1e-12);
        worst_lanczos = worst_lanczos.max(rel_diff(&l.x, &c.x));
    }
    Outcome::new(
        worst_dense <= 1e-8 && worst_lanczos <= 1e-3,
        format!("CG vs dense {worst_dense:.2e} (tol 1e-8), Lanczos(30) vs CG {worst_lanczos:.2e} (tol 1e-3)"),
    )
}

fn prox_and_gradient() -> Outcome {
    let mut rng = rng_from_seed(104);
    // prox against a 1-D grid search at resolution 1e-4
    let res = 1e-4;
    let mut worst_prox = 0.0f64;
    for _ in 0..1000 {
        let v = rng.random_range(-2.0..2.0);
        let q = rng.random_range(-2.0..2.0);
        let t = rng.random_range(0.01..2.0);
        let obj = |x: f64| (x - q).abs() + (x - v).powi(2) / (2.0 * t);
        let (lo, hi) = (v.min(q) - 0.01, v.max(q) + 0.01);
        let steps = ((hi - lo) / res).ceil() as usize;
        let grid = (0..=steps)
            .map(|s| lo + s as f64 * res)
            .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap();
        let x = prox_l1(&[Vector3::repeat(v)], &[Vector3::repeat(q)], t)[0][0];
        worst_prox = worst_prox.max((x - grid).abs());
    }
    // ∇(γ f) against central differences
    let mut worst_grad = 0.0f64;
    for _ in 0..5 {
        let n = rng.random_range(40..=100);
        let (prepared, q, ops) = random_operators(2 * n, &mut rng);
        let gamma = random_gamma(&prepared, &mut rng);
        let p: Vec<Vector3> = q.iter().map(|x| x + random_unit(&mut rng) * 0.1 * prepared.sigma_p).collect();
        let mut grad = vec![Vector3::zeros(); p.len()];
        ops.gradient(gamma, &p, &mut grad);
        let h = 1e-4 * prepared.sigma_p;
        let mut fd = vec![Vector3::zeros(); p.len()];
        for i in 0..p.len() {
            for c in 0..3 {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[i][c] += h;
                minus[i][c] -= h;
                fd[i][c] = gamma * (ops.regularizer(&plus) - ops.regularizer(&minus)) / (2.0 * h);
            }
        }
        worst_grad = worst_grad.max(rel_diff(&grad, &fd));
    }
    Outcome::new(
        worst_prox <= res && worst_grad <= 1e-5,
        format!("prox vs grid {worst_prox:.1e} (tol 1e-4), gradient vs FD {worst_grad:.2e} (tol 1e-5)"),
    )
}

fn apg_convergence() -> Outcome {
    let mut rng = rng_from_seed(105);
    let mut worst_gap = 0.0f64;
    let mut increases = 0;
    for seed in 0..10 {
        let shape = [Shape::Plane, Shape::Wave, Shape::Sphere][seed % 3];
        let clean = rescale_to_diagonal(&PointCloud::new(shape.sample(1000, seed as u64)).unwrap(), 100.0).unwrap().0;
        let spacing = mean_knn_distance(clean.points(), 6);
        let spec = NoiseSpec {
            kind: NoiseKind::Laplacian,
            sigma: spacing * rng.random_range(0.1..0.3),
            seed: seed as u64,
        };
        let noisy = add_noise(&clean, &spec).unwrap();
        let opts = PipelineOptions::default();
        let prepared = prepare(&noisy, &opts).unwrap();
        let (idx, ops) = color_operators(&prepared, Color::Red, &opts).unwrap();
        let q: Vec<Vector3> = idx.iter().map(|&i| prepared.q[i]).collect();
        let gamma = random_gamma(&prepared, &mut rng);
        let config = |iters| ApgConfig { gamma, apg_iters: iters, stop_tol: 0.0, ..Default::default() };
        let short = apg_solve(&ops, &q, &config(200)).unwrap();
        let long = apg_solve(&ops, &q, &config(2000)).unwrap();
        let f200 = objective_l1(&ops, gamma, &q, &short.p);
        let f2000 = objective_l1(&ops, gamma, &q, &long.p);
        worst_gap = worst_gap.max((f200 - f2000) / f2000);
        increases += usize::from(f200 > short.initial_objective());
    }
    Outcome::new(
        worst_gap <= 0.01 && increases == 0,
        format!("max (f200 − f2000)/f2000 {worst_gap:.2e} (tol 1e-2), {increases} final > initial"),
    )
}

fn bipartiteness() -> Outcome {
    let mut rng = rng_from_seed(106);
    let mut intra = 0;
    let mut uncovered = 0;
    let mut unstable = 0;
    for t in 0..100 {
        let n = rng.random_range(20..=400);
        let graph = if t % 2 == 0 {
            let pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..1.0)))
                .collect();
            let k = rng.random_range(3..=10);
            knn_graph_points(&pts, None, &WeightParams::new(mean_knn_distance(&pts, k), k)).unwrap()
        } else {
            let p = rng.random_range(2.0..8.0) / n as f64;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(p) {
                        edges.push((i, j, rng.random_range(0.1..1.0)));
                    }
                }
            }
            Graph::from_edges(n, edges).unwrap()
        };
        let config = GmrfConfig { start_node: StartNode::Fixed(rng.random_range(0..n)), ..Default::default() };
        let part = approximate(&graph, &config).unwrap();
        intra += part
            .kept_edges()
            .edges()
            .iter()
            .filter(|&&(i, j, _)| part.color(i) == part.color(j))
            .count();
        let mut seen = vec![false; n];
        part.red().into_iter().chain(part.blue()).for_each(|i| seen[i] = true);
        uncovered += usize::from(part.labels().len() != n || part.red().len() + part.blue().len() != n || seen.contains(&false));
        for _ in 0..2 {
            unstable += usize::from(approximate(&graph, &config).unwrap() != part);
        }
    }
    Outcome::new(
        intra == 0 && uncovered == 0 && unstable == 0,
        format!("{intra} intra-set edges, {uncovered} incomplete covers, {unstable} differing reruns"),
    )
}

fn noise_estimation() -> Outcome {
    let clean = rescale_to_diagonal(&PointCloud::new(Shape::Plane.sample(10_000, 7)).unwrap(), 100.0).unwrap().0;
    let cases = [
        (NoiseKind::Gaussian, 0.1),
        (NoiseKind::Gaussian, 0.2),
        (NoiseKind::Gaussian, 0.4),
        (NoiseKind::Laplacian, 0.1),
        (NoiseKind::Laplacian, 0.3),
        (NoiseKind::Laplacian, 0.5),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &(kind, sigma)) in cases.iter().enumerate() {
        let noisy = add_noise(&clean, &NoiseSpec { kind, sigma, seed: 70 + i as u64 }).unwrap();
        let tag = format!("{}{sigma}", if kind == NoiseKind::Gaussian { "G" } else { "L" });
        match estimate_noise(&noisy, kind, &NoiseConfig::default()) {
            Ok(est) => {
                let eps = rel_error(sigma, est.sigma()).unwrap();
                pass &= eps <= 25.0;
                parts.push(format!("{tag} ε={eps:.1}%"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{tag} error: {e}"));
            }
        }
    }
    Outcome::new(pass, format!("{} (tol 25%)", parts.join(", ")))
}

const FANDISK_POINTS: usize = 35_000;
const EFFICACY_GAMMAS: [f64; 4] = [0.3, 1.0, 3.0, 10.0];
const EFFICACY_OUTER: usize = 5;

/// Best (C2C, C2P) over the γ grid, choosing γ by C2P.
fn best_over_gammas(clean: &PointCloud, prepared: &Prepared, l1: bool) -> (f64, f64, f64) {
    let opts = PipelineOptions::default();
    EFFICACY_GAMMAS
        .iter()
        .map(|&gamma| {
            let out = if l1 {
                let config = ApgConfig { gamma, outer_iters: EFFICACY_OUTER, ..Default::default() };
                run_l1(prepared, &config, &opts).unwrap().0
            } else {
                let config = L2Config { gamma, outer_iters: EFFICACY_OUTER, ..Default::default() };
                run_l2(prepared, &config, &opts).unwrap().0
            };
            (gamma, c2c(clean, &out), c2p(clean, &out, DEFAULT_PLANE_K).unwrap())
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap()
}

fn denoising_efficacy() -> Outcome {
    let clean = rescale_to_diagonal(&PointCloud::new(fandisk_like(FANDISK_POINTS, 1)).unwrap(), 100.0).unwrap().0;
    let opts = PipelineOptions::default();

    let noisy = add_noise(&clean, &NoiseSpec { kind: NoiseKind::Gaussian, sigma: 0.2, seed: 81 }).unwrap();
    let (c2c0, c2p0) = (c2c(&clean, &noisy), c2p(&clean, &noisy, DEFAULT_PLANE_K).unwrap());
    let prepared = prepare(&noisy, &opts).unwrap();
    let (g, c2c_g, c2p_g) = best_over_gammas(&clean, &prepared, false);
    let gaussian_ok = c2c_g <= 0.85 * c2c0 && c2p_g <= 0.35 * c2p0;

    let noisy = add_noise(&clean, &NoiseSpec { kind: NoiseKind::Laplacian, sigma: 0.3, seed: 82 }).unwrap();
    let prepared = prepare(&noisy, &opts).unwrap();
    let (g2, c2c_2, c2p_2) = best_over_gammas(&clean, &prepared, false);
    let (g1, c2c_1, c2p_1) = best_over_gammas(&clean, &prepared, true);
    let laplacian_ok = c2c_1 < c2c_2 && c2p_1 < c2p_2;

    Outcome::new(
        gaussian_ok && laplacian_ok,
        format!(
            "gaussian σ=0.2 γ={g}: C2C {:.3}× (≤0.85), C2P {:.3}× (≤0.35); laplacian σ=0.3: \
             l1 γ={g1} C2C {c2c_1:.4} C2P {c2p_1:.4} vs l2 γ={g2} C2C {c2c_2:.4} C2P {c2p_2:.4} (l1 must be lower)",
            c2c_g / c2c0,
            c2p_g / c2p0
        ),
    )
}

fn gamma_sigma_linearity() -> Outcome {
    let n = 10_000;
    let surfaces: Vec<(String, PointCloud)> = [Shape::Plane, Shape::Sphere, Shape::Cube]
        .iter()
        .map(|s| (s.name().to_string(), PointCloud::new(s.sample(n, 1)).unwrap()))
        .collect();
    let config = CalibrationConfig::new(NoiseKind::Gaussian);
    match calibrate(&surfaces, &config) {
        Ok(cal) => {
            let means: Vec<String> = cal
                .sqrt_gamma_by_sigma()
                .iter()
                .map(|(s, g)| format!("{s}:{g:.2}"))
                .collect();
            Outcome::new(
                cal.r2 >= 0.9,
                format!("R² {:.3} (≥0.9), slope {:.2}, mean √γ_opt by σ [{}]", cal.r2, cal.model.slope, means.join(" ")),
            )
        }
        Err(e) => Outcome::new(false, format!("calibration failed: {e}")),
    }
}

fn estimator_identities() -> Outcome {
    let mut rng = rng_from_seed(110);
    let mut norm_violations = 0;
    for _ in 0..10_000 {
        let z = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            * 10f64.powf(rng.random_range(-3.0..3.0));
        let r = z.norm();
        let l1 = z.abs().sum();
        norm_violations += usize::from(!(r <= l1 * (1.0 + 1e-12) && l1 <= 3f64.sqrt() * r * (1.0 + 1e-12)));
    }
    let mut skew_violations = 0;
    let mut det_violations = 0;
    let mut check = |m: &NormalModel| {
        let Ok(e) = skew_eigen(&m.a) else {
            skew_violations += 1;
            return;
        };
        let lam = e.lambda;
        let tol = 1e-9 * lam.max(1.0);
        let basis = nalgebra::Matrix3::from_columns(&[e.v1, e.v2, e.v3]);
        let ok = (m.a * e.v1).norm() <= tol
            && (m.a * e.v2 - e.v3 * lam).norm() <= tol
            && (m.a * e.v3 + e.v2 * lam).norm() <= tol
            && (basis.transpose() * basis - nalgebra::Matrix3::identity()).norm() <= 1e-12
            && (lam - m.lambda()).abs() <= tol
            && (m.tr_ata() - 2.0 * lam * lam).abs() <= 1e-9 * lam * lam
            && (lam * m.dist_ik * m.beta_deg.to_radians().sin() - 1.0).abs() <= 1e-9;
        skew_violations += usize::from(!ok);
        let det = e.a_v(&m.a).determinant();
        det_violations += usize::from(det.abs().is_nan() || det.abs() <= 0.0 || (det.abs() - lam * lam).abs() > 1e-9 * lam * lam);
    };
    let mut models = 0;
    while models < 1000 {
        let p = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let k = p + random_unit(&mut rng) * rng.random_range(0.1..3.0);
        let l = k + random_unit(&mut rng) * rng.random_range(0.1..3.0);
        if let Ok(m) = NormalModel::from_points(0, &p, (1, k), (2, l)) {
            check(&m);
            models += 1;
        }
    }
    // models built from a partitioned noisy plane
    let clean = rescale_to_diagonal(&PointCloud::new(Shape::Plane.sample(2000, 3)).unwrap(), 100.0).unwrap().0;
    let noisy = add_noise(&clean, &NoiseSpec { kind: NoiseKind::Gaussian, sigma: 0.2, seed: 3 }).unwrap();
    let opts = PipelineOptions::default();
    let prepared = prepare(&noisy, &opts).unwrap();
    for color in [Color::Red, Color::Blue] {
        let models_c = rglr::normals::build_models(&prepared.q, &prepared.partition, color, None).unwrap();
        models += models_c.len();
        models_c.iter().for_each(&mut check);
    }
    Outcome::new(
        norm_violations == 0 && skew_violations == 0 && det_violations == 0,
        format!(
            "ℓ1/ℓ2 bound {norm_violations}/10000 violations, skew-eigen {skew_violations}/{models}, det A_v {det_violations}/{models}"
        ),
    )
}
