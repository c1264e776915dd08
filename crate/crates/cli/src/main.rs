//! `rglr`: batch front end for the denoising pipeline.
//!
//! Exit codes: 0 success, 2 bad arguments/config or unparsable input,
//! 3 I/O failure, 4 automatic γ requested without a calibrated model,
//! 1 any other failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rglr::calibrate::{calibrate, Calibration, CalibrationConfig, GammaGrid, Solver};
use rglr::graph::{knn_graph, mean_knn_distance, WeightParams};
use rglr::metrics::{evaluate, rel_error, DEFAULT_PLANE_K};
use rglr::noise_est::{
    estimate_noise, gamma_opt, NoiseConfig, NoiseEstimate, PatchConfig, DEFAULT_MIN_PATCH_SIZE, DEFAULT_NORMAL_BANDWIDTH,
};
use rglr::pipeline::PipelineOptions;
use rglr::pointcloud::{add_noise, load, rescale_to_diagonal, save, Format, NoiseKind, NoiseSpec, PointCloud};
use rglr::solver_l1::{denoise_l1_with, ApgConfig};
use rglr::solver_l2::{denoise_l2_with, Backend, L2Config};
use rglr::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "rglr", version, about = "Point-cloud denoising with a reweighted graph Laplacian regularizer")]
struct Cli {
    /// Worker threads (falls back to RGLR_THREADS, then all cores).
    #[arg(long, global = true, env = "RGLR_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add synthetic noise to a clean cloud.
    AddNoise(AddNoiseArgs),
    /// Denoise a cloud.
    Denoise(DenoiseArgs),
    /// Estimate the noise level from flat patches.
    EstimateNoise(EstimateArgs),
    /// C2C and C2P between a ground truth and a denoised cloud.
    Metrics(MetricsArgs),
    /// Fit the γ model on a directory of clean clouds.
    FitGamma(FitGammaArgs),
    /// Write the k-NN graph as "i j w" lines.
    GraphDump(GraphDumpArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, Debug)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Gaussian,
    Laplacian,
}

impl From<Kind> for NoiseKind {
    fn from(k: Kind) -> NoiseKind {
        match k {
            Kind::Gaussian => NoiseKind::Gaussian,
            Kind::Laplacian => NoiseKind::Laplacian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Debug)]
#[serde(rename_all = "lowercase")]
enum Fidelity {
    L2,
    L1,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Debug)]
#[serde(rename_all = "lowercase")]
enum BackendArg {
    Cg,
    Lanczos,
}

#[derive(Args)]
struct AddNoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    /// Per-coordinate standard deviation, in the frame the noise is added in.
    #[arg(long, allow_negative_numbers = true)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rescale to this bounding-box diagonal before adding noise.
    #[arg(long)]
    target_diag: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Denoise settings that may also come from a JSON config file.
#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct DenoiseSettings {
    #[arg(long, value_enum)]
    fidelity: Option<Fidelity>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Lanczos subspace size.
    #[arg(long)]
    lanczos_m: Option<usize>,
    /// "auto" or a non-negative number.
    #[arg(long)]
    gamma: Option<String>,
    /// Calibration file written by fit-gamma; required for --gamma auto.
    #[arg(long)]
    gamma_model: Option<PathBuf>,
    /// Noise kind assumed by --gamma auto (defaults to gaussian for l2, laplacian for l1).
    #[arg(long, value_enum)]
    noise_kind: Option<Kind>,
    /// γ used when --gamma auto finds no flat patch (defaults to the solver's default γ).
    #[arg(long)]
    fallback_gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Distance-kernel bandwidth (rescaled units); defaults to the mean k-NN distance.
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    reweight_iters: Option<usize>,
    #[arg(long)]
    apg_iters: Option<usize>,
    #[arg(long)]
    target_diag: Option<f64>,
    /// Seed for the bipartite start node; 0 keeps node 0 as the start.
    #[arg(long)]
    seed: Option<u64>,
}

impl DenoiseSettings {
    /// `self` overrides `base` field by field.
    fn over(self, base: DenoiseSettings) -> DenoiseSettings {
        DenoiseSettings {
            fidelity: self.fidelity.or(base.fidelity),
            backend: self.backend.or(base.backend),
            lanczos_m: self.lanczos_m.or(base.lanczos_m),
            gamma: self.gamma.or(base.gamma),
            gamma_model: self.gamma_model.or(base.gamma_model),
            noise_kind: self.noise_kind.or(base.noise_kind),
            fallback_gamma: self.fallback_gamma.or(base.fallback_gamma),
            k: self.k.or(base.k),
            sigma_p: self.sigma_p.or(base.sigma_p),
            outer_iters: self.outer_iters.or(base.outer_iters),
            reweight_iters: self.reweight_iters.or(base.reweight_iters),
            apg_iters: self.apg_iters.or(base.apg_iters),
            target_diag: self.target_diag.or(base.target_diag),
            seed: self.seed.or(base.seed),
        }
    }
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// JSON file with any of the settings below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    settings: DenoiseSettings,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 100.0)]
    target_diag: f64,
    /// Mean-shift bandwidth in normal space (unit-sphere chord).
    #[arg(long, default_value_t = DEFAULT_NORMAL_BANDWIDTH)]
    normal_bandwidth: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_PATCH_SIZE)]
    min_patch_size: usize,
    /// True σ in input units; adds the relative error to the output.
    #[arg(long)]
    true_sigma: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    den: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PLANE_K)]
    plane_k: usize,
    /// Print the full report as JSON instead of the one-line summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FitGammaArgs {
    /// Directory of clean .xyz/.ply clouds.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    #[arg(long = "out")]
    output: PathBuf,
    /// Solver to sweep (defaults to l2 for gaussian, l1 for laplacian).
    #[arg(long, value_enum)]
    fidelity: Option<Fidelity>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = GammaGrid::default().step)]
    gamma_step: f64,
    #[arg(long, default_value_t = GammaGrid::default().points)]
    gamma_points: usize,
    #[arg(long, default_value_t = 8)]
    coarse_stride: usize,
    #[arg(long, default_value_t = 3)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GraphDumpArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Defaults to the mean k-NN distance.
    #[arg(long)]
    sigma_p: Option<f64>,
}

enum Failure {
    Usage(String),
    Io(String),
    NeedCalibration(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::NeedCalibration(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::NeedCalibration(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let m = e.to_string();
        match e {
            Error::Io { .. } => Failure::Io(m),
            Error::Parse { .. } | Error::UnsupportedFormat(_) | Error::InvalidInput(_) | Error::EmptyCloud => Failure::Usage(m),
            _ => Failure::Other(m),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_cloud(path: &Path) -> Result<PointCloud, Failure> {
    Ok(load(path, Format::from_path(path)?)?)
}

fn write_cloud(cloud: &PointCloud, path: &Path) -> CmdResult {
    Ok(save(cloud, path, Format::from_path(path)?)?)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_report(path: Option<&Path>, report: &Value) -> CmdResult {
    if let Some(p) = path {
        write_text(p, &(serde_json::to_string_pretty(report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

struct Stages(Vec<(String, f64)>, Instant);

impl Stages {
    fn new() -> Stages {
        Stages(Vec::new(), Instant::now())
    }

    fn mark(&mut self, name: &str) {
        let now = Instant::now();
        self.0.push((name.to_string(), now.duration_since(self.1).as_secs_f64()));
        self.1 = now;
    }

    fn json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), json!(v))).collect())
    }
}

fn cmd_add_noise(a: &AddNoiseArgs) -> CmdResult {
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(usage(format!("--sigma must be finite and >= 0, got {}", a.sigma)));
    }
    if let Some(d) = a.target_diag {
        if !(d.is_finite() && d > 0.0) {
            return Err(usage(format!("--target-diag must be positive, got {d}")));
        }
    }
    let mut stages = Stages::new();
    let mut cloud = read_cloud(&a.input)?;
    stages.mark("load");
    let mut scale = 1.0;
    if let Some(d) = a.target_diag {
        (cloud, scale) = rescale_to_diagonal(&cloud, d)?;
    }
    let spec = NoiseSpec { kind: a.kind.into(), sigma: a.sigma, seed: a.seed };
    let noisy = add_noise(&cloud, &spec)?;
    stages.mark("noise");
    write_cloud(&noisy, &a.output)?;
    stages.mark("save");
    write_report(
        a.report.as_deref(),
        &json!({
            "command": "add-noise",
            "version": VERSION,
            "seed": a.seed,
            "config": { "kind": a.kind, "sigma": a.sigma, "target_diag": a.target_diag, "input": a.input, "output": a.output },
            "scale": scale,
            "points": noisy.len(),
            "timings": stages.json(),
        }),
    )
}

fn parse_gamma(s: &str) -> Result<Option<f64>, Failure> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(g) if g.is_finite() && g >= 0.0 => Ok(Some(g)),
        _ => Err(usage(format!("--gamma must be \"auto\" or a number >= 0, got {s:?}"))),
    }
}

fn read_calibration(path: &Path) -> Result<Calibration, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a calibration file: {e}", path.display())))
}

fn cmd_denoise(a: &DenoiseArgs) -> CmdResult {
    let mut stages = Stages::new();
    let base = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Io(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", p.display())))?
        }
        None => DenoiseSettings::default(),
    };
    let s = a.settings.clone().over(base);
    let fidelity = s.fidelity.unwrap_or(Fidelity::L2);
    let gamma_arg = s.gamma.clone().ok_or_else(|| usage("--gamma is required (a number or \"auto\")"))?;
    let explicit = parse_gamma(&gamma_arg)?;
    let noise_kind: NoiseKind = match s.noise_kind {
        Some(k) => k.into(),
        None if fidelity == Fidelity::L1 => NoiseKind::Laplacian,
        None => NoiseKind::Gaussian,
    };
    if fidelity == Fidelity::L1 && s.backend.is_some() {
        return Err(usage("--backend applies to the l2 solver only"));
    }
    if let Some(m) = s.lanczos_m {
        if m == 0 {
            return Err(usage("--lanczos-m must be >= 1"));
        }
    }
    let mut opts = PipelineOptions::default();
    if let Some(k) = s.k {
        if k == 0 {
            return Err(usage("--k must be >= 1"));
        }
        opts.k = k;
    }
    opts.sigma_p = s.sigma_p;
    if let Some(d) = s.target_diag {
        if !(d.is_finite() && d > 0.0) {
            return Err(usage(format!("--target-diag must be positive, got {d}")));
        }
        opts.target_diag = Some(d);
    }
    let seed = s.seed.unwrap_or(0);
    if seed != 0 {
        opts.gmrf.start_node = rglr::bipartite::StartNode::Random(seed);
    }
    let calibration = match (explicit, &s.gamma_model) {
        (None, None) => {
            return Err(Failure::NeedCalibration(
                "--gamma auto needs --gamma-model (run fit-gamma first)".into(),
            ))
        }
        (None, Some(p)) => Some(read_calibration(p)?),
        _ => None,
    };
    let cloud = read_cloud(&a.input)?;
    stages.mark("load");

    let mut estimate_json = Value::Null;
    let gamma = match (explicit, calibration) {
        (Some(g), _) => g,
        (None, Some(cal)) => {
            if cal.kind != noise_kind {
                warn!("calibration was fitted for {:?} noise, estimating {:?}", cal.kind, noise_kind);
            }
            let ncfg = NoiseConfig { k: opts.k, target_diag: opts.target_diag, ..Default::default() };
            let g = match estimate_noise(&cloud, noise_kind, &ncfg) {
                Ok(est) => {
                    let g = gamma_opt(est.sigma2_scaled(), &cal.model);
                    info!("estimated sigma {:.4} -> gamma {g:.4}", est.sigma());
                    estimate_json = estimate_value(&est, None);
                    g
                }
                Err(Error::NoFlatPatches) => {
                    let g = s.fallback_gamma.unwrap_or(match fidelity {
                        Fidelity::L2 => L2Config::default().gamma,
                        Fidelity::L1 => ApgConfig::default().gamma,
                    });
                    warn!("no flat patches found; using fallback gamma {g}");
                    estimate_json = json!({ "warning": "NoFlatPatches" });
                    g
                }
                Err(e) => return Err(e.into()),
            };
            stages.mark("estimate");
            g
        }
        (None, None) => unreachable!(),
    };

    let (out, report) = match fidelity {
        Fidelity::L2 => {
            let mut cfg = L2Config { gamma, ..Default::default() };
            if let Some(o) = s.outer_iters {
                cfg.outer_iters = o;
            }
            if let Some(r) = s.reweight_iters {
                cfg.reweight_iters = r;
            }
            if s.backend == Some(BackendArg::Lanczos) {
                cfg.backend = Backend::Lanczos(s.lanczos_m.unwrap_or(30));
            }
            denoise_l2_with(&cloud, &cfg, &opts)?
        }
        Fidelity::L1 => {
            let mut cfg = ApgConfig { gamma, ..Default::default() };
            if let Some(o) = s.outer_iters {
                cfg.outer_iters = o;
            }
            if let Some(r) = s.reweight_iters {
                cfg.reweight_iters = r;
            }
            if let Some(n) = s.apg_iters {
                cfg.apg_iters = n;
            }
            denoise_l1_with(&cloud, &cfg, &opts)?
        }
    };
    stages.mark("denoise");
    write_cloud(&out, &a.output)?;
    stages.mark("save");
    let run = serde_json::to_value(&report).expect("report serializes");
    let cond_bound = report.cond_bounds().into_iter().fold(f64::NAN, f64::max);
    println!("gamma={gamma} outer_iterations={} cond_bound={cond_bound}", report.outer_iterations);
    write_report(
        a.report.as_deref(),
        &json!({
            "command": "denoise",
            "version": VERSION,
            "seed": seed,
            "config": s,
            "gamma": gamma,
            "noise_estimate": estimate_json,
            "cond_bound": cond_bound,
            "run": run,
            "timings": stages.json(),
        }),
    )
}

fn estimate_value(est: &NoiseEstimate, true_sigma: Option<f64>) -> Value {
    let mut v = json!({
        "kind": est.kind,
        "sigma": est.sigma(),
        "sigma2": est.sigma2,
        "sigma2_scaled": est.sigma2_scaled(),
        "patches_used": est.patches_used,
        "per_patch": est.per_patch,
    });
    if let Some(t) = true_sigma {
        v["true_sigma"] = json!(t);
        v["rel_error_percent"] = json!(rel_error(t, est.sigma()).ok());
    }
    v
}

fn cmd_estimate(a: &EstimateArgs) -> CmdResult {
    if !(a.target_diag.is_finite() && a.target_diag > 0.0) {
        return Err(usage(format!("--target-diag must be positive, got {}", a.target_diag)));
    }
    if let Some(t) = a.true_sigma {
        if !(t.is_finite() && t > 0.0) {
            return Err(usage(format!("--true-sigma must be positive, got {t}")));
        }
    }
    let mut stages = Stages::new();
    let cloud = read_cloud(&a.input)?;
    stages.mark("load");
    if !(a.normal_bandwidth.is_finite() && a.normal_bandwidth > 0.0) {
        return Err(usage(format!("--normal-bandwidth must be positive, got {}", a.normal_bandwidth)));
    }
    let patches = PatchConfig { normal_bandwidth: a.normal_bandwidth, min_patch_size: a.min_patch_size, k: a.k, ..Default::default() };
    let cfg = NoiseConfig { k: a.k, target_diag: Some(a.target_diag), patches, ..Default::default() };
    let config = json!({
        "kind": a.kind,
        "k": a.k,
        "target_diag": a.target_diag,
        "normal_bandwidth": a.normal_bandwidth,
        "min_patch_size": a.min_patch_size,
        "input": a.input,
    });
    let result = match estimate_noise(&cloud, a.kind.into(), &cfg) {
        Ok(est) => {
            let v = estimate_value(&est, a.true_sigma);
            match v.get("rel_error_percent").and_then(Value::as_f64) {
                Some(e) => println!("sigma={} sigma2={} patches={} rel_error={e:.2}%", est.sigma(), est.sigma2, est.patches_used),
                None => println!("sigma={} sigma2={} patches={}", est.sigma(), est.sigma2, est.patches_used),
            }
            v
        }
        Err(Error::NoFlatPatches) => {
            eprintln!("warning: NoFlatPatches: no flat region large enough to estimate the noise");
            json!({ "warning": "NoFlatPatches" })
        }
        Err(e) => return Err(e.into()),
    };
    stages.mark("estimate");
    write_report(
        a.report.as_deref(),
        &json!({ "command": "estimate-noise", "version": VERSION, "seed": Value::Null, "config": config, "estimate": result, "timings": stages.json() }),
    )
}

fn cmd_metrics(a: &MetricsArgs) -> CmdResult {
    let gt = read_cloud(&a.gt)?;
    let den = read_cloud(&a.den)?;
    let rep = evaluate(&gt, &den, a.plane_k)?;
    if a.json {
        println!("{}", rep.to_json());
    } else {
        println!("C2C={} C2P={}", rep.c2c, rep.c2p);
    }
    Ok(())
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && Format::from_path(p).is_ok())
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_fit_gamma(a: &FitGammaArgs) -> CmdResult {
    let mut stages = Stages::new();
    let files = corpus_files(&a.corpus)?;
    if files.is_empty() {
        return Err(usage(format!("corpus {} has no .xyz or .ply files", a.corpus.display())));
    }
    let surfaces = files
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_cloud(p)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    stages.mark("load");
    let kind: NoiseKind = a.kind.into();
    let mut cfg = CalibrationConfig::new(kind);
    cfg.solver = match a.fidelity {
        Some(Fidelity::L2) => Solver::L2,
        Some(Fidelity::L1) => Solver::L1,
        None => Solver::for_noise(kind),
    };
    cfg.sigmas = a.sigmas.clone();
    cfg.grid = GammaGrid { step: a.gamma_step, points: a.gamma_points };
    cfg.coarse_stride = a.coarse_stride;
    cfg.outer_iters = a.outer_iters;
    cfg.seed = a.seed;
    cfg.validate()?;
    let cal = calibrate(&surfaces, &cfg)?;
    stages.mark("sweep");
    write_text(&a.output, &(cal.to_json() + "\n"))?;
    println!("slope={} r2={} ceiling={}", cal.model.slope, cal.r2, cal.model.ceiling);
    Ok(())
}

fn cmd_graph_dump(a: &GraphDumpArgs) -> CmdResult {
    if a.k == 0 {
        return Err(usage("--k must be >= 1"));
    }
    let cloud = read_cloud(&a.input)?;
    let sigma_p = match a.sigma_p {
        Some(s) => s,
        None => mean_knn_distance(cloud.points(), a.k),
    };
    let params = WeightParams::new(sigma_p, a.k);
    params.validate()?;
    let graph = knn_graph(&cloud, &params)?;
    write_text(&a.output, &graph.to_edge_list())?;
    println!("nodes={} edges={} rho_max={}", graph.n(), graph.num_edges(), graph.rho_max());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::AddNoise(a) => cmd_add_noise(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::EstimateNoise(a) => cmd_estimate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::FitGamma(a) => cmd_fit_gamma(a),
        Command::GraphDump(a) => cmd_graph_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
