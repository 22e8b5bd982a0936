//! Command-line front-end: `simulate`, `density`, `entropy`, `clt` and `scan`.
//!
//! Every subcommand reads one JSON config, writes its outputs into `--out`
//! and derives all randomness from a single root seed through named
//! sub-streams, so a run is reproducible from `(config, seed)` alone.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::detection::{
    detection_quality, excursion_set, optimal_scan_width, robust_stats, scan_entropy_field,
    scan_entropy_field_with_copy, DetectionQuality, EstimatorMode, OptimalWidth, OptimalWidthInput, ScanConfig,
    ScanStats, DEFAULT_FALSE_ALARM, DEFAULT_MIN_POINTS, DEFAULT_MULTIPLIER,
};
use crate::directional::{true_entropy, DirectionalModel, RandomStream};
use crate::error::Error;
use crate::estimation::{
    clt_normalize, density_sup_error, entropy_modified, entropy_plain, standardized_statistic, CltNormalization,
    DensityField, EntropyDiagnostics, EstimatorConfig, KernelKind, DEFAULT_COV_LATTICE, DEFAULT_REPLICATIONS,
};
use crate::geometry::{dilate, Cube, Region, SphereGrid};
use crate::process::{
    read_point_cloud, simulate_with_options, write_point_cloud, FibreSystem, InhomogeneitySpec, SimulationOptions,
};
use crate::stats::SampleSummary;

pub const DEFAULT_GRID_CELLS: usize = 4096;
pub const MIN_CLT_REPLICATIONS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "fibrescan", version, about = "Fibre direction simulation, entropy estimation and inhomogeneity scanning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a marked fibre system and write it as a point cloud.
    Simulate(CommonArgs),
    /// Sup-norm error of the kernel density estimate per kernel and law.
    Density(CommonArgs),
    /// Entropy estimates against the true entropy.
    Entropy(CommonArgs),
    /// Standardized modified entropy estimates for a CLT check.
    Clt(CommonArgs),
    /// Scan for regions with a deviating directional law.
    Scan(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::Json(_) => CliError::Config(msg),
            Error::InvalidData(_) | Error::Io(_) | Error::Csv(_) => CliError::Io(msg),
            Error::EmptyRegion(_) | Error::Numerical(_) => CliError::Numerical(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parameters of a subcommand plus the run-level settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<P> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(flatten)]
    pub params: P,
}

/// Marks inside `regions` follow `model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneityParams {
    pub regions: Vec<Region>,
    pub model: DirectionalModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateParams {
    pub window: Cube,
    pub intensity: f64,
    /// Law of the marks (outside any inhomogeneity).
    pub model: DirectionalModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inhomogeneity: Option<InhomogeneityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fibre_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fibre_radius: Option<f64>,
}

impl SimulateParams {
    fn spec(&self) -> InhomogeneitySpec {
        match &self.inhomogeneity {
            Some(inh) => InhomogeneitySpec::new(inh.regions.clone(), inh.model.clone(), self.model.clone()),
            None => InhomogeneitySpec::new(Vec::new(), self.model.clone(), self.model.clone()),
        }
    }

    fn with_model(&self, model: &DirectionalModel) -> Self {
        Self { model: model.clone(), ..self.clone() }
    }

    pub fn simulate(&self, rng: &RandomStream) -> crate::Result<FibreSystem> {
        if !(self.window.side > 0.0) {
            return Err(crate::error::invalid(format!("simulation window {} has no volume", self.window)));
        }
        let system =
            simulate_with_options(&self.window, self.intensity, &self.spec(), rng, &SimulationOptions::default())?;
        match self.fibre_length {
            Some(l) => system.with_fibre_length(l),
            None => Ok(system),
        }
    }
}

/// Where the points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Simulate(SimulateParams),
    /// A point cloud file with its observation window and intensity.
    Points { path: PathBuf, window: Cube, intensity: f64 },
}

impl DataSource {
    fn window(&self) -> Cube {
        match self {
            DataSource::Simulate(p) => p.window,
            DataSource::Points { window, .. } => *window,
        }
    }

    fn intensity(&self) -> f64 {
        match self {
            DataSource::Simulate(p) => p.intensity,
            DataSource::Points { intensity, .. } => *intensity,
        }
    }

    fn load(&self, rng: &RandomStream) -> CliResult<FibreSystem> {
        match self {
            DataSource::Simulate(p) => Ok(p.simulate(rng)?),
            DataSource::Points { path, window, intensity } => {
                let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let points = read_point_cloud(BufReader::new(file))?;
                Ok(FibreSystem::new(*window, *intensity, points)?)
            }
        }
    }

    /// Laws to sweep: `models` with simulated data, or the single true law of a file.
    fn sweep(&self, models: &[DirectionalModel]) -> CliResult<Vec<DirectionalModel>> {
        match self {
            DataSource::Simulate(p) if models.is_empty() => Ok(vec![p.model.clone()]),
            DataSource::Simulate(p) if p.inhomogeneity.is_some() => {
                Err(CliError::Config("a model sweep cannot be combined with an inhomogeneity".into()))
            }
            DataSource::Simulate(_) => Ok(models.to_vec()),
            DataSource::Points { .. } if models.len() == 1 => Ok(models.to_vec()),
            DataSource::Points { .. } => {
                Err(CliError::Config("point cloud input needs exactly one true model in `models`".into()))
            }
        }
    }

    fn for_model(&self, model: &DirectionalModel) -> Self {
        match self {
            DataSource::Simulate(p) => DataSource::Simulate(p.with_model(model)),
            other => other.clone(),
        }
    }

    fn simulated(&self) -> Option<&SimulateParams> {
        match self {
            DataSource::Simulate(p) => Some(p),
            DataSource::Points { .. } => None,
        }
    }
}

fn default_kernels() -> Vec<KernelKind> {
    vec![KernelKind::Tricube]
}

fn default_kernel() -> KernelKind {
    KernelKind::Tricube
}

fn default_grid_cells() -> usize {
    DEFAULT_GRID_CELLS
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub data: DataSource,
    /// Estimation window `B`; the data window when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Cube>,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<KernelKind>,
    /// True laws; with simulated data each law gets its own realization.
    #[serde(default)]
    pub models: Vec<DirectionalModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Cells of the equal-area evaluation grid.
    #[serde(default = "default_grid_cells")]
    pub grid_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyParams {
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Cube>,
    /// Density window `B′`; equal to `B` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_window: Option<Cube>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub models: Vec<DirectionalModel>,
    /// Independent realizations per law (simulated data only).
    #[serde(default = "default_one")]
    pub replications: usize,
    #[serde(default)]
    pub mode: EstimatorMode,
}

fn default_clt_replications() -> usize {
    200
}

fn default_norm_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_cov_lattice() -> usize {
    DEFAULT_COV_LATTICE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub intensity: f64,
    /// Estimation window `B`.
    pub window: Cube,
    /// Density window `B′`.
    pub sub_window: Cube,
    pub model: DirectionalModel,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Standardized statistics to draw.
    #[serde(default = "default_clt_replications")]
    pub replications: usize,
    /// Realizations behind the normalization.
    #[serde(default = "default_norm_replications")]
    pub normalization_replications: usize,
    #[serde(default = "default_cov_lattice")]
    pub cov_lattice: usize,
}

fn default_false_alarm() -> f64 {
    DEFAULT_FALSE_ALARM
}

/// Derive `b` from the inhomogeneity size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sizing {
    pub a: f64,
    #[serde(default = "default_false_alarm")]
    pub alpha_f: f64,
}

fn default_multiplier() -> f64 {
    DEFAULT_MULTIPLIER
}

fn default_min_points() -> usize {
    DEFAULT_MIN_POINTS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSection {
    /// Observation window `W`; the data window when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Cube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_side: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizing: Option<Sizing>,
    /// Lattice mesh; `b/2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<f64>,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default)]
    pub mode: EstimatorMode,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_min_points")]
    pub min_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub data: DataSource,
    pub scan: ScanSection,
    /// Regions to score the detection against; the simulated ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_regions: Option<Vec<Region>>,
}

impl ScanParams {
    /// Scanning window side and, when derived, the sizing result.
    pub fn scan_side(&self) -> CliResult<(f64, Option<OptimalWidth>)> {
        let w = self.scan.window.unwrap_or_else(|| self.data.window());
        let sizing = match self.scan.sizing {
            Some(s) => Some(optimal_scan_width(&OptimalWidthInput { a: s.a, w: w.side, alpha_f: s.alpha_f })?),
            None => None,
        };
        let b = match (self.scan.scan_side, sizing) {
            (Some(b), _) => b,
            (None, Some(o)) => o.b,
            (None, None) => return Err(CliError::Config("give either `scan_side` or `sizing`".into())),
        };
        if !(b > 0.0) {
            return Err(CliError::Config(format!("scanning window side must be positive, got {b}")));
        }
        Ok((b, sizing))
    }

    pub fn scan_config(&self) -> CliResult<(ScanConfig, Option<OptimalWidth>)> {
        let (b, sizing) = self.scan_side()?;
        let s = &self.scan;
        let cfg = ScanConfig {
            window: s.window.unwrap_or_else(|| self.data.window()),
            scan_side: b,
            mesh: s.mesh.unwrap_or(0.5 * b),
            multiplier: s.multiplier,
            mode: s.mode,
            kernel: s.kernel,
            bandwidth: s.bandwidth,
            intensity: self.data.intensity(),
            min_points: s.min_points,
        };
        cfg.validate()?;
        Ok((cfg, sizing))
    }

    fn true_regions(&self) -> Option<Vec<Region>> {
        self.true_regions.clone().or_else(|| {
            self.data.simulated().and_then(|p| p.inhomogeneity.as_ref()).map(|i| i.regions.clone())
        })
    }
}

/// Resolved run settings.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub seed: u64,
    pub out: PathBuf,
    pub root: RandomStream,
}

impl RunContext {
    pub fn new(seed: u64, out: impl Into<PathBuf>) -> Self {
        Self { seed, out: out.into(), root: RandomStream::new(seed, 0) }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn read_config<P: DeserializeOwned>(path: &Path) -> CliResult<RunConfig<P>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub seed: u64,
    pub params: SimulateParams,
    pub points: usize,
    pub expected_points: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_fraction: Option<f64>,
}

pub fn cmd_simulate(params: &SimulateParams, ctx: &RunContext) -> CliResult<SimulationMetadata> {
    let system = params.simulate(&ctx.root.substream("simulate", 0))?;
    let volume_fraction = match (params.fibre_length, params.fibre_radius) {
        (Some(_), Some(r)) => Some(system.volume_fraction(r)?),
        _ => None,
    };
    let mut w = create_file(&ctx.path("points.csv"))?;
    write_point_cloud(&mut w, system.points())?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    let meta = SimulationMetadata {
        seed: ctx.seed,
        params: params.clone(),
        points: system.len(),
        expected_points: params.intensity * params.window.volume(),
        volume_fraction,
    };
    write_json(&ctx.path("metadata.json"), &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- density

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCell {
    pub kernel: KernelKind,
    pub model: DirectionalModel,
    pub bandwidth: f64,
    pub points: usize,
    pub sup_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub seed: u64,
    pub window: Cube,
    pub grid_nodes: usize,
    pub cells: Vec<DensityCell>,
}

pub fn cmd_density(params: &DensityParams, ctx: &RunContext) -> CliResult<DensityReport> {
    if params.kernels.is_empty() {
        return Err(CliError::Config("`kernels` must not be empty".into()));
    }
    let window = params.window.unwrap_or_else(|| params.data.window());
    let grid = SphereGrid::equal_area(params.grid_cells);
    let mut cells = Vec::new();
    for (m, model) in params.data.sweep(&params.models)?.iter().enumerate() {
        let system = params.data.for_model(model).load(&ctx.root.substream("simulate", m as u64))?;
        for &kernel in &params.kernels {
            let mut cfg = EstimatorConfig::new(kernel, system.intensity(), window)?;
            if let Some(h) = params.bandwidth {
                cfg = cfg.with_bandwidth(h)?;
            }
            let field = DensityField::new(&system, &cfg);
            let sup_error = density_sup_error(|eta| field.eval(eta), model, &grid);
            cells.push(DensityCell { kernel, model: model.clone(), bandwidth: cfg.bandwidth, points: field.count(), sup_error });
        }
    }
    let report = DensityReport { seed: ctx.seed, window, grid_nodes: grid.len(), cells };
    write_json(&ctx.path("density_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- entropy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub model: DirectionalModel,
    pub true_entropy: f64,
    pub estimates: Vec<f64>,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// `|mean − true|`.
    pub abs_error: f64,
    pub mse: f64,
    pub diagnostics: Vec<EntropyDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub seed: u64,
    pub mode: EstimatorMode,
    pub kernel: KernelKind,
    pub bandwidth: f64,
    pub window: Cube,
    pub sub_window: Cube,
    pub rows: Vec<EntropyRow>,
}

/// Quadrature grid for true entropies of concentrated laws.
pub fn oracle_grid() -> SphereGrid {
    SphereGrid::gauss_product(256, 512)
}

pub fn cmd_entropy(params: &EntropyParams, ctx: &RunContext) -> CliResult<EntropyReport> {
    if params.replications == 0 {
        return Err(CliError::Config("`replications` must be at least 1".into()));
    }
    if params.data.simulated().is_none() && (params.replications > 1 || params.mode == EstimatorMode::Modified) {
        return Err(CliError::Config(
            "replicated runs and the modified estimator need simulated data".into(),
        ));
    }
    let window = params.window.unwrap_or_else(|| params.data.window());
    let mut cfg = EstimatorConfig::new(params.kernel, params.data.intensity(), window)?;
    if let Some(b) = params.sub_window {
        cfg = cfg.with_sub_window(b)?;
    }
    if let Some(h) = params.bandwidth {
        cfg = cfg.with_bandwidth(h)?;
    }
    let grid = oracle_grid();
    let mut rows = Vec::new();
    for (m, model) in params.data.sweep(&params.models)?.iter().enumerate() {
        let source = params.data.for_model(model);
        let truth = true_entropy(model, &grid);
        let mut estimates = Vec::with_capacity(params.replications);
        let mut diagnostics = Vec::with_capacity(params.replications);
        for r in 0..params.replications {
            let index = (m * params.replications + r) as u64;
            let system = source.load(&ctx.root.substream("simulate", index))?;
            let est = match params.mode {
                EstimatorMode::Plain => entropy_plain(&system, &cfg)?,
                EstimatorMode::Modified => {
                    let copy = source.load(&ctx.root.substream("copy", index))?;
                    entropy_modified(&system, &copy, &cfg)?
                }
            };
            estimates.push(est.value);
            diagnostics.push(est.diagnostics);
        }
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let variance = (estimates.len() > 1)
            .then(|| estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0));
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        rows.push(EntropyRow {
            model: model.clone(),
            true_entropy: truth,
            abs_error: (mean - truth).abs(),
            estimates,
            mean,
            variance,
            mse,
            diagnostics,
        });
    }
    let report = EntropyReport {
        seed: ctx.seed,
        mode: params.mode,
        kernel: params.kernel,
        bandwidth: cfg.bandwidth,
        window: cfg.window,
        sub_window: cfg.sub_window,
        rows,
    };
    write_json(&ctx.path("entropy_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- clt

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltSample {
    pub replication: usize,
    pub estimate: f64,
    pub points: usize,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub seed: u64,
    pub params: CltParams,
    pub bandwidth: f64,
    pub normalization: CltNormalization,
    pub summary: SampleSummary,
}

/// Normalization and `replications` standardized statistics.
///
/// The original process lives on `B ⊕ B′`, so every window `B′ + Y*` with
/// `Y* ∈ B` is fully observed; the copy lives on `B`.
pub fn clt_study(params: &CltParams, root: &RandomStream) -> crate::Result<(CltNormalization, Vec<CltSample>)> {
    if params.replications < MIN_CLT_REPLICATIONS {
        return Err(crate::error::invalid(format!(
            "at least {MIN_CLT_REPLICATIONS} replications are needed, got {}",
            params.replications
        )));
    }
    let mut cfg = EstimatorConfig::new(params.kernel, params.intensity, params.window)?.with_sub_window(params.sub_window)?;
    if let Some(h) = params.bandwidth {
        cfg = cfg.with_bandwidth(h)?;
    }
    let norm = clt_normalize(
        &cfg,
        &params.model,
        params.normalization_replications,
        params.cov_lattice,
        &root.substream("normalization", 0),
    )?;
    let outer = dilate(&params.window, &params.sub_window);
    let vol = params.window.volume();
    let samples = (0..params.replications)
        .into_par_iter()
        .map(|r| {
            let stream = root.substream("replications", r as u64);
            let system = crate::process::simulate_homogeneous(&outer, params.intensity, &params.model, &stream.substream("original", 0))?;
            let copy = crate::process::simulate_homogeneous(&params.window, params.intensity, &params.model, &stream.substream("copy", 0))?;
            let est = entropy_modified(&system, &copy, &cfg)?;
            let centred = norm.with_count(est.diagnostics.points, params.intensity, vol);
            Ok(CltSample {
                replication: r,
                estimate: est.value,
                points: est.diagnostics.points,
                statistic: standardized_statistic(est.value, &centred, vol),
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((norm, samples))
}

pub fn cmd_clt(params: &CltParams, ctx: &RunContext) -> CliResult<CltSummary> {
    let (normalization, samples) = clt_study(params, &ctx.root)?;
    let mut w = csv::Writer::from_writer(create_file(&ctx.path("clt_statistics.csv"))?);
    for s in &samples {
        w.serialize(s).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    let stats: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    let summary = CltSummary {
        seed: ctx.seed,
        params: params.clone(),
        bandwidth: params.bandwidth.unwrap_or_else(|| crate::estimation::default_bandwidth(params.window.volume())),
        normalization,
        summary: SampleSummary::new(&stats)?,
    };
    write_json(&ctx.path("clt_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- scan

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub entropy: Option<f64>,
    pub deviation: Option<f64>,
    pub points: usize,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanDiagnostics {
    pub lattice_points: usize,
    pub invalid_points: usize,
    pub clamped_terms: usize,
    pub flagged_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub seed: u64,
    pub config: ScanConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sizing: Option<OptimalWidth>,
    pub bandwidth: f64,
    pub lattice_shape: [usize; 3],
    pub stats: ScanStats,
    pub flagged: Vec<[f64; 3]>,
    pub diagnostics: ScanDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<DetectionQuality>,
    pub field: Vec<FieldPoint>,
}

pub fn cmd_scan(params: &ScanParams, ctx: &RunContext) -> CliResult<DetectionReport> {
    let (cfg, sizing) = params.scan_config()?;
    if cfg.mode == EstimatorMode::Modified && params.data.simulated().is_none() {
        return Err(CliError::Config("the modified estimator needs simulated data".into()));
    }
    let system = params.data.load(&ctx.root.substream("simulate", 0))?;
    let field = match cfg.mode {
        EstimatorMode::Plain => scan_entropy_field(&system, &cfg)?,
        EstimatorMode::Modified => {
            let copy = params.data.load(&ctx.root.substream("copy", 0))?;
            scan_entropy_field_with_copy(&system, &copy, &cfg)?
        }
    };
    let stats = robust_stats(&field)?;
    let result = excursion_set(&field, &stats, cfg.multiplier);
    let quality = params.true_regions().map(|regions| detection_quality(&regions, &result));

    let lattice = field.lattice;
    let points: Vec<FieldPoint> = field
        .values
        .iter()
        .zip(&result.deviations)
        .enumerate()
        .map(|(i, (v, d))| {
            let p = lattice.point(i);
            FieldPoint {
                x: p.x,
                y: p.y,
                z: p.z,
                entropy: v.valid.then_some(v.entropy),
                deviation: *d,
                points: v.points,
                clamped: v.clamped,
            }
        })
        .collect();

    let mut w = csv::Writer::from_writer(create_file(&ctx.path("entropy_field.csv"))?);
    w.write_record(["x", "y", "z", "entropy", "valid"]).map_err(|e| CliError::Io(e.to_string()))?;
    for (p, v) in points.iter().zip(&field.values) {
        let entropy = if v.valid { v.entropy.to_string() } else { "NaN".to_string() };
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), entropy, v.valid.to_string()])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let report = DetectionReport {
        seed: ctx.seed,
        config: cfg,
        sizing,
        bandwidth: cfg.bandwidth(),
        lattice_shape: lattice.shape(),
        stats,
        flagged: result.flagged_points().iter().map(|p| p.to_array()).collect(),
        diagnostics: ScanDiagnostics {
            lattice_points: lattice.len(),
            invalid_points: field.invalid_count(),
            clamped_terms: field.values.iter().map(|v| v.clamped).sum(),
            flagged_points: result.flagged.len(),
        },
        quality,
        field: points,
    };
    write_json(&ctx.path("detection_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- driver

fn execute<P: DeserializeOwned, R>(
    args: &CommonArgs,
    run: impl FnOnce(&P, &RunContext) -> CliResult<R>,
) -> CliResult<()> {
    let config: RunConfig<P> = read_config(&args.config)?;
    let threads = args.threads.or(config.threads).unwrap_or(0);
    if threads > 0 {
        // Fails only if a pool already exists, as in repeated in-process calls.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = args.out.clone().or(config.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let ctx = RunContext::new(args.seed.or(config.seed).unwrap_or(0), out);
    run(&config.params, &ctx).map(|_| ())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => execute(a, cmd_simulate),
        Command::Density(a) => execute(a, cmd_density),
        Command::Entropy(a) => execute(a, cmd_entropy),
        Command::Clt(a) => execute(a, cmd_clt),
        Command::Scan(a) => execute(a, cmd_scan),
    }
}

/// Parses `std::env::args`, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fibrescan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, UnitVector3};

    #[test]
    fn configs_round_trip() {
        let cfg = RunConfig {
            seed: Some(4),
            out: None,
            threads: Some(2),
            params: ScanParams {
                data: DataSource::Simulate(SimulateParams {
                    window: Cube::at_origin(35.0).unwrap(),
                    intensity: 20.0,
                    model: DirectionalModel::fisher(UnitVector3::E3, 10.0).unwrap(),
                    inhomogeneity: Some(InhomogeneityParams {
                        regions: vec![Region::Cube(Cube::new(Point3::splat(15.0), 5.0).unwrap())],
                        model: DirectionalModel::uniform(),
                    }),
                    fibre_length: None,
                    fibre_radius: None,
                }),
                scan: ScanSection {
                    window: None,
                    scan_side: None,
                    sizing: Some(Sizing { a: 5.0, alpha_f: 0.05 }),
                    mesh: None,
                    multiplier: 3.0,
                    mode: EstimatorMode::Plain,
                    kernel: KernelKind::Tricube,
                    bandwidth: None,
                    min_points: 30,
                },
                true_regions: None,
            },
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig<ScanParams> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let (b, sizing) = back.params.scan_side().unwrap();
        assert!((b - 2.4455).abs() < 1e-3 && sizing.unwrap().valid);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(crate::error::invalid("x")).exit_code(), 1);
        assert_eq!(CliError::from(Error::EmptyRegion("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::Io(std::io::Error::other("x"))).exit_code(), 2);
    }
}
