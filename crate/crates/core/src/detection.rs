//! Scanning-window detection of regions with a deviating directional law.
//!
//! The local entropy estimate is evaluated in windows `B + x` for lattice
//! points `x` of the minus-sampled window `W ⊖ B`; points where it deviates
//! from the field median by more than `multiplier · σ̂` form the excursion set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{default_bandwidth, Kernel, KernelEvaluator, KernelKind, MarkColumns};
use crate::geometry::{erode, Cube, Lattice, Point3, Region};
use crate::process::FibreSystem;
use crate::spatial::PointGrid;

pub const DEFAULT_MULTIPLIER: f64 = 3.0;
pub const DEFAULT_MIN_POINTS: usize = 30;
pub const DEFAULT_FALSE_ALARM: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// Density and sum from the same realization.
    #[default]
    Plain,
    /// Density from the original, sum over an independent copy.
    Modified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Observation window `W`.
    pub window: Cube,
    /// Side `b` of the scanning window `B = [0, b]³`.
    pub scan_side: f64,
    /// Lattice mesh `r`.
    pub mesh: f64,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default)]
    pub mode: EstimatorMode,
    pub kernel: KernelKind,
    /// Bandwidth; the default rule for `vol B` when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    pub intensity: f64,
    /// Windows with fewer points are marked invalid.
    #[serde(default = "default_min_points")]
    pub min_points: usize,
}

fn default_multiplier() -> f64 {
    DEFAULT_MULTIPLIER
}

fn default_min_points() -> usize {
    DEFAULT_MIN_POINTS
}

impl ScanConfig {
    /// Plain-mode config with mesh `b/2`, the 3σ threshold and the default bandwidth.
    pub fn new(window: Cube, scan_side: f64, kernel: KernelKind, intensity: f64) -> Result<Self> {
        let cfg = Self {
            window,
            scan_side,
            mesh: 0.5 * scan_side,
            multiplier: DEFAULT_MULTIPLIER,
            mode: EstimatorMode::Plain,
            kernel,
            bandwidth: None,
            intensity,
            min_points: DEFAULT_MIN_POINTS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scan_side > 0.0 && self.scan_side < self.window.side) {
            return Err(invalid(format!(
                "scanning window side {} must lie in (0, {})",
                self.scan_side, self.window.side
            )));
        }
        if !(self.mesh.is_finite() && self.mesh > 0.0) {
            return Err(invalid(format!("lattice mesh must be positive, got {}", self.mesh)));
        }
        if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
            return Err(invalid(format!("threshold multiplier must be positive, got {}", self.multiplier)));
        }
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return Err(invalid(format!("intensity must be positive, got {}", self.intensity)));
        }
        let h = self.bandwidth();
        if !(h > 0.0 && h < std::f64::consts::PI) {
            return Err(invalid(format!("bandwidth must lie in (0, π), got {h}")));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(self.scan_side.powi(3)))
    }

    /// Lattice of window anchors in `W ⊖ B`.
    pub fn lattice(&self) -> Result<Lattice> {
        let b = Cube::at_origin(self.scan_side)?;
        Lattice::over(erode(&self.window, &b), self.mesh)
    }

    fn scan_window(&self, anchor: Point3) -> Cube {
        Cube { origin: anchor, side: self.scan_side }
    }
}

/// Local estimate at one lattice point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanValue {
    /// Entropy estimate; meaningful only when `valid`.
    pub entropy: f64,
    pub valid: bool,
    /// Points in the window (for the modified mode: points of the copy).
    pub points: usize,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanField {
    pub lattice: Lattice,
    pub scan_side: f64,
    /// One entry per lattice point, in lattice order.
    pub values: Vec<ScanValue>,
}

impl ScanField {
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter(|v| v.valid).map(|v| v.entropy)
    }

    pub fn invalid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.valid).count()
    }
}

/// Entropy field over `W ⊖ B` from a single realization (plain mode).
pub fn scan_entropy_field(system: &FibreSystem, cfg: &ScanConfig) -> Result<ScanField> {
    if cfg.mode == EstimatorMode::Modified {
        return Err(invalid("the modified estimator needs an independent copy; use scan_entropy_field_with_copy"));
    }
    scan(system, None, cfg)
}

/// Entropy field with the density from `system` and sums over `copy`.
pub fn scan_entropy_field_with_copy(
    system: &FibreSystem,
    copy: &FibreSystem,
    cfg: &ScanConfig,
) -> Result<ScanField> {
    scan(system, Some(copy), cfg)
}

struct Indexed<'a> {
    system: &'a FibreSystem,
    locations: Vec<Point3>,
    grid: PointGrid,
}

impl<'a> Indexed<'a> {
    fn new(system: &'a FibreSystem, cell: f64) -> Self {
        let locations = system.locations();
        let grid = PointGrid::build(&locations, system.window().as_box(), cell);
        Self { system, locations, grid }
    }

    fn gather(&self, window: &Cube, out: &mut MarkColumns) {
        out.clear();
        let points = self.system.points();
        self.grid.for_each_in(&self.locations, &window.as_box(), |i| out.push(points[i].mark));
    }
}

fn scan(system: &FibreSystem, copy: Option<&FibreSystem>, cfg: &ScanConfig) -> Result<ScanField> {
    cfg.validate()?;
    for s in std::iter::once(system).chain(copy) {
        if !s.window().contains_cube(&cfg.window) {
            return Err(invalid(format!(
                "system window {} does not cover the scan window {}",
                s.window(),
                cfg.window
            )));
        }
    }
    let lattice = cfg.lattice()?;
    let evaluator = KernelEvaluator::new(Kernel::new(cfg.kernel), cfg.bandwidth());
    let cell = 0.5 * cfg.scan_side;
    let original = Indexed::new(system, cell);
    let copied = copy.map(|c| Indexed::new(c, cell));
    let norm = cfg.intensity * cfg.scan_side.powi(3);

    let values = (0..lattice.len())
        .into_par_iter()
        .map_init(
            || (MarkColumns::default(), MarkColumns::default(), Vec::new()),
            |(marks, targets, dens), idx| {
                let window = cfg.scan_window(lattice.point(idx));
                original.gather(&window, marks);
                let targets = match &copied {
                    Some(c) => {
                        c.gather(&window, targets);
                        &*targets
                    }
                    None => &*marks,
                };
                let points = targets.len();
                if marks.len() < cfg.min_points || points < cfg.min_points {
                    return ScanValue { entropy: f64::NAN, valid: false, points, clamped: 0 };
                }
                dens.clear();
                dens.extend((0..points).map(|i| evaluator.sum(targets.get(i), marks) / norm));
                let est = crate::estimation::entropy_from_densities(dens, norm);
                ScanValue {
                    entropy: est.value,
                    valid: est.value.is_finite(),
                    points,
                    clamped: est.diagnostics.clamped,
                }
            },
        )
        .collect();
    Ok(ScanField { lattice, scan_side: cfg.scan_side, values })
}

/// Median, mean and unbiased sample variance of the valid field values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanStats {
    pub median: f64,
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
}

impl ScanStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Numerical(format!("need at least 2 valid field values, got {n}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // A constant field must give σ̂ = 0 exactly; summation rounding would not.
        if sorted[0] == sorted[n - 1] {
            return Ok(Self { median, mean: median, variance: 0.0, n });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { median, mean, variance, n })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn robust_stats(field: &ScanField) -> Result<ScanStats> {
    let values: Vec<f64> = field.valid_values().collect();
    ScanStats::from_values(&values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub lattice: Lattice,
    pub scan_side: f64,
    pub multiplier: f64,
    pub stats: ScanStats,
    /// Lattice indices of the excursion set, increasing.
    pub flagged: Vec<usize>,
    /// `(value − μ̃) / σ̂` per lattice point; `None` for invalid points.
    /// Zero everywhere when `σ̂ = 0`.
    pub deviations: Vec<Option<f64>>,
}

impl DetectionResult {
    pub fn flagged_points(&self) -> Vec<Point3> {
        self.flagged.iter().map(|&i| self.lattice.point(i)).collect()
    }

    pub fn flag_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.lattice.len()];
        for &i in &self.flagged {
            mask[i] = true;
        }
        mask
    }

    /// Flagged fraction of the valid lattice points.
    pub fn flagged_fraction(&self) -> f64 {
        let valid = self.deviations.iter().filter(|d| d.is_some()).count();
        if valid == 0 { 0.0 } else { self.flagged.len() as f64 / valid as f64 }
    }
}

/// Lattice points with `|value − μ̃| > multiplier · σ̂`.
pub fn excursion_set(field: &ScanField, stats: &ScanStats, multiplier: f64) -> DetectionResult {
    let sd = stats.std_dev();
    let threshold = multiplier * sd;
    let mut flagged = Vec::new();
    let deviations = field
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if !v.valid {
                return None;
            }
            let d = v.entropy - stats.median;
            if d.abs() > threshold {
                flagged.push(i);
            }
            Some(if sd > 0.0 { d / sd } else { 0.0 })
        })
        .collect();
    DetectionResult {
        lattice: field.lattice,
        scan_side: field.scan_side,
        multiplier,
        stats: *stats,
        flagged,
        deviations,
    }
}

/// Field, statistics and excursion set in one call (plain mode).
pub fn detect(system: &FibreSystem, cfg: &ScanConfig) -> Result<DetectionResult> {
    let field = scan_entropy_field(system, cfg)?;
    let stats = robust_stats(&field)?;
    Ok(excursion_set(&field, &stats, cfg.multiplier))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalWidthInput {
    /// Side `a` of the inhomogeneity.
    pub a: f64,
    /// Side `w` of the observation window.
    pub w: f64,
    /// False-alarm level `α_f`.
    pub alpha_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalWidth {
    pub b: f64,
    /// `0 < b < a`.
    pub valid: bool,
}

/// Bound on the expected distance in measure for a scanning window of side `b`:
/// `(a+b)³(1−α_f) + ((w−b)³ − (a−b)³) α_f`.
pub fn dvol_bound(a: f64, b: f64, w: f64, alpha_f: f64) -> f64 {
    (a + b).powi(3) * (1.0 - alpha_f) + ((w - b).powi(3) - (a - b).powi(3)) * alpha_f
}

/// Minimizer of [`dvol_bound`] over `b`.
pub fn optimal_scan_width(input: &OptimalWidthInput) -> Result<OptimalWidth> {
    let OptimalWidthInput { a, w, alpha_f } = *input;
    if !(a > 0.0 && a < w && w.is_finite()) {
        return Err(invalid(format!("need 0 < a < w, got a = {a}, w = {w}")));
    }
    if !(alpha_f > 0.0 && alpha_f < 1.0) {
        return Err(invalid(format!("false-alarm level must lie in (0, 1), got {alpha_f}")));
    }
    let radicand = alpha_f * (w - a) * (w + (3.0 - 4.0 * alpha_f) * a);
    if radicand < 0.0 {
        return Err(Error::Numerical(format!("negative radicand {radicand:e}")));
    }
    let b = (radicand.sqrt() - (1.0 - 2.0 * alpha_f) * a - alpha_f * w) / (1.0 - alpha_f);
    Ok(OptimalWidth { b, valid: b > 0.0 && b < a })
}

/// Indicator of the lattice points lying in any of `regions`.
pub fn region_mask(lattice: &Lattice, regions: &[Region]) -> Vec<bool> {
    (0..lattice.len())
        .map(|i| {
            let p = lattice.point(i);
            regions.iter().any(|r| r.contains(p))
        })
        .collect()
}

/// Lattice volume of the symmetric difference of two point sets on one lattice.
pub fn dvol_between(lattice: &Lattice, a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "masks must share the lattice");
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 * lattice.cell_volume()
}

/// Lattice estimate of `vol(A △ Â)`.
pub fn dvol_estimate(true_regions: &[Region], result: &DetectionResult) -> f64 {
    dvol_between(&result.lattice, &region_mask(&result.lattice, true_regions), &result.flag_mask())
}

/// Detection rates by zone. Zones classify the scan window `B + x`:
/// inside a region (`x ∈ A ⊖ B`), meeting no region (`x ∉ A ⊕ B̌`), or the
/// boundary band in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionQuality {
    /// Flagged fraction of the interior zone; `None` when it is empty.
    pub coverage: Option<f64>,
    /// Coverage of each region's own interior zone.
    pub region_coverage: Vec<Option<f64>>,
    pub false_positive_rate: Option<f64>,
    pub boundary_flag_rate: Option<f64>,
    pub interior_points: usize,
    pub exterior_points: usize,
    pub boundary_points: usize,
    pub dvol: f64,
}

pub fn detection_quality(true_regions: &[Region], result: &DetectionResult) -> DetectionQuality {
    let flags = result.flag_mask();
    let side = result.scan_side;
    let rate = |hits: usize, total: usize| (total > 0).then(|| hits as f64 / total as f64);
    let mut per_region = vec![(0usize, 0usize); true_regions.len()];
    let (mut interior, mut exterior, mut boundary) = ((0, 0), (0, 0), (0, 0));
    for (i, &flag) in flags.iter().enumerate() {
        if result.deviations[i].is_none() {
            continue;
        }
        let x = result.lattice.point(i);
        let mut inside = false;
        let mut meets = false;
        for (k, r) in true_regions.iter().enumerate() {
            if r.contains_window(x, side) {
                inside = true;
                per_region[k].0 += flag as usize;
                per_region[k].1 += 1;
            }
            meets |= r.meets_window(x, side);
        }
        let zone = if inside {
            &mut interior
        } else if meets {
            &mut boundary
        } else {
            &mut exterior
        };
        zone.0 += flag as usize;
        zone.1 += 1;
    }
    DetectionQuality {
        coverage: rate(interior.0, interior.1),
        region_coverage: per_region.iter().map(|&(h, t)| rate(h, t)).collect(),
        false_positive_rate: rate(exterior.0, exterior.1),
        boundary_flag_rate: rate(boundary.0, boundary.1),
        interior_points: interior.1,
        exterior_points: exterior.1,
        boundary_points: boundary.1,
        dvol: dvol_estimate(true_regions, result),
    }
}
