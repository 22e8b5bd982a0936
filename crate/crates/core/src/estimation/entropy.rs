use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EstimatorConfig;
use super::density::DensityField;
use super::fast::{KernelEvaluator, MarkColumns};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3, UnitVector3};
use crate::process::{FibreSystem, MarkedPoint};
use crate::spatial::PointGrid;

/// Lower bound applied to density values before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Fraction of clamped terms above which an estimate is flagged unreliable.
pub const UNRELIABLE_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyDiagnostics {
    /// Points of the summation window, i.e. terms of the sum.
    pub points: usize,
    /// Terms whose density fell below [`LOG_FLOOR`].
    pub clamped: usize,
    pub unreliable: bool,
    /// Set when the "independent" copy coincides with the original.
    pub degenerate_copy: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub diagnostics: EntropyDiagnostics,
}

/// `−(1/(λ vol B)) Σ log max(fᵢ, floor)` with clamp bookkeeping.
pub(crate) fn entropy_from_densities(values: &[f64], norm: f64) -> EntropyEstimate {
    let mut clamped = 0;
    let mut sum = 0.0;
    for &v in values {
        if !(v >= LOG_FLOOR) {
            clamped += 1;
        }
        sum += v.max(LOG_FLOOR).ln();
    }
    let points = values.len();
    EntropyEstimate {
        value: -sum / norm,
        diagnostics: EntropyDiagnostics {
            points,
            clamped,
            unreliable: clamped as f64 > UNRELIABLE_FRACTION * points as f64,
            degenerate_copy: false,
        },
    }
}

fn points_in(system: &FibreSystem, cfg: &EstimatorConfig) -> Vec<MarkedPoint> {
    system.points().iter().filter(|p| cfg.window.contains(p.location)).copied().collect()
}

/// Plain estimator `Ê_f(B) = −(1/(λ vol B)) Σ_{Yᵢ ∈ B} log f̂_{B′+Yᵢ}(ξᵢ)`.
///
/// With `B′ = B` one density `f̂_B` serves every point. Otherwise each
/// translate `B′ + Yᵢ` is clipped to the observation window of `system`, and
/// the normalization uses the clipped volume.
pub fn entropy_plain(system: &FibreSystem, cfg: &EstimatorConfig) -> Result<EntropyEstimate> {
    cfg.validate()?;
    let targets = points_in(system, cfg);
    if targets.is_empty() {
        return Err(Error::EmptyRegion(format!("no points in estimation window {}", cfg.window)));
    }
    let norm = cfg.intensity * cfg.window.volume();
    let values = if cfg.uses_whole_window() {
        DensityField::new(system, cfg).at_own_marks()
    } else {
        translated_densities(system, cfg, &targets)
    };
    Ok(entropy_from_densities(&values, norm))
}

/// Modified estimator: the density comes from `system`, the sum runs over
/// the points of the independent `copy` in `B`.
pub fn entropy_modified(
    system: &FibreSystem,
    copy: &FibreSystem,
    cfg: &EstimatorConfig,
) -> Result<EntropyEstimate> {
    cfg.validate()?;
    let targets = points_in(copy, cfg);
    if targets.is_empty() {
        return Err(Error::EmptyRegion(format!("no copy points in estimation window {}", cfg.window)));
    }
    let norm = cfg.intensity * cfg.window.volume();
    let values = if cfg.uses_whole_window() {
        let field = DensityField::new(system, cfg);
        let etas: Vec<UnitVector3> = targets.iter().map(|p| p.mark).collect();
        field.eval_many(&etas)
    } else {
        translated_densities(system, cfg, &targets)
    };
    let mut est = entropy_from_densities(&values, norm);
    est.diagnostics.degenerate_copy = targets == points_in(system, cfg);
    Ok(est)
}

/// `f̂_{(B′+Y) ∩ W}(ξ)` for each target `(Y, ξ)`, with `W` the window of `system`.
fn translated_densities(system: &FibreSystem, cfg: &EstimatorConfig, targets: &[MarkedPoint]) -> Vec<f64> {
    let evaluator = cfg.evaluator();
    let locations = system.locations();
    let observed = system.window().as_box();
    let grid = PointGrid::build(&locations, observed, (0.5 * cfg.sub_window.side).max(1e-6));
    let points = system.points();
    targets
        .par_iter()
        .map_init(MarkColumns::default, |scratch, t| {
            let window = cfg.sub_window.translate(t.location).as_box();
            match window.intersection(&observed) {
                Some(clipped) => {
                    local_density(&evaluator, &grid, &locations, points, &clipped, t.mark, cfg.intensity, scratch)
                }
                None => 0.0,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn local_density(
    evaluator: &KernelEvaluator,
    grid: &PointGrid,
    locations: &[Point3],
    points: &[MarkedPoint],
    window: &Aabb,
    eta: UnitVector3,
    intensity: f64,
    scratch: &mut MarkColumns,
) -> f64 {
    let vol = window.volume();
    if vol <= 0.0 {
        return 0.0;
    }
    scratch.clear();
    grid.for_each_in(locations, window, |i| scratch.push(points[i].mark));
    evaluator.sum(eta, scratch) / (intensity * vol)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::directional::{DirectionalModel, RandomStream};
    use crate::estimation::kernel::KernelKind;
    use crate::estimation::{density_estimate, Kernel};
    use crate::geometry::Cube;
    use crate::process::simulate_homogeneous;

    fn cube(o: f64, s: f64) -> Cube {
        Cube::new(Point3::splat(o), s).unwrap()
    }

    #[test]
    fn single_point_closed_form() {
        let w = cube(0.0, 2.0);
        let sys = FibreSystem::new(w, 3.0, vec![MarkedPoint::new(Point3::splat(1.0), UnitVector3::E2)]).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 3.0, w).unwrap();
        let f = Kernel::new(KernelKind::Tricube).eval(0.0) / (3.0 * 8.0 * cfg.bandwidth.powi(2));
        let e = entropy_plain(&sys, &cfg).unwrap();
        assert!((e.value - (-f.ln() / 24.0)).abs() < 1e-12, "{}", e.value);
        assert_eq!(e.diagnostics.points, 1);
    }

    #[test]
    fn empty_window_is_an_error() {
        let w = cube(0.0, 2.0);
        let sys = FibreSystem::new(w, 3.0, vec![]).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 3.0, w).unwrap();
        assert!(matches!(entropy_plain(&sys, &cfg), Err(Error::EmptyRegion(_))));
        let other = FibreSystem::new(w, 3.0, vec![MarkedPoint::new(Point3::splat(1.0), UnitVector3::E2)]).unwrap();
        assert!(entropy_modified(&other, &sys, &cfg).is_err());
    }

    #[test]
    fn fast_paths_agree_with_direct_formula() {
        let w = cube(0.0, 6.0);
        let model = DirectionalModel::fisher(UnitVector3::E3, 2.0).unwrap();
        let sys = simulate_homogeneous(&w, 15.0, &model, &RandomStream::new(3, 0)).unwrap();
        assert!(sys.len() > INDEX_MIN);
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 15.0, w).unwrap();
        let field = DensityField::new(&sys, &cfg);
        let own = field.at_own_marks();
        for (i, p) in sys.points().iter().enumerate().step_by(211) {
            let direct = density_estimate(&sys, &cfg, p.mark);
            assert!((own[i] - direct).abs() <= 1e-11 * direct, "{} vs {direct}", own[i]);
            assert!((field.eval(p.mark) - direct).abs() <= 1e-11 * direct);
        }
        let direct_entropy = -sys
            .points()
            .iter()
            .map(|p| density_estimate(&sys, &cfg, p.mark).ln())
            .sum::<f64>()
            / (15.0 * w.volume());
        let e = entropy_plain(&sys, &cfg).unwrap();
        assert!((e.value - direct_entropy).abs() < 1e-10);
    }

    const INDEX_MIN: usize = super::super::density::INDEX_THRESHOLD;

    #[test]
    fn translated_windows_are_clipped() {
        let w = cube(0.0, 5.0);
        let sys = simulate_homogeneous(&w, 10.0, &DirectionalModel::uniform(), &RandomStream::new(4, 0)).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Epanechnikov, 10.0, w)
            .unwrap()
            .with_sub_window(cube(0.0, 2.0))
            .unwrap();
        let e = entropy_plain(&sys, &cfg).unwrap();
        // Direct evaluation for comparison.
        let kernel = cfg.kernel();
        let mut total = 0.0;
        for p in sys.points() {
            let b = cfg.sub_window.translate(p.location).as_box().intersection(&w.as_box()).unwrap();
            let s: f64 = sys
                .points()
                .iter()
                .filter(|q| b.contains(q.location))
                .map(|q| crate::estimation::summand_exact(&kernel, cfg.bandwidth, geodesic(p.mark, q.mark)))
                .sum();
            total += (s / (10.0 * b.volume())).max(LOG_FLOOR).ln();
        }
        assert!((e.value + total / (10.0 * 125.0)).abs() < 1e-10);
    }

    fn geodesic(a: UnitVector3, b: UnitVector3) -> f64 {
        crate::geometry::geodesic_distance(a, b)
    }

    #[test]
    fn degenerate_copy_is_flagged_and_matches_plain() {
        let w = cube(0.0, 4.0);
        let sys = simulate_homogeneous(&w, 5.0, &DirectionalModel::uniform(), &RandomStream::new(5, 0)).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 5.0, w).unwrap();
        let m = entropy_modified(&sys, &sys, &cfg).unwrap();
        let p = entropy_plain(&sys, &cfg).unwrap();
        assert!(m.diagnostics.degenerate_copy);
        assert!((m.value - p.value).abs() < 1e-12);
        let copy = simulate_homogeneous(&w, 5.0, &DirectionalModel::uniform(), &RandomStream::new(6, 0)).unwrap();
        assert!(!entropy_modified(&sys, &copy, &cfg).unwrap().diagnostics.degenerate_copy);
    }

    #[test]
    fn isolated_marks_are_clamped_and_flagged() {
        let w = cube(0.0, 4.0);
        let sys = simulate_homogeneous(&w, 1.0, &DirectionalModel::uniform(), &RandomStream::new(7, 0)).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 1.0, w)
            .unwrap()
            .with_sub_window(cube(0.0, 0.01))
            .unwrap();
        let copy = simulate_homogeneous(&w, 1.0, &DirectionalModel::uniform(), &RandomStream::new(8, 0)).unwrap();
        let e = entropy_modified(&sys, &copy, &cfg).unwrap();
        assert_eq!(e.diagnostics.clamped, e.diagnostics.points);
        assert!(e.diagnostics.unreliable);
        assert!((e.value - e.diagnostics.points as f64 * -LOG_FLOOR.ln() / 64.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_invariance() {
        let w = cube(0.0, 5.0);
        let model = DirectionalModel::schladitz(2.0).unwrap();
        let sys = simulate_homogeneous(&w, 8.0, &model, &RandomStream::new(9, 0)).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rotated: Vec<MarkedPoint> = sys
            .points()
            .iter()
            .map(|p| {
                let m = p.mark;
                let v = UnitVector3::normalize(c * m.x() - s * m.y(), s * m.x() + c * m.y(), m.z()).unwrap();
                MarkedPoint::new(p.location, v)
            })
            .collect();
        let rsys = FibreSystem::new(w, 8.0, rotated).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Biweight, 8.0, w).unwrap();
        let a = entropy_plain(&sys, &cfg).unwrap().value;
        let b = entropy_plain(&rsys, &cfg).unwrap().value;
        assert!((a - b).abs() < 1e-9, "{a} {b}");
        assert!(a < (4.0 * PI).ln() + 0.5);
    }
}
