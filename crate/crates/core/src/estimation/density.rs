use rayon::prelude::*;

use super::config::EstimatorConfig;
use super::fast::{summand_exact, KernelEvaluator, MarkColumns, MarkIndex};
use crate::directional::DirectionalModel;
use crate::geometry::{geodesic_distance, SphereGrid, UnitVector3};
use crate::process::FibreSystem;

/// Below this many marks kernel sums scan every mark instead of building an index.
pub(crate) const INDEX_THRESHOLD: usize = 2048;

/// `f̂_B(η)` from the points of `system` in `cfg.window`, by the direct formula.
///
/// This is the reference implementation; [`DensityField`] gives the same
/// values (to rounding) much faster when many directions are needed.
pub fn density_estimate(system: &FibreSystem, cfg: &EstimatorConfig, eta: UnitVector3) -> f64 {
    let kernel = cfg.kernel();
    let h = cfg.bandwidth;
    let sum: f64 = system
        .points()
        .iter()
        .filter(|p| cfg.window.contains(p.location))
        .map(|p| summand_exact(&kernel, h, geodesic_distance(eta, p.mark)))
        .sum();
    sum / (cfg.intensity * cfg.window.volume())
}

/// The density estimate `f̂_B` of a fixed set of marks, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct DensityField {
    evaluator: KernelEvaluator,
    marks: MarkColumns,
    index: Option<MarkIndex>,
    norm: f64,
}

impl DensityField {
    /// Density from the marks of the points of `system` in `cfg.window`.
    pub fn new(system: &FibreSystem, cfg: &EstimatorConfig) -> Self {
        let marks: MarkColumns = system
            .points()
            .iter()
            .filter(|p| cfg.window.contains(p.location))
            .map(|p| p.mark)
            .collect();
        Self::from_marks(marks, cfg.evaluator(), cfg.intensity * cfg.window.volume())
    }

    /// Density `Σ g(η, ξⱼ) / norm`, where `norm = λ vol(B)`.
    pub fn from_marks(marks: MarkColumns, evaluator: KernelEvaluator, norm: f64) -> Self {
        let index = (marks.len() >= INDEX_THRESHOLD).then(|| MarkIndex::new(&marks, evaluator.bandwidth()));
        Self { evaluator, marks, index, norm }
    }

    pub fn count(&self) -> usize {
        self.marks.len()
    }

    pub fn marks(&self) -> &MarkColumns {
        &self.marks
    }

    pub fn eval(&self, eta: UnitVector3) -> f64 {
        let sum = match &self.index {
            Some(index) => index.sum(&self.evaluator, eta),
            None => self.evaluator.sum(eta, &self.marks),
        };
        sum / self.norm
    }

    /// Values at many directions, in order.
    pub fn eval_many(&self, etas: &[UnitVector3]) -> Vec<f64> {
        etas.par_iter().map(|&eta| self.eval(eta)).collect()
    }

    /// Values at the marks the density was built from (each mark counts itself).
    pub fn at_own_marks(&self) -> Vec<f64> {
        let sums = match &self.index {
            Some(index) => index.self_sums(&self.evaluator),
            None => (0..self.marks.len())
                .into_par_iter()
                .map(|i| self.evaluator.sum(self.marks.get(i), &self.marks))
                .collect(),
        };
        sums.into_iter().map(|s| s / self.norm).collect()
    }
}

/// `max_{η ∈ grid} |f̂(η) − f(η)|`.
pub fn density_sup_error(
    estimate: impl Fn(UnitVector3) -> f64 + Sync,
    model: &DirectionalModel,
    grid: &SphereGrid,
) -> f64 {
    grid.nodes()
        .par_iter()
        .map(|&eta| (estimate(eta) - model.density(eta)).abs())
        .reduce(|| 0.0, f64::max)
}
