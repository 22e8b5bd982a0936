use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fast::KernelEvaluator;
use super::kernel::{default_bandwidth, Kernel, KernelKind};
use crate::error::{invalid, Result};
use crate::geometry::Cube;

/// Settings shared by the density and entropy estimators.
///
/// `sub_window` is the window `B′` whose translates `B′ + Y` hold the points
/// used for the density at `Y`; when it equals `window` the density is
/// estimated once from all points in `B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kernel: KernelKind,
    /// Bandwidth `h` in radians.
    pub bandwidth: f64,
    /// Intensity `λ` of the point process (points per unit volume).
    pub intensity: f64,
    pub window: Cube,
    pub sub_window: Cube,
}

impl EstimatorConfig {
    /// Config with the default bandwidth for `window` and `B′ = B`.
    pub fn new(kernel: KernelKind, intensity: f64, window: Cube) -> Result<Self> {
        let cfg = Self {
            kernel,
            bandwidth: default_bandwidth(window.volume()),
            intensity,
            window,
            sub_window: window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_bandwidth(mut self, h: f64) -> Result<Self> {
        self.bandwidth = h;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sub_window(mut self, sub_window: Cube) -> Result<Self> {
        self.sub_window = sub_window;
        self.validate()?;
        Ok(self)
    }

    pub fn with_intensity(mut self, intensity: f64) -> Result<Self> {
        self.intensity = intensity;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth < PI) {
            return Err(invalid(format!("bandwidth must lie in (0, π), got {}", self.bandwidth)));
        }
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return Err(invalid(format!("intensity must be positive, got {}", self.intensity)));
        }
        if self.window.side <= 0.0 {
            return Err(invalid(format!("estimation window {} has no volume", self.window)));
        }
        if self.sub_window.side <= 0.0 {
            return Err(invalid(format!("density window {} has no volume", self.sub_window)));
        }
        if !self.window.contains_cube(&self.sub_window) {
            return Err(invalid(format!(
                "density window {} must lie inside the estimation window {}",
                self.sub_window, self.window
            )));
        }
        Ok(())
    }

    pub fn uses_whole_window(&self) -> bool {
        self.sub_window == self.window
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::new(self.kernel)
    }

    pub fn evaluator(&self) -> KernelEvaluator {
        KernelEvaluator::new(self.kernel(), self.bandwidth)
    }
}
