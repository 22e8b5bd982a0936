use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Radial kernel shapes on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Uniform,
    Epanechnikov,
    Biweight,
    Triweight,
    Tricube,
    Triangular,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Biweight,
        KernelKind::Epanechnikov,
        KernelKind::Triangular,
        KernelKind::Tricube,
        KernelKind::Triweight,
        KernelKind::Uniform,
    ];

    /// Unnormalized shape on `[0, 1]`, zero above 1.
    pub fn shape(self, t: f64) -> f64 {
        if t > 1.0 {
            return 0.0;
        }
        self.polynomial(t)
    }

    /// The polynomial that defines the shape, evaluated without the support
    /// cutoff; `t` may be negative (used for analytic continuation).
    pub(crate) fn polynomial(self, t: f64) -> f64 {
        match self {
            KernelKind::Uniform => 1.0,
            KernelKind::Epanechnikov => 1.0 - t * t,
            KernelKind::Biweight => (1.0 - t * t).powi(2),
            KernelKind::Triweight => (1.0 - t * t).powi(3),
            KernelKind::Tricube => (1.0 - t * t * t).powi(3),
            KernelKind::Triangular => 1.0 - t,
        }
    }

    /// `∫₀¹ t·shape(t) dt`, from the polynomial coefficients.
    pub fn first_moment(self) -> f64 {
        match self {
            KernelKind::Uniform => 1.0 / 2.0,
            KernelKind::Epanechnikov => 1.0 / 4.0,
            KernelKind::Biweight => 1.0 / 6.0,
            KernelKind::Triweight => 1.0 / 8.0,
            // 1/2 - 3/5 + 3/8 - 1/11
            KernelKind::Tricube => 81.0 / 440.0,
            KernelKind::Triangular => 1.0 / 6.0,
        }
    }

    /// True when the shape is a polynomial in `t²`.
    pub(crate) fn is_even(self) -> bool {
        !matches!(self, KernelKind::Tricube | KernelKind::Triangular)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Uniform => "uniform",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Biweight => "biweight",
            KernelKind::Triweight => "triweight",
            KernelKind::Tricube => "tricube",
            KernelKind::Triangular => "triangular",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A kernel `K(t) = c · shape(t)` normalized so that `2π ∫₀¹ t K(t) dt = 1`.
///
/// With this constant every summand of the density estimator integrates to
/// one over the sphere: in geodesic polar coordinates the area element
/// `sin r dr dφ` cancels the `1/θ = r / sin r` correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    constant: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Self {
        Self { kind, constant: 1.0 / (2.0 * PI * kind.first_moment()) }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.constant * self.kind.shape(t)
    }
}

impl From<KernelKind> for Kernel {
    fn from(kind: KernelKind) -> Self {
        Kernel::new(kind)
    }
}

/// `K(t)`; zero outside the support `[0, 1]`.
pub fn kernel_eval(kernel: &Kernel, t: f64) -> f64 {
    kernel.eval(t)
}

/// Bandwidth `((1 + v) / v^{10/9})^{1/4}` for a window of volume `v`, clamped into `(0, π)`.
pub fn default_bandwidth(vol_b: f64) -> f64 {
    let h = ((1.0 + vol_b) / vol_b.powf(10.0 / 9.0)).powf(0.25);
    h.clamp(f64::MIN_POSITIVE, PI * (1.0 - f64::EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussRule;

    #[test]
    fn normalization_by_independent_quadrature() {
        let rule = GaussRule::new(20);
        for kind in KernelKind::ALL {
            let k = Kernel::new(kind);
            // Shapes are polynomials of degree ≤ 9 on [0, 1]; 20 nodes are exact.
            let m = 2.0 * PI * rule.integrate(0.0, 1.0, |t| t * k.eval(t));
            assert!((m - 1.0).abs() < 1e-12, "{kind}: {m}");
        }
    }

    #[test]
    fn tricube_moment_by_midpoint_sum() {
        let n = 1_000_000;
        let s: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                t * (1.0 - t * t * t).powi(3)
            })
            .sum::<f64>()
            / n as f64;
        assert!((s - 0.184_090_909_090_909).abs() < 1e-11, "{s}");
    }

    #[test]
    fn kernel_values() {
        for kind in KernelKind::ALL {
            assert_eq!(kernel_eval(&Kernel::new(kind), 1.5), 0.0);
        }
        assert!((kernel_eval(&Kernel::new(KernelKind::Uniform), 0.5) - 1.0 / PI).abs() < 1e-15);
        assert!((Kernel::new(KernelKind::Tricube).constant() - 0.864_545_369_881_901).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_values() {
        assert!((default_bandwidth(1.0) - 2f64.powf(0.25)).abs() < 1e-15);
        assert!((default_bandwidth(125_000.0) - 0.721_805_247_249_87).abs() < 1e-12);
        // h ~ v^{-1/36} for large v.
        assert!(default_bandwidth(1e72) < 0.02 && default_bandwidth(1e72) > 0.0);
        assert!(default_bandwidth(1e9) < default_bandwidth(1e6));
        assert!(default_bandwidth(1e-9) < PI);
    }
}
