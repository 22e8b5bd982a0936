//! Sample summaries for replicated runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Moments of a sample and its Kolmogorov–Smirnov distance to `N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
    /// Asymptotic p-value of the KS distance (Stephens' small-sample correction).
    pub ks_p_value: f64,
}

impl SampleSummary {
    pub fn new(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Numerical(format!("need at least 2 values, got {n}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sample contains non-finite values".into()));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
        let (m2, m3, m4) = (central(2), central(3), central(4));
        let variance = m2 * nf / (nf - 1.0);
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        let ks_distance = ks_distance_normal(values);
        Ok(Self {
            n,
            mean,
            variance,
            skewness,
            excess_kurtosis,
            ks_distance,
            ks_p_value: kolmogorov_p_value(ks_distance, n),
        })
    }
}

/// `sup |F_n − Φ|` for the standard normal `Φ`.
pub fn ks_distance_normal(values: &[f64]) -> f64 {
    let phi = Normal::standard();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = phi.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// `P(D_n > d)` from the Kolmogorov limit law at `(√n + 0.12 + 0.11/√n) d`.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
