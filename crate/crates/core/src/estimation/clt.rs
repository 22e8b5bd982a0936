use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EstimatorConfig;
use super::entropy::LOG_FLOOR;
use crate::directional::{DirectionalModel, RandomStream};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Cube, Point3, SphereGrid, UnitVector3};
use crate::process::simulate_homogeneous;

pub const DEFAULT_REPLICATIONS: usize = 180;
pub const DEFAULT_COV_LATTICE: usize = 343;

/// Sphere nodes used for the expectation over the copy's mark.
pub const CLT_SPHERE_NODES: usize = 1024;

/// Centering and scale for the modified entropy estimator.
///
/// `mean_term` estimates `E[−log f̂_{B′}(ξ*₀)]`; `mu` is the centering for
/// the expected point count, and [`CltNormalization::with_count`] rescales it
/// to an observed count. `sigma² = var_term / λ + cov_integral`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltNormalization {
    pub mu: f64,
    pub sigma: f64,
    pub mean_term: f64,
    /// `Var(log f̂_{B′}(ξ*₀))`.
    pub var_term: f64,
    /// `∫ Cov(E[log f̂_{B′}(ξ*₀) | Π], E[log f̂_{B′+y}(ξ*_y) | Π]) dy`.
    pub cov_integral: f64,
    pub replications: usize,
    pub cov_lattice: usize,
}

impl CltNormalization {
    /// Centering `#(Π* ∩ B) / (λ vol B) · mean_term` for an observed copy count.
    pub fn with_count(mut self, count: usize, intensity: f64, vol_b: f64) -> Self {
        self.mu = self.centering(count, intensity, vol_b);
        self
    }

    pub fn centering(&self, count: usize, intensity: f64, vol_b: f64) -> f64 {
        count as f64 / (intensity * vol_b) * self.mean_term
    }
}

/// `√(vol B) (Ê* − μ̂) / σ`.
pub fn standardized_statistic(estimate: f64, norm: &CltNormalization, vol_b: f64) -> f64 {
    vol_b.sqrt() * (estimate - norm.mu) / norm.sigma
}

/// Monte Carlo normalization for the modified estimator.
///
/// Each replication simulates the original process on a cube of side `2b′`
/// (`b′` the side of `cfg.sub_window`), chopped into cells of side
/// `b′ / (2m)` with `m³ = cov_lattice`. Densities `f̂_{B′+y}` are then read
/// off for every window anchored on the half-cell lattice: the 8 corner
/// anchors and the `m³` anchors at odd half-steps. A window at a corner and
/// one shifted by the midpoint lag `(2j+1)` half-cells give the covariance
/// at the `j`-th node of the `m³` midpoint rule on `(0, b′)³`; reflection
/// symmetry covers the other octants.
///
/// Expectations over the copy's mark use a randomly rotated equal-area
/// grid, weighted by the true density of `model`. The count fluctuation
/// `n = N/(λ vol B′) − 1` serves as a control variate: it has mean 0 and its
/// covariance integrates exactly to `1/λ`.
pub fn clt_normalize(
    cfg: &EstimatorConfig,
    model: &DirectionalModel,
    replications: usize,
    cov_lattice: usize,
    rng: &RandomStream,
) -> Result<CltNormalization> {
    cfg.validate()?;
    if replications < 2 {
        return Err(invalid(format!("at least 2 replications are needed, got {replications}")));
    }
    let m = (cov_lattice as f64).cbrt().round() as usize;
    if m == 0 || m * m * m != cov_lattice {
        return Err(invalid(format!("covariance lattice size {cov_lattice} is not a perfect cube")));
    }
    let layout = Layout::new(cfg.sub_window.side, m);
    let grid = SphereGrid::equal_area(CLT_SPHERE_NODES);
    let evaluator = cfg.evaluator();
    let lambda = cfg.intensity;

    let reps: Vec<Replication> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.substream("replication", r);
            let region = Cube::new(Point3::splat(0.0), 2.0 * layout.side)?;
            let system = simulate_homogeneous(&region, lambda, model, &stream.substream("original", 0))?;
            let rotation = random_rotation(&mut stream);
            Ok(layout.replicate(&system, &grid, &rotation, model, &evaluator, lambda))
        })
        .collect::<Result<_>>()?;

    let n_windows = layout.windows.len();
    let total = (replications * n_windows) as f64;
    let mean_term = reps.iter().flat_map(|r| &r.windows).map(|w| w.phi + w.n).sum::<f64>() / total;
    let second = reps.iter().flat_map(|r| &r.windows).map(|w| w.phi2).sum::<f64>() / total;
    let var_term = second - mean_term * mean_term;

    let mut lag_sum = 0.0;
    for r in &reps {
        for (c, partners) in layout.pairs.iter().enumerate() {
            let a = &r.windows[c];
            for &p in partners {
                let b = &r.windows[p];
                lag_sum += (a.phi - mean_term) * (b.phi - mean_term) - a.n * b.n;
            }
        }
    }
    let per_lag = lag_sum / (replications * layout.pairs.len()) as f64;
    let cell = layout.side.powi(3) / cov_lattice as f64;
    let cov_integral = 8.0 * cell * per_lag + 1.0 / lambda;
    let sigma2 = var_term / lambda + cov_integral;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Numerical(format!(
            "non-positive CLT variance {sigma2:.3e}; increase the number of replications"
        )));
    }
    Ok(CltNormalization {
        mu: mean_term,
        sigma: sigma2.sqrt(),
        mean_term,
        var_term,
        cov_integral,
        replications,
        cov_lattice,
    })
}

#[derive(Clone, Copy, Debug, Default)]
struct WindowMoments {
    /// `E[−log f̂ | Π]` over the mark law.
    phi: f64,
    phi2: f64,
    /// Relative count excess of the window.
    n: f64,
}

struct Replication {
    windows: Vec<WindowMoments>,
}

struct Layout {
    side: f64,
    /// Cells per axis over the `2b′` region.
    cells: usize,
    /// Cells per window side.
    span: usize,
    /// Window anchors in cell units: corners first.
    windows: Vec<[usize; 3]>,
    /// For each corner, the indices of its midpoint-lag partners.
    pairs: Vec<Vec<usize>>,
}

impl Layout {
    fn new(side: f64, m: usize) -> Self {
        let span = 2 * m;
        let mut windows = Vec::with_capacity(8 + m * m * m);
        for c in 0..8 {
            windows.push([0, 1, 2].map(|k| if c >> k & 1 == 1 { span } else { 0 }));
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    windows.push([2 * i + 1, 2 * j + 1, 2 * k + 1]);
                }
            }
        }
        let pairs = (0..8)
            .map(|c| {
                let corner = windows[c];
                let mut partners = Vec::with_capacity(m * m * m);
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            let target = [i, j, k]
                                .iter()
                                .zip(corner)
                                .map(|(&l, a)| if a == 0 { 2 * l + 1 } else { a - (2 * l + 1) })
                                .collect::<Vec<_>>();
                            let (ti, tj, tk) = ((target[0] - 1) / 2, (target[1] - 1) / 2, (target[2] - 1) / 2);
                            partners.push(8 + (ti * m + tj) * m + tk);
                        }
                    }
                }
                partners
            })
            .collect();
        Self { side, cells: 2 * span, span, windows, pairs }
    }

    fn replicate(
        &self,
        system: &crate::process::FibreSystem,
        grid: &SphereGrid,
        rotation: &[[f64; 3]; 3],
        model: &DirectionalModel,
        evaluator: &super::fast::KernelEvaluator,
        lambda: f64,
    ) -> Replication {
        let n = self.cells;
        let cell_side = 2.0 * self.side / n as f64;
        let cell_of = |p: Point3| -> usize {
            let idx = |v: f64| ((v / cell_side) as usize).min(n - 1);
            (idx(p.x) * n + idx(p.y)) * n + idx(p.z)
        };
        let cells: Vec<usize> = system.points().iter().map(|p| cell_of(p.location)).collect();
        let vol = self.side.powi(3);

        let mut counts = vec![0.0; n * n * n];
        for &c in &cells {
            counts[c] += 1.0;
        }
        let count_prefix = prefix_sums(&counts, n);
        let mut windows: Vec<WindowMoments> = self
            .windows
            .iter()
            .map(|&a| WindowMoments {
                n: window_sum(&count_prefix, n, a, self.span) / (lambda * vol) - 1.0,
                ..Default::default()
            })
            .collect();

        let mut sums = vec![0.0; n * n * n];
        let mut weight_total = 0.0;
        for (node, &w) in grid.nodes().iter().zip(grid.weights()) {
            let eta = rotate(rotation, *node);
            let wf = w * model.density(eta);
            if wf <= 0.0 {
                continue;
            }
            weight_total += wf;
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (p, &c) in system.points().iter().zip(&cells) {
                sums[c] += evaluator.eval(eta, p.mark);
            }
            let prefix = prefix_sums(&sums, n);
            for (win, &a) in windows.iter_mut().zip(&self.windows) {
                let f = window_sum(&prefix, n, a, self.span) / (lambda * vol);
                let phi = -f.max(LOG_FLOOR).ln();
                win.phi += wf * phi;
                win.phi2 += wf * phi * phi;
            }
        }
        for win in &mut windows {
            win.phi /= weight_total;
            win.phi2 /= weight_total;
        }
        Replication { windows }
    }
}

/// Inclusive 3D prefix sums with a zero border: `(n+1)³` entries.
fn prefix_sums(values: &[f64], n: usize) -> Vec<f64> {
    let m = n + 1;
    let mut p = vec![0.0; m * m * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let at = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
                p[at(i + 1, j + 1, k + 1)] = values[(i * n + j) * n + k]
                    + p[at(i, j + 1, k + 1)]
                    + p[at(i + 1, j, k + 1)]
                    + p[at(i + 1, j + 1, k)]
                    - p[at(i, j, k + 1)]
                    - p[at(i, j + 1, k)]
                    - p[at(i + 1, j, k)]
                    + p[at(i, j, k)];
            }
        }
    }
    p
}

fn window_sum(prefix: &[f64], n: usize, a: [usize; 3], span: usize) -> f64 {
    let m = n + 1;
    let at = |x: usize, y: usize, z: usize| prefix[(x * m + y) * m + z];
    let [x0, y0, z0] = a;
    let [x1, y1, z1] = [x0 + span, y0 + span, z0 + span];
    at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
        + at(x1, y0, z0)
        - at(x0, y0, z0)
}

/// Uniformly distributed rotation matrix from a normalized Gaussian quaternion.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = [0.0; 4];
    let mut norm = 0.0;
    while norm < 1e-12 {
        q = [0; 4].map(|_| rng.sample(StandardNormal));
        norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(r: &[[f64; 3]; 3], v: UnitVector3) -> UnitVector3 {
    let [x, y, z] = v.to_array();
    let row = |k: usize| r[k][0] * x + r[k][1] * y + r[k][2] * z;
    UnitVector3::normalize(row(0), row(1), row(2)).unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::KernelKind;

    #[test]
    fn prefix_window_sums_match_direct_sums() {
        let n = 6;
        let values: Vec<f64> = (0..n * n * n).map(|i| ((i * 37) % 11) as f64).collect();
        let p = prefix_sums(&values, n);
        for a in [[0, 0, 0], [1, 2, 3], [3, 3, 3]] {
            let mut direct = 0.0;
            for i in a[0]..a[0] + 3 {
                for j in a[1]..a[1] + 3 {
                    for k in a[2]..a[2] + 3 {
                        direct += values[(i * n + j) * n + k];
                    }
                }
            }
            assert_eq!(window_sum(&p, n, a, 3), direct);
        }
    }

    #[test]
    fn corner_partners_sit_at_midpoint_lags() {
        let m = 3;
        let layout = Layout::new(1.0, m);
        assert_eq!(layout.windows.len(), 8 + 27);
        for (c, partners) in layout.pairs.iter().enumerate() {
            let corner = layout.windows[c];
            let mut lags: Vec<[usize; 3]> = partners
                .iter()
                .map(|&p| {
                    let w = layout.windows[p];
                    [0, 1, 2].map(|k| w[k].abs_diff(corner[k]))
                })
                .collect();
            lags.sort();
            lags.dedup();
            assert_eq!(lags.len(), 27);
            assert!(lags.iter().all(|l| l.iter().all(|&v| v % 2 == 1 && v < 2 * m)));
        }
    }

    #[test]
    fn rotations_are_orthonormal() {
        let mut rng = RandomStream::new(1, 0);
        for _ in 0..10 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let w = Cube::at_origin(10.0).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 5.0, w)
            .unwrap()
            .with_sub_window(Cube::at_origin(2.0).unwrap())
            .unwrap();
        let rng = RandomStream::new(0, 0);
        let u = DirectionalModel::uniform();
        assert!(clt_normalize(&cfg, &u, 1, 343, &rng).is_err());
        assert!(clt_normalize(&cfg, &u, 10, 300, &rng).is_err());
    }

    #[test]
    fn normalization_is_dominated_by_the_count_term() {
        let w = Cube::at_origin(10.0).unwrap();
        let cfg = EstimatorConfig::new(KernelKind::Tricube, 20.0, w)
            .unwrap()
            .with_sub_window(Cube::at_origin(2.0).unwrap())
            .unwrap();
        let n = clt_normalize(&cfg, &DirectionalModel::uniform(), 8, 27, &RandomStream::new(2, 0)).unwrap();
        assert!(n.sigma > 0.0);
        // −log f̂ sits just above log 4π (Jensen) for uniform marks.
        let h = (4.0 * std::f64::consts::PI).ln();
        assert!(n.mean_term > h && n.mean_term < h + 0.2, "{}", n.mean_term);
        assert!(n.var_term > 0.0);
        let s2 = n.sigma * n.sigma;
        assert!(s2 > 0.5 / 20.0 && s2 < 2.0 / 20.0, "{s2}");
        let same = clt_normalize(&cfg, &DirectionalModel::uniform(), 8, 27, &RandomStream::new(2, 0)).unwrap();
        assert_eq!(n, same);
    }

    #[test]
    fn standardized_statistic_is_linear() {
        let n = CltNormalization {
            mu: 2.0,
            sigma: 0.5,
            mean_term: 2.0,
            var_term: 0.0,
            cov_integral: 0.25,
            replications: 2,
            cov_lattice: 1,
        };
        assert_eq!(standardized_statistic(2.0, &n, 100.0), 0.0);
        let doubled = CltNormalization { sigma: 1.0, ..n };
        assert_eq!(standardized_statistic(2.5, &n, 4.0), 2.0 * standardized_statistic(2.5, &doubled, 4.0));
        assert_eq!(n.with_count(50, 2.0, 50.0).mu, 1.0);
    }
}
