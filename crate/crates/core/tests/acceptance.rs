//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Built with `harness = false`; `cargo test --test acceptance` runs it.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

use fibrescan::cli::{clt_study, oracle_grid, CltParams};
use fibrescan::detection::{
    detect, detection_quality, dvol_bound, dvol_estimate, excursion_set, optimal_scan_width, robust_stats,
    OptimalWidthInput, ScanConfig, ScanField, ScanStats, ScanValue,
};
use fibrescan::directional::{true_entropy, DirectionalModel, RandomStream};
use fibrescan::estimation::{
    density_sup_error, entropy_plain, DensityField, EstimatorConfig, Kernel, KernelKind,
};
use fibrescan::geometry::{sphere_integrate, Cube, Lattice, Point3, Region, SphereGrid, UnitVector3};
use fibrescan::process::{simulate_homogeneous, simulate_with_inhomogeneity, FibreSystem, InhomogeneitySpec};
use fibrescan::stats::SampleSummary;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

// 1. Optimal scanning window width.
fn optimal_width() -> Outcome {
    let b = optimal_scan_width(&OptimalWidthInput { a: 1.0, w: 7.0, alpha_f: 0.05 }).unwrap();
    let mut rng = RandomStream::new(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = rng.random_range(0.1..10.0);
        let w = a * rng.random_range(1.05..20.0);
        let alpha_f = rng.random_range(0.01..0.2);
        let closed = optimal_scan_width(&OptimalWidthInput { a, w, alpha_f }).unwrap().b;
        let numeric = golden_section(|b| dvol_bound(a, b, w, alpha_f), -a, w);
        worst = worst.max((closed - numeric).abs());
    }
    outcome(
        (b.b - 0.489).abs() <= 1e-3 && b.valid && worst <= 1e-6,
        format!("b(1,7,0.05) = {:.6}; max |closed form − numeric argmin| over 100 triples = {worst:.2e}", b.b),
    )
}

/// Minimizer of a unimodal function on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-11 * (1.0 + hi.abs()) {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

// 2. Kernel normalization by composite Simpson quadrature.
fn kernel_normalization() -> Outcome {
    let n = 20_000;
    let mut worst: f64 = 0.0;
    for kind in KernelKind::ALL {
        let k = Kernel::new(kind);
        let h = 1.0 / n as f64;
        let mut s = k.eval(1.0);
        for i in 1..n {
            let t = i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * t * k.eval(t);
        }
        let integral = 2.0 * PI * s * h / 3.0;
        worst = worst.max((integral - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("max |2π∫₀¹ tK(t)dt − 1| over six kernels = {worst:.2e}"))
}

// 3. Mass identity of the density estimate.
fn mass_identity() -> Outcome {
    let grid = SphereGrid::gauss_product(512, 1024);
    let mut rng = RandomStream::new(103, 0);
    let mut worst: f64 = 0.0;
    for c in 0..20 {
        let kind = KernelKind::ALL[c % KernelKind::ALL.len()];
        let side = rng.random_range(1.0..4.0);
        let intensity = rng.random_range(2.0..20.0);
        let window = Cube::at_origin(side).unwrap();
        let outer = Cube::new(Point3::splat(-0.5), side + 1.0).unwrap();
        let model = match c % 3 {
            0 => DirectionalModel::uniform(),
            1 => DirectionalModel::fisher(UnitVector3::E1, 5.0).unwrap(),
            _ => DirectionalModel::schladitz(0.3).unwrap(),
        };
        let system = simulate_homogeneous(&outer, intensity, &model, &rng.substream("config", c as u64)).unwrap();
        let h = rng.random_range(0.15..2.0);
        let cfg = EstimatorConfig::new(kind, intensity, window).unwrap().with_bandwidth(h).unwrap();
        let field = DensityField::new(&system, &cfg);
        let values = field.eval_many(grid.nodes());
        let mass: f64 = values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum();
        let want = field.count() as f64 / (intensity * window.volume());
        worst = worst.max((mass - want).abs());
    }
    outcome(worst <= 1e-3, format!("max |∫f̂ − N_B/(λ vol B)| over 20 configurations = {worst:.2e}"))
}

// 4. Entropy oracle.
fn entropy_oracle() -> Outcome {
    let u = DirectionalModel::uniform();
    let shortcut = true_entropy(&u, &oracle_grid());
    let quadrature = sphere_integrate(|eta| {
        let f = u.density(eta);
        -f * f.ln()
    }, &SphereGrid::equal_area(4096));
    let exact = (4.0 * PI).ln();
    outcome(
        (shortcut - exact).abs() <= 1e-6 && (quadrature - exact).abs() <= 1e-6 && (exact - 2.5310).abs() < 5e-5,
        format!("E(Uniform) = {shortcut:.7} (quadrature {quadrature:.7}); log 4π = {:.7}", (4.0 * PI).ln()),
    )
}

// 5. Table 1 trend at desk scale.
fn density_trend() -> Outcome {
    let window = Cube::at_origin(30.0).unwrap();
    let model = DirectionalModel::uniform();
    let system = simulate_homogeneous(&window, 15.0, &model, &RandomStream::new(105, 0)).unwrap();
    let grid = SphereGrid::equal_area(4096);
    let error = |kind| {
        let cfg = EstimatorConfig::new(kind, 15.0, window).unwrap();
        let field = DensityField::new(&system, &cfg);
        density_sup_error(|eta| field.eval(eta), &model, &grid)
    };
    let tricube = error(KernelKind::Tricube);
    let uniform = error(KernelKind::Uniform);
    outcome(
        tricube <= 0.05 && uniform > tricube,
        format!("sup error: Tricube {tricube:.5}, Uniform kernel {uniform:.5} (need Tricube ≤ 0.05 and Uniform > Tricube)"),
    )
}

// 6. Table 2 at desk scale.
fn entropy_means() -> Outcome {
    let window = Cube::at_origin(30.0).unwrap();
    let cfg = EstimatorConfig::new(KernelKind::Tricube, 15.0, window).unwrap();
    let mean_of = |model: &DirectionalModel, stream: u64| {
        let values: Vec<f64> = (0..10)
            .map(|s| {
                let sys = simulate_homogeneous(&window, 15.0, model, &RandomStream::new(600 + s, stream)).unwrap();
                entropy_plain(&sys, &cfg).unwrap().value
            })
            .collect();
        values.iter().sum::<f64>() / values.len() as f64
    };
    let uniform = mean_of(&DirectionalModel::uniform(), 0);
    let schladitz = mean_of(&DirectionalModel::schladitz(2.0).unwrap(), 1);
    outcome(
        (uniform - 2.5310).abs() <= 0.1 && (schladitz - 2.3554).abs() <= 0.15,
        format!("mean Ê over 10 seeds: Uniform {uniform:.4} (target 2.5310 ± 0.1), Schladitz(2) {schladitz:.4} (target 2.3554 ± 0.15)"),
    )
}

// 7. CLT shape.
fn clt_shape() -> Outcome {
    let params = CltParams {
        intensity: 20.0,
        window: Cube::at_origin(15.0).unwrap(),
        sub_window: Cube::at_origin(3.0).unwrap(),
        model: DirectionalModel::uniform(),
        kernel: KernelKind::Tricube,
        bandwidth: None,
        replications: 200,
        normalization_replications: 180,
        cov_lattice: 343,
    };
    let (norm, samples) = clt_study(&params, &RandomStream::new(107, 0)).unwrap();
    let z: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    let s = SampleSummary::new(&z).unwrap();
    outcome(
        s.mean.abs() <= 0.25
            && (0.5..=2.0).contains(&s.variance)
            && s.skewness.abs() < 0.5
            && s.ks_p_value > 0.01,
        format!(
            "n = {}, mean {:.3}, variance {:.3}, skewness {:.3}, KS D = {:.4} (p = {:.3}); μ̂ = {:.5}, σ = {:.4}",
            s.n, s.mean, s.variance, s.skewness, s.ks_distance, s.ks_p_value, norm.mu, norm.sigma
        ),
    )
}

struct DetectionRun {
    coverage: f64,
    false_positive: f64,
    dvol: f64,
    bound: f64,
}

fn fisher10() -> DirectionalModel {
    DirectionalModel::fisher(UnitVector3::E3, 10.0).unwrap()
}

fn detection_runs() -> (f64, Vec<DetectionRun>) {
    let w = Cube::at_origin(35.0).unwrap();
    let a = Region::Cube(Cube::new(Point3::splat(15.0), 5.0).unwrap());
    let b = optimal_scan_width(&OptimalWidthInput { a: 5.0, w: 35.0, alpha_f: 0.05 }).unwrap().b;
    let spec = InhomogeneitySpec::new(vec![a], DirectionalModel::uniform(), fisher10());
    let cfg = ScanConfig::new(w, b, KernelKind::Tricube, 20.0).unwrap();
    let runs = (0..10)
        .map(|seed| {
            let sys = simulate_with_inhomogeneity(&w, 20.0, &spec, &RandomStream::new(800 + seed, 0)).unwrap();
            let result = detect(&sys, &cfg).unwrap();
            let q = detection_quality(&[a], &result);
            let companion = simulate_homogeneous(&w, 20.0, &fisher10(), &RandomStream::new(800 + seed, 1)).unwrap();
            let alpha = detect(&companion, &cfg).unwrap().flagged_fraction();
            DetectionRun {
                coverage: q.coverage.unwrap_or(0.0),
                false_positive: q.false_positive_rate.unwrap_or(1.0),
                dvol: dvol_estimate(&[a], &result),
                bound: dvol_bound(5.0, b, 35.0, alpha),
            }
        })
        .collect();
    (b, runs)
}

// 8. Detection end to end.
fn detection_single(b: f64, runs: &[DetectionRun]) -> Outcome {
    let mut cov: Vec<f64> = runs.iter().map(|r| r.coverage).collect();
    let mut fp: Vec<f64> = runs.iter().map(|r| r.false_positive).collect();
    let (mc, mf) = (median(&mut cov), median(&mut fp));
    outcome(
        (b - 2.445).abs() < 1e-3 && mc >= 0.8 && mf <= 0.07,
        format!("b = {b:.4}; median coverage {mc:.3} (≥ 0.8), median false-positive rate {mf:.4} (≤ 0.07) over {} seeds", runs.len()),
    )
}

// 9. Two regions.
fn detection_two_regions() -> Outcome {
    let w = Cube::at_origin(35.0).unwrap();
    let regions = [
        Region::Cube(Cube::new(Point3::splat(5.0), 5.0).unwrap()),
        Region::Cube(Cube::new(Point3::splat(15.0), 5.0).unwrap()),
    ];
    let b = optimal_scan_width(&OptimalWidthInput { a: 5.0, w: 35.0, alpha_f: 0.05 }).unwrap().b;
    let spec = InhomogeneitySpec::new(regions.to_vec(), DirectionalModel::uniform(), fisher10());
    let cfg = ScanConfig::new(w, b, KernelKind::Tricube, 20.0).unwrap();
    let mut worst: f64 = 1.0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let sys = simulate_with_inhomogeneity(&w, 20.0, &spec, &RandomStream::new(900 + seed, 0)).unwrap();
        let result = detect(&sys, &cfg).unwrap();
        let q = detection_quality(&regions, &result);
        let cov: Vec<f64> = q.region_coverage.iter().map(|c| c.unwrap_or(0.0)).collect();
        worst = cov.iter().fold(worst, |m, &c| m.min(c));
        lines.push(format!("{:.2}/{:.2}", cov[0], cov[1]));
    }
    outcome(worst >= 0.7, format!("per-region coverage over 5 seeds: {} (each ≥ 0.7)", lines.join(", ")))
}

// 10. Distance in measure against its bound.
fn dvol_against_bound(runs: &[DetectionRun]) -> Outcome {
    let ok = runs.iter().filter(|r| r.dvol <= r.bound).count();
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.0}≤{:.0}", r.dvol, r.bound)).collect();
    outcome(ok >= 8, format!("{ok}/10 seeds within the bound: {}", pairs.join(", ")))
}

// 11. Degenerate inputs and robustness properties.
fn robustness() -> Outcome {
    let mut failures = Vec::new();

    // Constant field.
    let lattice = Lattice::new(Cube::at_origin(4.0).unwrap(), 1.0).unwrap();
    let flat = ScanField {
        lattice,
        scan_side: 1.0,
        values: vec![ScanValue { entropy: 1.7, valid: true, points: 50, clamped: 0 }; lattice.len()],
    };
    let stats = robust_stats(&flat).unwrap();
    if stats.variance != 0.0 || !excursion_set(&flat, &stats, 3.0).flagged.is_empty() {
        failures.push(format!("constant field: σ̂² = {:e}", stats.variance));
    }

    // A window without points exits with code 3.
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(
        &cfg,
        r#"{ "data": { "simulate": { "window": { "origin": [0, 0, 0], "side": 1 }, "intensity": 1e-9, "model": { "family": "uniform" } } } }"#,
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_fibrescan"))
        .args(["entropy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    if status.code() != Some(3) {
        failures.push(format!("empty window exit code {:?}", status.code()));
    }
    let empty = FibreSystem::new(Cube::at_origin(2.0).unwrap(), 1.0, vec![]).unwrap();
    if entropy_plain(&empty, &EstimatorConfig::new(KernelKind::Tricube, 1.0, Cube::at_origin(2.0).unwrap()).unwrap()).is_ok() {
        failures.push("empty window estimate did not fail".into());
    }

    let mut runner = TestRunner::new(PropConfig { cases: 256, failure_persistence: None, ..PropConfig::default() });
    let values = prop::collection::vec(-10.0f64..10.0, 3..60);

    // Median robustness: one arbitrarily large outlier moves the median by at most one order statistic.
    let r = runner.run(&(values.clone(), 1e3f64..1e9), |(v, big)| {
        let base = ScanStats::from_values(&v).unwrap();
        let mut w = v.clone();
        w.push(big);
        let s = ScanStats::from_values(&w).unwrap();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let upper = sorted[(sorted.len() / 2 + 1).min(sorted.len() - 1)];
        prop_assert!(s.median >= base.median - 1e-12 && s.median <= upper + 1e-12);
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("median robustness: {e}"));
    }

    // Monotonicity of the flag set in the multiplier.
    let r = runner.run(&(values.clone(), 0.1f64..3.0, 0.0f64..3.0), |(v, m1, dm)| {
        let field = field_from(&v);
        let stats = robust_stats(&field).unwrap();
        let low = excursion_set(&field, &stats, m1).flagged;
        let high = excursion_set(&field, &stats, m1 + dm).flagged;
        prop_assert!(high.iter().all(|i| low.contains(i)));
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("monotonicity: {e}"));
    }

    // Flag predicate and stability: the flags are exactly |v − μ̃| > mσ̂, and
    // moving a non-flagged value within its slack (stats held fixed) changes nothing.
    let r = runner.run(&(values, 0.5f64..3.0, 0.0f64..1.0), |(v, m, frac)| {
        let field = field_from(&v);
        let stats = robust_stats(&field).unwrap();
        let res = excursion_set(&field, &stats, m);
        let sd = stats.variance.sqrt();
        for (i, x) in v.iter().enumerate() {
            prop_assert_eq!(res.flagged.contains(&i), (x - stats.median).abs() > m * sd);
        }
        if let Some(i) = (0..v.len()).find(|i| !res.flagged.contains(i)) {
            let slack = m * sd - (v[i] - stats.median).abs();
            let mut moved = v.clone();
            let dir = if v[i] >= stats.median { 1.0 } else { -1.0 };
            moved[i] += dir * frac * slack * 0.999;
            let again = excursion_set(&field_from(&moved), &stats, m);
            prop_assert_eq!(again.flagged, res.flagged);
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("flag predicate: {e}"));
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "constant field, empty-window exit code 3, median robustness, monotonicity and flag stability hold".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn field_from(values: &[f64]) -> ScanField {
    let n = values.len();
    let side = (n as f64).cbrt().ceil();
    let lattice = Lattice::new(Cube::at_origin(side).unwrap(), 1.0).unwrap();
    let mut all: Vec<ScanValue> = values
        .iter()
        .map(|&v| ScanValue { entropy: v, valid: true, points: 50, clamped: 0 })
        .collect();
    all.resize(lattice.len(), ScanValue { entropy: f64::NAN, valid: false, points: 0, clamped: 0 });
    ScanField { lattice, scan_side: 1.0, values: all }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {n:>2} {} — {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((n, name, o));
    };
    record(1, "optimal scanning window width", &optimal_width);
    record(2, "kernel normalization", &kernel_normalization);
    record(3, "density mass identity", &mass_identity);
    record(4, "entropy oracle", &entropy_oracle);
    record(5, "density error trend", &density_trend);
    record(6, "entropy means", &entropy_means);
    record(7, "CLT shape", &clt_shape);
    let (b, runs) = detection_runs();
    record(8, "single-region detection", &|| detection_single(b, &runs));
    record(9, "two-region detection", &detection_two_regions);
    record(10, "distance in measure bound", &|| dvol_against_bound(&runs));
    record(11, "degenerate inputs and robustness", &robustness);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0} s{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
