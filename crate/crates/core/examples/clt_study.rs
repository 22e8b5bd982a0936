//! Standardized entropy statistics under the CLT normalization (small run).

use fibrescan::cli::{clt_study, CltParams};
use fibrescan::directional::{DirectionalModel, RandomStream};
use fibrescan::estimation::KernelKind;
use fibrescan::geometry::Cube;
use fibrescan::stats::SampleSummary;

fn main() -> fibrescan::Result<()> {
    let params = CltParams {
        intensity: 20.0,
        window: Cube::at_origin(8.0)?,
        sub_window: Cube::at_origin(2.0)?,
        model: DirectionalModel::uniform(),
        kernel: KernelKind::Tricube,
        bandwidth: None,
        replications: 40,
        normalization_replications: 60,
        cov_lattice: 125,
    };
    let (norm, samples) = clt_study(&params, &RandomStream::new(5, 0))?;
    println!("mu = {:.5}, sigma = {:.5}", norm.mu, norm.sigma);
    let z: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    let s = SampleSummary::new(&z)?;
    println!(
        "n = {}, mean {:.3}, variance {:.3}, skewness {:.3}, KS p = {:.3}",
        s.n, s.mean, s.variance, s.skewness, s.ks_p_value
    );
    Ok(())
}
