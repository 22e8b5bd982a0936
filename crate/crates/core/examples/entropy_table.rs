//! Entropy estimates against the true entropy for several directional laws.

use fibrescan::directional::{true_entropy, DirectionalModel, RandomStream};
use fibrescan::estimation::{entropy_modified, entropy_plain, EstimatorConfig, KernelKind};
use fibrescan::geometry::{Cube, SphereGrid, UnitVector3};
use fibrescan::process::simulate_homogeneous;

fn main() -> fibrescan::Result<()> {
    let window = Cube::at_origin(15.0)?;
    let intensity = 15.0;
    let cfg = EstimatorConfig::new(KernelKind::Tricube, intensity, window)?;
    let oracle = SphereGrid::gauss_product(256, 512);
    let models = [
        DirectionalModel::uniform(),
        DirectionalModel::fisher(UnitVector3::E3, 1.0)?,
        DirectionalModel::fisher(UnitVector3::E3, 10.0)?,
        DirectionalModel::watson(UnitVector3::E3, 5.0)?,
        DirectionalModel::schladitz(2.0)?,
    ];
    println!("{:<20} {:>8} {:>8} {:>9}", "model", "true", "plain", "modified");
    for (i, model) in models.iter().enumerate() {
        let root = RandomStream::new(3, i as u64);
        let system = simulate_homogeneous(&window, intensity, model, &root.substream("original", 0))?;
        let copy = simulate_homogeneous(&window, intensity, model, &root.substream("copy", 0))?;
        println!(
            "{:<20} {:>8.4} {:>8.4} {:>9.4}",
            model.label(),
            true_entropy(model, &oracle),
            entropy_plain(&system, &cfg)?.value,
            entropy_modified(&system, &copy, &cfg)?.value
        );
    }
    Ok(())
}
