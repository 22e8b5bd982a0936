//! Sup-norm error of the directional density estimate for each kernel.

use fibrescan::directional::{DirectionalModel, RandomStream};
use fibrescan::estimation::{default_bandwidth, density_sup_error, DensityField, EstimatorConfig, KernelKind};
use fibrescan::geometry::{Cube, SphereGrid};
use fibrescan::process::simulate_homogeneous;

fn main() -> fibrescan::Result<()> {
    let window = Cube::at_origin(15.0)?;
    let intensity = 15.0;
    let grid = SphereGrid::default();
    println!("bandwidth h = {:.4}", default_bandwidth(window.volume()));
    for (name, model) in [
        ("uniform", DirectionalModel::uniform()),
        ("schladitz(2)", DirectionalModel::schladitz(2.0)?),
    ] {
        let system = simulate_homogeneous(&window, intensity, &model, &RandomStream::new(11, 0))?;
        println!("{name}: {} points", system.len());
        for kind in KernelKind::ALL {
            let cfg = EstimatorConfig::new(kind, intensity, window)?;
            let field = DensityField::new(&system, &cfg);
            let err = density_sup_error(|eta| field.eval(eta), &model, &grid);
            println!("  {:<13} {err:.5}", kind.name());
        }
    }
    Ok(())
}
