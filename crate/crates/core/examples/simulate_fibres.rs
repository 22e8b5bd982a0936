//! Simulate a homogeneous fibre system and write it as a point cloud.
//!
//! `cargo run --example simulate_fibres > fibres.csv`

use fibrescan::directional::{DirectionalModel, RandomStream};
use fibrescan::geometry::{Cube, UnitVector3};
use fibrescan::process::{simulate_homogeneous, write_point_cloud};

fn main() -> fibrescan::Result<()> {
    let window = Cube::at_origin(10.0)?;
    let model = DirectionalModel::fisher(UnitVector3::E3, 10.0)?;
    let system = simulate_homogeneous(&window, 5.0, &model, &RandomStream::new(7, 0))?.with_fibre_length(1.0)?;

    let mean_z = system.marks().iter().map(|m| m.z()).sum::<f64>() / system.len() as f64;
    eprintln!(
        "{} fibres in {window}; mean z-component {mean_z:.3}; volume fraction at r = 0.05: {:.4}",
        system.len(),
        system.volume_fraction(0.05)?
    );
    write_point_cloud(std::io::stdout().lock(), system.points())
}
