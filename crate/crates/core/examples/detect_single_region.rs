//! Detect a cube of isotropic fibres inside a Fisher-oriented system.

use fibrescan::detection::{detect, detection_quality, optimal_scan_width, OptimalWidthInput, ScanConfig};
use fibrescan::directional::{DirectionalModel, RandomStream};
use fibrescan::estimation::KernelKind;
use fibrescan::geometry::{Cube, Point3, Region, UnitVector3};
use fibrescan::process::{simulate_with_inhomogeneity, InhomogeneitySpec};

fn main() -> fibrescan::Result<()> {
    let w = Cube::at_origin(35.0)?;
    let region = Region::Cube(Cube::new(Point3::splat(15.0), 5.0)?);
    let b = optimal_scan_width(&OptimalWidthInput { a: 5.0, w: 35.0, alpha_f: 0.05 })?.b;
    let spec = InhomogeneitySpec::new(
        vec![region],
        DirectionalModel::uniform(),
        DirectionalModel::fisher(UnitVector3::E3, 10.0)?,
    );
    let system = simulate_with_inhomogeneity(&w, 20.0, &spec, &RandomStream::new(1, 0))?;
    let cfg = ScanConfig::new(w, b, KernelKind::Tricube, 20.0)?;
    let result = detect(&system, &cfg)?;
    let q = detection_quality(&[region], &result);
    println!("b = {b:.4}, {} lattice points, {} flagged", result.lattice.len(), result.flagged.len());
    println!("median {:.4}, sd {:.4}", result.stats.median, result.stats.std_dev());
    println!(
        "coverage {:?}, false positives {:?}, boundary {:?}, d_vol {:.1}",
        q.coverage, q.false_positive_rate, q.boundary_flag_rate, q.dvol
    );
    Ok(())
}
