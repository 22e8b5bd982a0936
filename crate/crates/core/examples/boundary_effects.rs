//! How the flag rate varies with the overlap between scan window and region.
//!
//! Windows that straddle the region boundary mix both laws, so their
//! entropy lies between the two levels and they are flagged less reliably.

use fibrescan::detection::{detect, ScanConfig};
use fibrescan::directional::{DirectionalModel, RandomStream};
use fibrescan::estimation::KernelKind;
use fibrescan::geometry::{Cube, Point3, Region, UnitVector3};
use fibrescan::process::{simulate_with_inhomogeneity, InhomogeneitySpec};

fn main() -> fibrescan::Result<()> {
    let w = Cube::at_origin(30.0)?;
    let inner = Cube::new(Point3::splat(12.0), 6.0)?;
    let spec = InhomogeneitySpec::new(
        vec![Region::Cube(inner)],
        DirectionalModel::uniform(),
        DirectionalModel::fisher(UnitVector3::E3, 10.0)?,
    );
    let system = simulate_with_inhomogeneity(&w, 20.0, &spec, &RandomStream::new(4, 0))?;
    let cfg = ScanConfig::new(w, 3.0, KernelKind::Tricube, 20.0)?;
    let result = detect(&system, &cfg)?;
    let flags = result.flag_mask();

    // Bin lattice points by the fraction of their window inside the region.
    let mut bins = [(0usize, 0usize); 5];
    for (i, &flag) in flags.iter().enumerate() {
        let x = result.lattice.point(i);
        let window = Cube::new(x, cfg.scan_side)?;
        let overlap = window
            .as_box()
            .intersection(&inner.as_box())
            .map_or(0.0, |b| b.volume() / window.volume());
        let k = ((overlap * 4.0).round() as usize).min(4);
        bins[k].0 += flag as usize;
        bins[k].1 += 1;
    }
    println!("{:>8} {:>7} {:>9}", "overlap", "points", "flagged");
    for (k, (hit, total)) in bins.iter().enumerate() {
        if *total > 0 {
            println!("{:>8.2} {:>7} {:>9.3}", k as f64 / 4.0, total, *hit as f64 / *total as f64);
        }
    }
    Ok(())
}
