//! Scanning window width minimizing the bound on the distance in measure.

use fibrescan::detection::{dvol_bound, optimal_scan_width, OptimalWidthInput};

fn main() -> fibrescan::Result<()> {
    println!("{:>5} {:>5} {:>6} {:>8} {:>10} {}", "a", "w", "alpha", "b", "bound", "valid");
    for (a, w) in [(1.0, 7.0), (5.0, 35.0), (10.0, 70.0), (1.0, 10.0)] {
        for alpha_f in [0.01, 0.05, 0.1] {
            let o = optimal_scan_width(&OptimalWidthInput { a, w, alpha_f })?;
            println!(
                "{a:>5} {w:>5} {alpha_f:>6} {:>8.4} {:>10.2} {}",
                o.b,
                dvol_bound(a, o.b, w, alpha_f),
                o.valid
            );
        }
    }
    Ok(())
}
