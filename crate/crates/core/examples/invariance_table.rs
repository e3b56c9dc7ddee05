//! Which distances notice permutation, subsampling, rotation and
//! reflection of a bunny.
//!
//! ```text
//! cargo run --release --example invariance_table
//! ```

use zernike_match::fixtures;
use zernike_match::metrics::{invariance_report, Metric, ReportParams};

fn main() -> zernike_match::Result<()> {
    let params = ReportParams::default();
    let bunny = fixtures::bunny(params.n_points, params.seed)?;
    let report = invariance_report(&bunny, &Metric::ALL, &params)?;
    print!("{}", report.to_csv());
    println!();
    println!(
        "{:<16} {:>12} {:>8} {:>9} {:>10}",
        "metric", "permutation", "count", "rotation", "reflection"
    );
    let yes = |b: bool| if b { "inv" } else { "-" };
    for m in Metric::ALL {
        let Some(f) = report.flags(m) else { continue };
        println!(
            "{:<16} {:>12} {:>8} {:>9} {:>10}",
            m.name(),
            yes(f.permutation_invariant),
            f.count_robust.map_or("n/a", yes),
            yes(f.rotation_invariant),
            if f.reflection_sensitive {
                "sees"
            } else {
                "blind"
            }
        );
    }
    Ok(())
}
