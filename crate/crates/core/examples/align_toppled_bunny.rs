//! Recover the rotation between a bunny and a toppled copy from their
//! spectra alone, by ascent on the unit quaternion sphere.
//!
//! ```text
//! cargo run --release --example align_toppled_bunny
//! ```

use nalgebra::Vector3;
use zernike_match::alignment::{align_best_of, align_with, start_set, AlignmentConfig, Overlap};
use zernike_match::fixtures;
use zernike_match::rng::{stream, streams};
use zernike_match::zernike::project_moments;
use zernike_match::{UnitQuaternion, ZernikeBasis};

fn main() -> zernike_match::Result<()> {
    let basis = ZernikeBasis::new(20, 8)?;
    let bunny = fixtures::bunny(2503, 1)?;
    let topple = UnitQuaternion::from_axis_angle(&Vector3::y(), 90f64.to_radians())?;
    let toppled = bunny.rotate(&topple);

    let evolved = project_moments(&basis, &bunny.normalize_self()?)?;
    let target = project_moments(&basis, &toppled.normalize_self()?)?;
    let overlap = Overlap::new(&evolved, &target)?;
    let cfg = AlignmentConfig::default();

    let single = align_with(&overlap, &UnitQuaternion::identity(), &cfg)?;
    println!(
        "identity start: {} iterations, error {:.2} deg",
        single.iterations,
        single.q_star.angle_to(&topple).to_degrees()
    );

    // The overlap has local maxima; a handful of random starts finds the global one.
    let starts = start_set(8, None, &mut stream(1, streams::ALIGN_INIT));
    let best = align_best_of(&overlap, &starts, &cfg)?;
    println!(
        "best of {}: M = {:.6e}, error {:.3} deg",
        starts.len(),
        best.final_overlap,
        best.q_star.angle_to(&topple).to_degrees()
    );
    Ok(())
}
