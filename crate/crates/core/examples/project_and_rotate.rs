//! Project a cloud onto the 3D Zernike basis and check that rotating the
//! points is the same as rotating the moments with Wigner-D blocks.
//!
//! ```text
//! cargo run --release --example project_and_rotate
//! ```

use nalgebra::Vector3;
use zernike_match::fixtures;
use zernike_match::rotation::{rotate_spectrum, wigner_d_quat};
use zernike_match::zernike::project_moments;
use zernike_match::{UnitQuaternion, ZernikeBasis};

fn main() -> zernike_match::Result<()> {
    let basis = ZernikeBasis::new(20, 10)?;
    let bunny = fixtures::bunny(3000, 1)?;
    let r_max = bunny.translate(&-bunny.center_of_mass()).max_radius();
    let c = project_moments(&basis, &bunny.normalize_to_unit_ball(r_max)?)?;
    println!(
        "{} admissible coefficients in a {:?} tensor",
        c.n_spec(),
        c.dims()
    );
    for l in 0..=basis.l_max() {
        println!("  l = {l:2}  |c_l| = {:.4e}", c.degree_norm(l));
    }

    let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 2.0), 0.8)?;
    let turned = project_moments(&basis, &bunny.rotate(&q).normalize_to_unit_ball(r_max)?)?;
    let predicted = rotate_spectrum(&c, &wigner_d_quat(basis.l_max(), &q))?;
    println!(
        "max |project(R x) - D(q) project(x)| = {:.2e}",
        turned.max_abs_diff(&predicted)
    );
    Ok(())
}
