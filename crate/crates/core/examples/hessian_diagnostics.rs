//! Conditioning of the alignment Hessian on near-symmetric shapes.
//!
//! ```text
//! cargo run --release --example hessian_diagnostics
//! ```

use zernike_match::diagnostics::{
    determinant_ratio, sphere_csv, sphere_study, symmetry_csv, symmetry_scan,
};
use zernike_match::ZernikeBasis;

fn main() -> zernike_match::Result<()> {
    let basis = ZernikeBasis::new(10, 8)?;

    // An axisymmetric ellipsoid: one tangent eigenvalue goes soft as the
    // azimuthal sampling gets finer.
    let rows = symmetry_scan(&[32, 64, 128, 256], 16, 2.0, &basis, 1)?;
    print!("{}", symmetry_csv(&rows));

    // The shell+core sphere before and after elongation and noise.
    let rows = sphere_study(250, 1.1, 0.05, &[1, 2, 3], &basis)?;
    print!("\n{}", sphere_csv(&rows));
    println!(
        "\nmedian |det| ratio, elongated+noised over plain: {:.3e}",
        determinant_ratio(&rows)
    );
    Ok(())
}
