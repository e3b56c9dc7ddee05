//! Euler angles versus quaternions on an alignment whose geodesic passes
//! through pitch = 90°.
//!
//! ```text
//! cargo run --release --example gimbal_lock
//! ```

use zernike_match::alignment::AlignmentConfig;
use zernike_match::diagnostics::{
    control_fixture, gimbal_comparison, gimbal_fixture, path_csv, slerp_hessian_path,
};
use zernike_match::fixtures;
use zernike_match::ZernikeBasis;

fn main() -> zernike_match::Result<()> {
    let basis = ZernikeBasis::new(10, 8)?;
    let bunny = fixtures::bunny(2000, 1)?;
    let cfg = AlignmentConfig::default();
    for (name, (from, to)) in [("lock", gimbal_fixture()), ("control", control_fixture())] {
        let tr = gimbal_comparison(&from, &to, &bunny, &basis, &cfg)?;
        println!(
            "{name:8} max M {:.7e}  quaternion {:.7e} ({} it)  euler {:.7e} ({} it)",
            tr.max_overlap,
            tr.quaternion.final_overlap,
            tr.quaternion.iterations,
            tr.euler.final_overlap,
            tr.euler.iterations
        );
    }
    let (a, b) = gimbal_fixture();
    print!(
        "\n{}",
        path_csv(&slerp_hessian_path(&a, &b, 11, &bunny, &basis)?)
    );
    Ok(())
}
