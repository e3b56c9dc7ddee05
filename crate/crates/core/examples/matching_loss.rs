//! The matching loss: zero for rotated copies, large for mirror images, and
//! differentiable with respect to every point through the alignment.
//!
//! ```text
//! cargo run --release --example matching_loss
//! ```

use nalgebra::Vector3;
use zernike_match::alignment::AlignmentConfig;
use zernike_match::fixtures;
use zernike_match::loss::{
    evaluate_loss, finite_difference_gradient, oracle_alignment, total_gradient, LossConfig,
};
use zernike_match::optimize::prepare_target;
use zernike_match::{Axis, UnitQuaternion, ZernikeBasis};

fn main() -> zernike_match::Result<()> {
    let basis = ZernikeBasis::new(10, 8)?;
    let bunny = fixtures::bunny(1500, 2)?;
    let target = prepare_target(&basis, &bunny)?;
    let cfg = LossConfig {
        multi_start: 8,
        ..Default::default()
    };
    let q = UnitQuaternion::from_axis_angle(&Vector3::new(0.2, 1.0, -0.4), 2.3)?;
    let eval = |c: &zernike_match::PointCloud| {
        evaluate_loss(&basis, c, &target.moments, target.r_max, &cfg, None)
    };
    let (rotated, _) = eval(&bunny.rotate(&q))?;
    let (shuffled, _) = eval(&fixtures::shuffled(&bunny, 3)?)?;
    let (mirrored, _) = eval(&bunny.mirror(Axis::X))?;
    println!("rotated  {rotated:.3e}");
    println!("shuffled {shuffled:.3e}");
    println!("mirrored {mirrored:.3e}");

    // Gradient of a small problem against central differences.
    let small = ZernikeBasis::new(8, 4)?;
    let target = prepare_target(&small, &fixtures::bunny(80, 4)?)?;
    let x = fixtures::ellipsoid(30, [3.0, 1.8, 1.2], 5)?;
    let tight = LossConfig {
        alignment: oracle_alignment(&AlignmentConfig::default()),
        ..Default::default()
    };
    let g = total_gradient(&small, &x, &target.moments, target.r_max, &tight, None)?;
    let (fd, evals) = finite_difference_gradient(
        &small,
        &x,
        &target.moments,
        target.r_max,
        &tight,
        1e-5,
        Some(g.q_star),
        true,
    )?;
    println!(
        "loss {:.4e}; analytic vs {evals} finite-difference evaluations: max relative error {:.2e}",
        g.value,
        g.max_relative_error(&fd)
    );
    Ok(())
}
