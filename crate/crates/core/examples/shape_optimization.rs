//! Deform an ellipsoid into a crescent by gradient descent on the matching
//! loss. The loss ignores orientation, so the result keeps roughly the
//! starting pose.
//!
//! ```text
//! cargo run --release --example shape_optimization [out_dir]
//! ```

use std::fs::File;
use std::path::PathBuf;

use nalgebra::Vector3;
use zernike_match::fixtures::{self, CrescentSpec, CrescentVariant};
use zernike_match::io::save_cloud;
use zernike_match::loss::LossConfig;
use zernike_match::optimize::{
    axis_angle_deg, direct_optimize, prepare_target, principal_axes, OptimizeConfig,
};
use zernike_match::{PointCloud, UnitQuaternion, ZernikeBasis};

fn main() -> zernike_match::Result<()> {
    let out_dir: Option<PathBuf> = std::env::args().nth(1).map(Into::into);
    let basis = ZernikeBasis::new(20, 10)?;
    let target = fixtures::crescent(&CrescentSpec {
        n: 3000,
        variant: CrescentVariant::LongY,
        seed: 3,
        ..Default::default()
    })?;
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 1.0)?;
    let start = fixtures::ellipsoid(1000, [1.0, 1.0, 2.0], 4)?.rotate(&tilt);

    let prep = prepare_target(&basis, &target)?;
    let cfg = OptimizeConfig {
        snapshot_every: 5,
        ..Default::default()
    };
    let traj = direct_optimize(&basis, &start, &prep, &cfg, &LossConfig::default())?;
    for r in &traj.records {
        println!(
            "step {:3}  loss {:.3e}  inner iterations {}",
            r.step, r.loss, r.inner_iterations
        );
    }

    let long = |c: &PointCloud| principal_axes(c).column(0).into_owned();
    let axis = long(&traj.final_cloud);
    println!(
        "long axis: {:.1} deg from the start, {:.1} deg from the target",
        axis_angle_deg(&axis, &long(&start)),
        axis_angle_deg(&axis, &long(&target))
    );

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        save_cloud(&traj.final_cloud, dir.join("final.csv"))?;
        traj.write_csv(File::create(dir.join("learning_curve.csv"))?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
