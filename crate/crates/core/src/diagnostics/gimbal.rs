//! Quaternion versus Euler-angle alignment near gimbal lock.
//!
//! Both parameterizations evaluate `M` through [`Overlap::contract`]; only
//! the rotation blocks and their derivatives differ.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::{align_with, AlignmentConfig, AlignmentResult, Overlap};
use crate::cloud::PointCloud;
use crate::error::Result;
use crate::rotation::{rotate_spectrum, EulerJet, UnitQuaternion, WignerTable};
use crate::zernike::{project_moments, MomentTensor, ZernikeBasis};

use super::hessian::tangent_hessian;

/// The ±45°-about-`x` pair on top of a 90° turn about `y`. The geodesic
/// between them passes through the pure `y` rotation by 90°, which is the
/// gimbal lock of the ZYX angles.
pub fn gimbal_fixture() -> (UnitQuaternion, UnitQuaternion) {
    let ry = UnitQuaternion::from_axis_angle(&Vector3::y(), 90f64.to_radians()).expect("unit axis");
    let rx = |deg: f64| {
        UnitQuaternion::from_axis_angle(&Vector3::x(), deg.to_radians()).expect("unit axis")
    };
    (rx(45.0).multiply(&ry), rx(-45.0).multiply(&ry))
}

/// Pair of `z` rotations whose geodesic stays far from the lock.
pub fn control_fixture() -> (UnitQuaternion, UnitQuaternion) {
    let rz = |deg: f64| {
        UnitQuaternion::from_axis_angle(&Vector3::z(), deg.to_radians()).expect("unit axis")
    };
    (rz(45.0), rz(-45.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAlignment {
    /// Final `(α, β, γ)`.
    pub angles: [f64; 3],
    pub iterations: usize,
    pub converged: bool,
    pub final_overlap: f64,
    pub overlap_trace: Vec<f64>,
    pub beta_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GimbalTraces {
    pub quaternion: AlignmentResult,
    pub euler: EulerAlignment,
    /// `M` at the exact target orientation, the global maximum.
    pub max_overlap: f64,
}

impl GimbalTraces {
    /// `iteration,quaternion,euler` with the shorter trace held at its last value.
    pub fn to_csv(&self) -> String {
        let (a, b) = (&self.quaternion.overlap_trace, &self.euler.overlap_trace);
        let mut out = String::from("iteration,quaternion,euler\n");
        for i in 0..a.len().max(b.len()) {
            let pick = |v: &[f64]| v.get(i).or(v.last()).copied().unwrap_or(f64::NAN);
            out.push_str(&format!("{i},{:e},{:e}\n", pick(a), pick(b)));
        }
        out
    }
}

/// `M` and its gradient in Euler coordinates.
fn euler_value_grad(overlap: &Overlap, l_max: usize, xi: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let jet = EulerJet::new(l_max, xi[0], xi[1], xi[2], false);
    let g = Vector3::from_fn(|i, _| overlap.contract(&jet.grad[i]));
    (overlap.contract(&jet.value), g)
}

/// ADAM ascent on `(α, β, γ)` with the same step rule and stopping test as
/// the quaternion ascent, minus the manifold projection.
pub fn align_euler(
    overlap: &Overlap,
    l_max: usize,
    start: [f64; 3],
    cfg: &AlignmentConfig,
) -> Result<EulerAlignment> {
    cfg.validate()?;
    let mut xi = Vector3::from(start);
    let (mut m1, mut m2) = (Vector3::zeros(), Vector3::zeros());
    let (mut prev, _) = euler_value_grad(overlap, l_max, &xi);
    let mut trace = vec![prev];
    let mut betas = vec![xi[1]];
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iterations {
        let (_, g) = euler_value_grad(overlap, l_max, &xi);
        let d = -g;
        if let Some(tol) = cfg.gradient_tolerance {
            if d.norm() < tol {
                converged = true;
                break;
            }
        }
        m1 = m1 * cfg.beta1 + d * (1.0 - cfg.beta1);
        m2 = m2 * cfg.beta2 + d.component_mul(&d) * (1.0 - cfg.beta2);
        let mh = m1 / (1.0 - cfg.beta1.powi(t as i32));
        let vh = m2 / (1.0 - cfg.beta2.powi(t as i32));
        xi -= mh.zip_map(&vh, |a, b| a / (b.sqrt() + cfg.epsilon)) * cfg.learning_rate;
        iterations = t;
        let m = overlap.contract(&EulerJet::new(l_max, xi[0], xi[1], xi[2], false).value);
        trace.push(m);
        betas.push(xi[1]);
        if (m - prev).abs() < cfg.convergence_threshold {
            converged = true;
            break;
        }
        prev = m;
    }
    Ok(EulerAlignment {
        angles: [xi[0], xi[1], xi[2]],
        iterations,
        converged,
        final_overlap: *trace.last().unwrap_or(&prev),
        overlap_trace: trace,
        beta_trace: betas,
    })
}

fn self_spectrum(cloud: &PointCloud, basis: &ZernikeBasis) -> Result<MomentTensor> {
    project_moments(basis, &cloud.normalize_self()?)
}

/// Aligns `C` toward `D(target_q) C` from `source_q`, once per parameterization.
pub fn gimbal_comparison(
    source_q: &UnitQuaternion,
    target_q: &UnitQuaternion,
    cloud: &PointCloud,
    basis: &ZernikeBasis,
    cfg: &AlignmentConfig,
) -> Result<GimbalTraces> {
    let c = self_spectrum(cloud, basis)?;
    let table = WignerTable::new(c.l_max());
    let target = rotate_spectrum(&c, &table.eval(target_q))?;
    let overlap = Overlap::with_table(table, &c, &target);
    let quaternion = align_with(&overlap, source_q, cfg)?;
    let (a, b, g) = source_q.to_euler_zyx();
    let euler = align_euler(&overlap, c.l_max(), [a, b, g], cfg)?;
    Ok(GimbalTraces {
        quaternion,
        euler,
        max_overlap: overlap.value(target_q),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub euler_angles: [f64; 3],
    pub quaternion_determinant: f64,
    pub euler_determinant: f64,
}

/// `det` of the Euler-coordinate Hessian of an overlap at `(α, β, γ)`.
pub fn euler_hessian(overlap: &Overlap, l_max: usize, xi: [f64; 3]) -> Matrix3<f64> {
    let jet = EulerJet::new(l_max, xi[0], xi[1], xi[2], true);
    // Storage order [αα, αβ, αγ, ββ, βγ, γγ].
    let idx = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    Matrix3::from_fn(|i, j| overlap.contract(&jet.hess[idx[i][j]]))
}

/// Hessian determinants along the geodesic from `q_a` to `q_b`. At each
/// point `p` the target is `D(p) C`, so `p` is the optimum being probed.
pub fn slerp_hessian_path(
    q_a: &UnitQuaternion,
    q_b: &UnitQuaternion,
    steps: usize,
    cloud: &PointCloud,
    basis: &ZernikeBasis,
) -> Result<Vec<PathPoint>> {
    let c = self_spectrum(cloud, basis)?;
    let table = WignerTable::new(c.l_max());
    let steps = steps.max(2);
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let (p, _) = q_a.slerp(q_b, t);
            let target = rotate_spectrum(&c, &table.eval(&p))?;
            let overlap = Overlap::with_table(table.clone(), &c, &target);
            let (_, th) = tangent_hessian(&overlap, &p);
            let (a, b, g) = p.to_euler_zyx();
            let eh = euler_hessian(&overlap, c.l_max(), [a, b, g]);
            Ok(PathPoint {
                t,
                euler_angles: [a, b, g],
                quaternion_determinant: th.determinant(),
                euler_determinant: eh.determinant(),
            })
        })
        .collect()
}

/// `t,alpha,beta,gamma,quaternion_det,euler_det` table.
pub fn path_csv(points: &[PathPoint]) -> String {
    let mut out = String::from("t,alpha,beta,gamma,quaternion_det,euler_det\n");
    for p in points {
        let [a, b, g] = p.euler_angles;
        out.push_str(&format!(
            "{},{a},{b},{g},{:e},{:e}\n",
            p.t, p.quaternion_determinant, p.euler_determinant
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn small() -> (PointCloud, ZernikeBasis) {
        (
            fixtures::bunny(400, 2).unwrap(),
            ZernikeBasis::new(6, 4).unwrap(),
        )
    }

    #[test]
    fn fixture_geodesic_crosses_the_lock() {
        let (a, b) = gimbal_fixture();
        let (_, beta_a, _) = a.to_euler_zyx();
        assert!((beta_a.to_degrees() - 45.0).abs() < 1e-9);
        let (mid, _) = a.slerp(&b, 0.5);
        let (_, beta, _) = mid.to_euler_zyx();
        assert!((beta - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn euler_gradient_matches_differences() {
        let (cloud, basis) = small();
        let c = self_spectrum(&cloud, &basis).unwrap();
        let t = rotate_spectrum(&c, &WignerTable::new(4).eval(&control_fixture().1)).unwrap();
        let overlap = Overlap::new(&c, &t).unwrap();
        let xi = Vector3::new(0.3, -0.4, 0.8);
        let (_, g) = euler_value_grad(&overlap, 4, &xi);
        let h = 1e-6;
        for i in 0..3 {
            let e = Vector3::ith(i, h);
            let fd = (euler_value_grad(&overlap, 4, &(xi + e)).0
                - euler_value_grad(&overlap, 4, &(xi - e)).0)
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-7 * g.norm().max(1e-12),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
        let hs = euler_hessian(&overlap, 4, [xi[0], xi[1], xi[2]]);
        for i in 0..3 {
            let e = Vector3::ith(i, h);
            let fd = (euler_value_grad(&overlap, 4, &(xi + e)).1
                - euler_value_grad(&overlap, 4, &(xi - e)).1)
                / (2.0 * h);
            assert!((fd - hs.column(i)).abs().max() <= 1e-6 * hs.abs().max());
        }
    }

    #[test]
    fn euler_and_quaternion_agree_at_the_start() {
        let (cloud, basis) = small();
        let (a, b) = gimbal_fixture();
        let cfg = AlignmentConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let tr = gimbal_comparison(&a, &b, &cloud, &basis, &cfg).unwrap();
        assert!((tr.quaternion.overlap_trace[0] - tr.euler.overlap_trace[0]).abs() < 1e-12);
        assert!(tr.max_overlap >= tr.quaternion.overlap_trace[0]);
    }
}
