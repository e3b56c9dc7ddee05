//! Property tests over random inputs.

use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;

use zernike_match::alignment::{exp_map_step, riemannian_gradient};
use zernike_match::fixtures;
use zernike_match::io::{read_cloud, write_cloud};
use zernike_match::loss::{evaluate_loss, LossConfig};
use zernike_match::metrics::{chamfer, spectral_invariants, SpectrumOrder};
use zernike_match::rotation::{rotate_spectrum, wigner_d_quat, WignerTable};
use zernike_match::zernike::project_moments;
use zernike_match::{Point, PointCloud, UnitQuaternion, ZernikeBasis};

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| UnitQuaternion::from_vector(&Vector4::from(v)).unwrap())
}

fn point() -> impl Strategy<Value = Point> {
    prop::array::uniform3(-1.0f64..1.0).prop_map(|[x, y, z]| Point::new(x, y, z))
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((point(), 0.1f64..3.0), min..max).prop_map(|v| {
        let (p, w): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        PointCloud::new(p, w).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn products_stay_unit(a in quaternion(), b in quaternion()) {
        let n = a.multiply(&b).to_vector().norm();
        prop_assert!((n - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_matrix_round_trips_up_to_sign(q in quaternion()) {
        let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
        prop_assert!(back.dot(&q).abs() > 1.0 - 1e-12);
        let r = q.to_rotation_matrix();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euler_angles_round_trip_away_from_lock(
        a in -3.0f64..3.0, b in -1.4f64..1.4, g in -3.0f64..3.0,
    ) {
        let q = UnitQuaternion::from_euler_zyx(a, b, g);
        let (a2, b2, g2) = q.to_euler_zyx();
        let q2 = UnitQuaternion::from_euler_zyx(a2, b2, g2);
        prop_assert!(q.dot(&q2).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn exp_map_keeps_unit_norm(q in quaternion(), g in prop::array::uniform4(-5.0f64..5.0), eta in 0.0f64..2.0) {
        let v = riemannian_gradient(&q, &Vector4::from(g));
        prop_assert!(v.dot(&q.to_vector()).abs() < 1e-12);
        let next = exp_map_step(&q, &v, eta).unwrap();
        prop_assert!((next.to_vector().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn slerp_hits_its_endpoints(a in quaternion(), b in quaternion()) {
        let (s0, _) = a.slerp(&b, 0.0);
        let (s1, _) = a.slerp(&b, 1.0);
        prop_assert!(s0.dot(&a).abs() > 1.0 - 1e-12);
        prop_assert!(s1.dot(&b).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn wigner_blocks_are_an_orthogonal_representation(a in quaternion(), b in quaternion()) {
        let table = WignerTable::new(6);
        let da = table.eval(&a);
        prop_assert!(da.orthogonality_error() < 1e-11);
        let lhs = table.eval(&a.multiply(&b));
        prop_assert!(lhs.max_abs_diff(&da.compose(&table.eval(&b))) < 1e-10);
        // Inverse rotation is the transpose.
        prop_assert!(table.eval(&a.conjugate()).max_abs_diff(&da.transpose()) < 1e-12);
        // q and −q are the same rotation.
        prop_assert!(da.max_abs_diff(&table.eval(&a.neg())) < 1e-13);
    }

    #[test]
    fn projection_is_rotation_equivariant(c in cloud(5, 40), q in quaternion()) {
        let basis = ZernikeBasis::new(8, 6).unwrap();
        let base = project_moments(&basis, &c.normalize_to_unit_ball(2.0).unwrap()).unwrap();
        let turned = project_moments(&basis, &c.rotate(&q).normalize_to_unit_ball(2.0).unwrap()).unwrap();
        let predicted = rotate_spectrum(&base, &wigner_d_quat(6, &q)).unwrap();
        prop_assert!(turned.max_abs_diff(&predicted) < 1e-11);
    }

    #[test]
    fn projection_ignores_point_order(c in cloud(2, 40), seed in 0u64..1000) {
        let basis = ZernikeBasis::new(6, 4).unwrap();
        let a = project_moments(&basis, &c.normalize_to_unit_ball(2.0).unwrap()).unwrap();
        let shuffled = fixtures::shuffled(&c, seed).unwrap();
        let b = project_moments(&basis, &shuffled.normalize_to_unit_ball(2.0).unwrap()).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-13);
    }

    #[test]
    fn power_spectrum_is_rotation_invariant(c in cloud(5, 40), q in quaternion()) {
        let basis = ZernikeBasis::new(6, 4).unwrap();
        let m = project_moments(&basis, &c.normalize_to_unit_ball(2.0).unwrap()).unwrap();
        let r = rotate_spectrum(&m, &wigner_d_quat(4, &q)).unwrap();
        let a = spectral_invariants(&m, SpectrumOrder::Power).values;
        let b = spectral_invariants(&r, SpectrumOrder::Power).values;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn loss_is_nonnegative(c in cloud(3, 20), t in cloud(3, 20)) {
        let basis = ZernikeBasis::new(6, 4).unwrap();
        let target = project_moments(&basis, &t.normalize_to_unit_ball(2.0).unwrap()).unwrap();
        let (loss, res) = evaluate_loss(&basis, &c, &target, 2.0, &LossConfig::default(), None).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert!((res.q_star.to_vector().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact(c in cloud(1, 50)) {
        let mut buf = Vec::new();
        write_cloud(&c, &mut buf).unwrap();
        prop_assert_eq!(read_cloud(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(a in cloud(1, 30), b in cloud(1, 30)) {
        prop_assert!(chamfer(&a, &a).abs() < 1e-15);
        prop_assert!((chamfer(&a, &b) - chamfer(&b, &a)).abs() < 1e-12);
        prop_assert!(chamfer(&a, &b) >= 0.0);
    }

    #[test]
    fn mirror_twice_is_identity(c in cloud(1, 30)) {
        for axis in [zernike_match::Axis::X, zernike_match::Axis::Y, zernike_match::Axis::Z] {
            prop_assert_eq!(c.mirror(axis).mirror(axis), c.clone());
        }
    }

    #[test]
    fn elongation_scales_only_its_axis(c in cloud(1, 30), f in 0.2f64..5.0) {
        let e = c.elongate(&Vector3::z(), f).unwrap();
        for (p, q) in c.points().iter().zip(e.points()) {
            prop_assert!((q.z - f * p.z).abs() <= 1e-12 * (1.0 + p.z.abs()));
            prop_assert_eq!((q.x, q.y), (p.x, p.y));
        }
    }
}
