//! End-to-end gradient checks against finite differences of the full loss.

use zernike_match::alignment::AlignmentConfig;
use zernike_match::fixtures;
use zernike_match::loss::{
    evaluate_loss, finite_difference_gradient, oracle_alignment, quat_point_jacobian,
    total_gradient, LossConfig,
};
use zernike_match::zernike::project_moments;
use zernike_match::{MomentTensor, PointCloud, ZernikeBasis};

fn target(n: usize, seed: u64) -> (PointCloud, f64) {
    let t = fixtures::bunny(n, seed).unwrap();
    let t = t.translate(&-t.center_of_mass());
    let r = t.max_radius();
    (t, r)
}

fn tight() -> LossConfig {
    LossConfig {
        alignment: oracle_alignment(&AlignmentConfig::default()),
        ..Default::default()
    }
}

fn moments(b: &ZernikeBasis, c: &PointCloud, r: f64) -> MomentTensor {
    project_moments(b, &c.normalize_to_unit_ball(r).unwrap()).unwrap()
}

fn evolved(n: usize, seed: u64) -> PointCloud {
    fixtures::ellipsoid(n, [3.0, 1.8, 1.2], seed).unwrap()
}

fn check_against_fd(x: &PointCloud, seed: u64) -> f64 {
    let b = ZernikeBasis::new(8, 4).unwrap();
    let (t, r) = target(80, seed);
    let ct = moments(&b, &t, r);
    let cfg = tight();
    let g = total_gradient(&b, x, &ct, r, &cfg, None).unwrap();
    let (fd, evals) =
        finite_difference_gradient(&b, x, &ct, r, &cfg, 1e-5, Some(g.q_star), true).unwrap();
    assert_eq!(evals, 1 + 8 * x.len());
    assert!((g.value - fd.value).abs() < 1e-12);
    g.max_relative_error(&fd)
}

#[test]
fn total_gradient_matches_finite_differences_unweighted() {
    for seed in 1..=3 {
        let err = check_against_fd(&evolved(30, seed), seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn total_gradient_matches_finite_differences_weighted() {
    for seed in 1..=3 {
        let x = evolved(30, 10 + seed);
        let w = x
            .points()
            .iter()
            .map(|p| if p.z >= 0.0 { 1.0 } else { 2.0 })
            .collect();
        let err = check_against_fd(&x.with_weights(w).unwrap(), seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn fd_gradient_is_deterministic() {
    let b = ZernikeBasis::new(4, 4).unwrap();
    let (t, r) = target(40, 5);
    let ct = moments(&b, &t, r);
    let x = evolved(10, 6);
    let q0 = zernike_match::UnitQuaternion::identity();
    let a = finite_difference_gradient(&b, &x, &ct, r, &tight(), 1e-5, Some(q0), false).unwrap();
    let c = finite_difference_gradient(&b, &x, &ct, r, &tight(), 1e-5, Some(q0), false).unwrap();
    assert_eq!(a.0, c.0);
    assert_eq!(a.1, 1 + 6 * 10);
}

#[test]
fn implicit_term_is_small_at_tight_convergence() {
    let b = ZernikeBasis::new(8, 4).unwrap();
    let (t, r) = target(80, 7);
    let ct = moments(&b, &t, r);
    let mut cfg = tight();
    cfg.alignment.convergence_threshold = 1e-10;
    let g = total_gradient(&b, &evolved(30, 8), &ct, r, &cfg, None).unwrap();
    assert!(
        g.implicit_term_norm <= 1e-3 * g.norm(),
        "{} vs {}",
        g.implicit_term_norm,
        g.norm()
    );
    assert!(g.pinv_rank <= 3);
}

#[test]
fn implicit_quaternion_jacobian_matches_resolve() {
    let b = ZernikeBasis::new(8, 4).unwrap();
    let (t, r) = target(80, 9);
    let ct = moments(&b, &t, r);
    let x = evolved(20, 10);
    let cfg = tight();
    let (q, jac, rank) = quat_point_jacobian(&b, &x, &ct, r, &cfg, None).unwrap();
    assert!(rank <= 3);
    let h = 1e-5;
    let pts = x.points().to_vec();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..x.len() {
        for d in 0..3 {
            let solve = |delta: f64| {
                let mut p = pts.clone();
                p[i][d] += delta;
                let c = PointCloud::new(p, x.weights().to_vec()).unwrap();
                evaluate_loss(&b, &c, &ct, r, &cfg, Some(q))
                    .unwrap()
                    .1
                    .q_star
                    .to_vector()
            };
            let fd = (solve(h) - solve(-h)) / (2.0 * h);
            for j in 0..4 {
                worst = worst.max((fd[j] - jac[(j, 3 * i + d)]).abs());
                scale = scale.max(fd[j].abs());
            }
        }
    }
    assert!(worst <= 1e-3 * scale, "worst {worst} scale {scale}");
}

#[test]
fn loss_is_invariant_to_rotation_and_shuffle() {
    use rand::SeedableRng;
    let b = ZernikeBasis::new(8, 6).unwrap();
    let (t, r) = target(150, 11);
    let ct = moments(&b, &t, r);
    let x = evolved(120, 12);
    let cfg = LossConfig {
        multi_start: 5,
        ..tight()
    };
    let (base, _) = evaluate_loss(&b, &x, &ct, r, &cfg, None).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
    for _ in 0..3 {
        let q = zernike_match::UnitQuaternion::random(&mut rng);
        let (rot, _) = evaluate_loss(&b, &x.rotate(&q), &ct, r, &cfg, None).unwrap();
        assert!((rot - base).abs() <= 1e-6, "{rot} vs {base}");
    }
    let shuffled = fixtures::shuffled(&x, 14).unwrap();
    let (sh, _) = evaluate_loss(&b, &shuffled, &ct, r, &cfg, None).unwrap();
    assert!((sh - base).abs() <= 1e-12);
}

#[test]
fn loss_detects_mirror_images() {
    use zernike_match::cloud::Axis;
    let b = ZernikeBasis::new(10, 8).unwrap();
    let (t, r) = target(400, 15);
    let ct = moments(&b, &t, r);
    let cfg = LossConfig {
        multi_start: 8,
        ..tight()
    };
    let q = zernike_match::UnitQuaternion::from_axis_angle(
        &nalgebra::Vector3::new(1.0, 2.0, -0.5),
        1.1,
    )
    .unwrap();
    let (rotated, _) = evaluate_loss(&b, &t.rotate(&q), &ct, r, &cfg, None).unwrap();
    let (mirrored, _) = evaluate_loss(&b, &t.mirror(Axis::X), &ct, r, &cfg, None).unwrap();
    assert!(
        mirrored > 10.0 * rotated,
        "mirrored {mirrored} rotated {rotated}"
    );
}
