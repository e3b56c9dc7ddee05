use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Marginal feasibility at which Sinkhorn stops.
pub const MARGINAL_TOLERANCE: f64 = 1e-6;

/// Outcome of an entropic transport solve. `converged` is false when the
/// iteration budget ran out first; the achieved marginal error is reported
/// either way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub value: f64,
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Log-domain Sinkhorn solution of an entropic transport problem.
#[derive(Clone, Debug)]
pub struct SinkhornPlan {
    pub plan: DMatrix<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport between histograms `a` and `b` under `cost`,
/// iterated in the log domain so small `eps` stays stable. `warm` supplies
/// initial dual potentials.
pub fn sinkhorn_log(
    cost: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    eps: f64,
    max_iter: usize,
    warm: Option<(Vec<f64>, Vec<f64>)>,
) -> SinkhornPlan {
    let (n, m) = cost.shape();
    let (mut f, mut g) = warm.unwrap_or_else(|| (vec![0.0; n], vec![0.0; m]));
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    // Column-major storage: column j is contiguous.
    let ct = cost.transpose();
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        f = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = ct.column(i);
                eps * la[i] - eps * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / eps))
            })
            .collect();
        g = (0..m)
            .into_par_iter()
            .map(|j| {
                let col = cost.column(j);
                eps * lb[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - col[i]) / eps))
            })
            .collect();
        // Columns are exact after the g update; measure the row marginals.
        err = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = ct.column(i);
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum();
                (s - a[i]).abs()
            })
            .sum();
        if err <= MARGINAL_TOLERANCE {
            break;
        }
    }
    let plan = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    SinkhornPlan {
        plan,
        f,
        g,
        marginal_error: err,
        iterations: it,
        converged: err <= MARGINAL_TOLERANCE,
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn distance_matrix(x: &[Point], y: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), y.len(), |i, j| (x[i] - y[j]).norm())
}

fn check_eps(eps: f64, max_iter: usize) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "entropic regularization must be positive, got {eps}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    Ok(())
}

/// Entropic earth mover's distance: transport cost `Σ π_ij ‖x_i − y_j‖` of
/// the regularized plan between uniform marginals.
pub fn sinkhorn_emd(
    x: &PointCloud,
    y: &PointCloud,
    eps: f64,
    max_iter: usize,
) -> Result<TransportResult> {
    check_eps(eps, max_iter)?;
    let c = distance_matrix(x.points(), y.points());
    let s = sinkhorn_log(
        &c,
        &uniform(x.len()),
        &uniform(y.len()),
        eps,
        max_iter,
        None,
    );
    Ok(TransportResult {
        value: s.plan.component_mul(&c).sum(),
        marginal_error: s.marginal_error,
        iterations: s.iterations,
        converged: s.converged,
    })
}

/// Squared-loss Gromov–Wasserstein tensor contracted with `plan`:
/// `L_ij = Σ_{kl} (C1_ik − C2_jl)² π_kl`.
fn gw_tensor(
    c1: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    plan: &DMatrix<f64>,
) -> DMatrix<f64> {
    let c1sq = c1.component_mul(c1);
    let c2sq = c2.component_mul(c2);
    let av = nalgebra::DVector::from_column_slice(a);
    let bv = nalgebra::DVector::from_column_slice(b);
    let left = &c1sq * av;
    let right = &c2sq * bv;
    let cross = c1 * plan * c2.transpose();
    DMatrix::from_fn(c1.nrows(), c2.nrows(), |i, j| {
        left[i] + right[j] - 2.0 * cross[(i, j)]
    })
}

/// Entropic Gromov–Wasserstein discrepancy between the intra-cloud distance
/// matrices, by alternating Sinkhorn projections from `π = abᵀ`.
/// `max_iter` bounds both the outer linearizations and each inner solve.
pub fn entropic_gw(
    x: &PointCloud,
    y: &PointCloud,
    eps: f64,
    max_iter: usize,
) -> Result<TransportResult> {
    check_eps(eps, max_iter)?;
    let c1 = distance_matrix(x.points(), x.points());
    let c2 = distance_matrix(y.points(), y.points());
    let (a, b) = (uniform(x.len()), uniform(y.len()));
    let mut plan = DMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j]);
    let mut potentials = None;
    let mut outer = 0;
    let mut converged = false;
    let mut marginal_error = 0.0;
    while outer < max_iter {
        outer += 1;
        let tens = gw_tensor(&c1, &c2, &a, &b, &plan);
        let s = sinkhorn_log(&tens, &a, &b, eps, max_iter, potentials.take());
        let change = (&s.plan - &plan).abs().max();
        plan = s.plan;
        marginal_error = s.marginal_error;
        potentials = Some((s.f, s.g));
        if change < 1e-10 && s.converged {
            converged = true;
            break;
        }
    }
    let value = gw_tensor(&c1, &c2, &a, &b, &plan)
        .component_mul(&plan)
        .sum();
    Ok(TransportResult {
        value,
        marginal_error,
        iterations: outer,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rotation::UnitQuaternion;
    use rand::SeedableRng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_points(pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn emd_self_distance_positive_and_marginals_feasible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = PointCloud::from_points(fixtures::uniform_ball(40, 1.0, &mut rng)).unwrap();
        let r = sinkhorn_emd(&x, &x, 0.05, 10_000).unwrap();
        assert!(r.converged && r.marginal_error <= MARGINAL_TOLERANCE);
        assert!(r.value > 0.0);
    }

    #[test]
    fn emd_small_eps_approaches_assignment() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let y = cloud(&[[0.9, 0.2, 0.0], [0.1, -0.3, 0.0]]);
        let d = |p: &Point, q: &Point| (p - q).norm();
        let (px, py) = (x.points(), y.points());
        let exact = (0.5 * (d(&px[0], &py[0]) + d(&px[1], &py[1])))
            .min(0.5 * (d(&px[0], &py[1]) + d(&px[1], &py[0])));
        let r = sinkhorn_emd(&x, &y, 1e-3, 10_000).unwrap();
        assert!((r.value - exact).abs() < 1e-6, "{} vs {exact}", r.value);
    }

    #[test]
    fn emd_decreases_with_eps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = PointCloud::from_points(fixtures::uniform_ball(30, 1.0, &mut rng)).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
            let v = sinkhorn_emd(&x, &x, eps, 100_000).unwrap().value;
            assert!(v < last, "eps {eps}: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn emd_rejects_bad_eps() {
        let x = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(sinkhorn_emd(&x, &x, 0.0, 10).is_err());
        assert!(entropic_gw(&x, &x, -1.0, 10).is_err());
    }

    #[test]
    fn gw_invariant_to_permutation_and_rotation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = PointCloud::from_points(fixtures::uniform_ball(40, 1.0, &mut rng)).unwrap();
        let base = entropic_gw(&x, &x, 0.05, 2000).unwrap();
        assert!(base.converged);
        let p = entropic_gw(&x, &fixtures::shuffled(&x, 4).unwrap(), 0.05, 2000).unwrap();
        let q = UnitQuaternion::random(&mut rng);
        let r = entropic_gw(&x, &x.rotate(&q), 0.05, 2000).unwrap();
        assert!(
            (p.value - base.value).abs() < 1e-8,
            "{} {}",
            p.value,
            base.value
        );
        assert!(
            (r.value - base.value).abs() < 1e-8,
            "{} {}",
            r.value,
            base.value
        );
    }

    fn gw_objective(cx: &DMatrix<f64>, cy: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let (n, m) = p.shape();
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                for j in 0..m {
                    for l in 0..m {
                        s += p[(i, j)] * p[(k, l)] * (cx[(i, k)] - cy[(j, l)]).powi(2);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn gw_two_point_grid_oracle() {
        // Every 2-point instance is symmetric under swapping both points, so
        // the uniform coupling is stationary; above ε = d_x d_y it is also the
        // unique minimizer of the entropic objective, which is what the grid
        // scans here.
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let y = cloud(&[[0.0, 0.0, 0.0], [0.0, 1.7, 0.0]]);
        let cx = distance_matrix(x.points(), x.points());
        let cy = distance_matrix(y.points(), y.points());
        let eps = 2.0;
        let plan = |t: f64| DMatrix::from_row_slice(2, 2, &[t, 0.5 - t, 0.5 - t, t]);
        let entropic = |t: f64| {
            let p = plan(t);
            gw_objective(&cx, &cy, &p)
                + eps
                    * p.iter()
                        .map(|v| if *v > 0.0 { v * v.ln() } else { 0.0 })
                        .sum::<f64>()
        };
        let t_best = (0..=20_000)
            .map(|i| 0.5 * i as f64 / 20_000.0)
            .min_by(|a, b| entropic(*a).total_cmp(&entropic(*b)))
            .unwrap();
        let r = entropic_gw(&x, &y, eps, 10_000).unwrap();
        let expect = gw_objective(&cx, &cy, &plan(t_best));
        assert!(r.converged);
        assert!((r.value - expect).abs() < 1e-3, "{} vs {expect}", r.value);
    }

    #[test]
    fn gw_three_point_grid_oracle() {
        // Asymmetric triangles: small ε should reach the unregularized optimum.
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.2, 0.0]]);
        let y = cloud(&[[0.0, 0.0, 0.0], [0.0, 0.0, 1.1], [1.9, 0.0, 0.2]]);
        let cx = distance_matrix(x.points(), x.points());
        let cy = distance_matrix(y.points(), y.points());
        let third = 1.0 / 3.0;
        let complete = |p: [f64; 4]| {
            let r0 = third - p[0] - p[1];
            let r1 = third - p[2] - p[3];
            let c0 = third - p[0] - p[2];
            let c1 = third - p[1] - p[3];
            let last = third - r0 - r1;
            let m = DMatrix::from_row_slice(3, 3, &[p[0], p[1], r0, p[2], p[3], r1, c0, c1, last]);
            (m.iter().all(|v| *v >= -1e-15)).then_some(m)
        };
        // Coarse scan of the 4-parameter polytope, then two zoomed refinements.
        let mut best = (f64::INFINITY, [0.0; 4]);
        let mut center = [third / 2.0; 4];
        let mut half = third / 2.0;
        for _ in 0..3 {
            let steps = 30;
            let lo: Vec<f64> = center.iter().map(|c| c - half).collect();
            for a in 0..=steps {
                for b in 0..=steps {
                    for c in 0..=steps {
                        for d in 0..=steps {
                            let h = 2.0 * half / steps as f64;
                            let p = [
                                lo[0] + a as f64 * h,
                                lo[1] + b as f64 * h,
                                lo[2] + c as f64 * h,
                                lo[3] + d as f64 * h,
                            ];
                            if p.iter().any(|v| *v < 0.0) {
                                continue;
                            }
                            if let Some(m) = complete(p) {
                                let v = gw_objective(&cx, &cy, &m);
                                if v < best.0 {
                                    best = (v, p);
                                }
                            }
                        }
                    }
                }
            }
            center = best.1;
            half /= 6.0;
        }
        let r = entropic_gw(&x, &y, 1e-3, 20_000).unwrap();
        assert!((r.value - best.0).abs() < 1e-3, "{} vs {}", r.value, best.0);
    }
}
