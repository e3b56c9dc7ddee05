//! Aligned spectral matching loss and its exact gradients.
//!
//! `L = (1/N_spec) ‖c_t − D(q*) c_e‖² + (λ/N) ‖x_com‖²`, where `q*` maximizes
//! the overlap between the evolved and target spectra. Gradients combine the
//! analytic moment Jacobian (through the normalization by the target radius
//! and the center-of-mass shift) with implicit differentiation of the
//! stationarity condition `P ∇_q M = 0` at `q*`.

use nalgebra::{DMatrix, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_best_of, pinv_sym_with_rank, riemannian_gradient, riemannian_hessian, start_set,
    AlignmentConfig, AlignmentResult, Overlap,
};
use crate::cloud::{NormalizedCloud, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::rotation::{rotate_spectrum, UnitQuaternion, WignerBlockSet};
use crate::zernike::{project_moments, MomentTensor, ZernikeBasis};

const CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Center-of-mass penalty coefficient.
    pub lambda: f64,
    /// Relative singular-value cutoff of the rotational Hessian pseudoinverse.
    pub pinv_threshold: f64,
    pub alignment: AlignmentConfig,
    /// Random alignment starts used when no warm start is supplied.
    pub multi_start: usize,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            pinv_threshold: 0.01,
            alignment: AlignmentConfig::default(),
            multi_start: 5,
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(
                "loss: lambda must be nonnegative".into(),
            ));
        }
        if !(self.pinv_threshold > 0.0 && self.pinv_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "loss: pinv_threshold must lie in (0, 1)".into(),
            ));
        }
        if self.multi_start == 0 {
            return Err(Error::InvalidConfig(
                "loss: multi_start must be at least 1".into(),
            ));
        }
        self.alignment.validate()
    }
}

/// Loss value with gradients with respect to raw point coordinates and weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub value: f64,
    pub spectral_mse: f64,
    pub com_penalty: f64,
    pub grad_points: Vec<[f64; 3]>,
    pub grad_weights: Vec<f64>,
    pub q_star: UnitQuaternion,
    /// Norm of the part of the point/weight gradient carried by `∇q*`.
    pub implicit_term_norm: f64,
    /// Rank kept by the Hessian pseudoinverse.
    pub pinv_rank: usize,
    pub alignment_iterations: usize,
}

impl LossGradient {
    /// Euclidean norm of the stacked point and weight gradients.
    pub fn norm(&self) -> f64 {
        let p: f64 = self
            .grad_points
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        let w: f64 = self.grad_weights.iter().map(|v| v * v).sum();
        (p + w).sqrt()
    }

    /// `max |self − other| / max |other|` over all point and weight components.
    pub fn max_relative_error(&self, reference: &LossGradient) -> f64 {
        let a = self.grad_points.iter().flatten().chain(&self.grad_weights);
        let b = reference
            .grad_points
            .iter()
            .flatten()
            .chain(&reference.grad_weights);
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for (x, y) in a.zip(b) {
            num = num.max((x - y).abs());
            den = den.max(y.abs());
        }
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Loss at a supplied alignment, given the already rotated evolved spectrum.
pub fn shape_matching_loss(
    c_evol_aligned: &MomentTensor,
    c_target: &MomentTensor,
    com: &Point,
    n_agent: usize,
    lambda: f64,
) -> Result<f64> {
    c_evol_aligned.check_compatible(c_target)?;
    let mse = c_target.sub(c_evol_aligned).norm_squared() / c_target.n_spec() as f64;
    Ok(mse + com_penalty(com, n_agent, lambda))
}

fn com_penalty(com: &Point, n_agent: usize, lambda: f64) -> f64 {
    lambda / n_agent as f64 * com.norm_squared()
}

/// Exact `∂M/∂q` in ℝ⁴.
pub fn overlap_grad_q(
    c_evol: &MomentTensor,
    c_target: &MomentTensor,
    q: &UnitQuaternion,
) -> Result<Vector4<f64>> {
    Ok(Overlap::new(c_evol, c_target)?.value_grad(q).1)
}

/// Exact symmetric Euclidean Hessian `∂²M/∂q²`.
pub fn overlap_hessian_q(
    c_evol: &MomentTensor,
    c_target: &MomentTensor,
    q: &UnitQuaternion,
) -> Result<Matrix4<f64>> {
    Ok(Overlap::new(c_evol, c_target)?.value_grad_hess(q).2)
}

/// Dense moment Jacobian with respect to raw coordinates and weights.
#[derive(Clone, Debug)]
pub struct MomentJacobian {
    /// Flat slots per coefficient (padded layout).
    pub len: usize,
    /// `d_points[i * len + s]` = `∂c_s/∂x_i`.
    pub d_points: Vec<[f64; 3]>,
    /// `d_weights[i * len + s]` = `∂c_s/∂ω_i`.
    pub d_weights: Vec<f64>,
}

/// Exact partial derivatives of every moment with respect to each raw point
/// (including the center-of-mass coupling and the `1/r_max` scale) and each
/// weight.
pub fn moment_jacobian(basis: &ZernikeBasis, cloud: &NormalizedCloud) -> MomentJacobian {
    let len = MomentTensor::like(basis).data().len();
    let n = cloud.len();
    let inv_n = 1.0 / n as f64;
    let mut vals = vec![0.0; len];
    let mut grads = vec![[0.0; 3]; len];
    let mut d_points = vec![[0.0; 3]; n * len];
    let mut d_weights = vec![0.0; n * len];
    let mut mean = vec![[0.0; 3]; len];
    for (i, (p, w)) in cloud.points.iter().zip(&cloud.weights).enumerate() {
        basis.eval_all(p, &mut vals, Some(&mut grads));
        for s in 0..len {
            d_weights[i * len + s] = vals[s] * inv_n;
            for d in 0..3 {
                let g = w * grads[s][d] * inv_n / cloud.scale;
                d_points[i * len + s][d] = g;
                mean[s][d] += g * inv_n;
            }
        }
    }
    for i in 0..n {
        for s in 0..len {
            for d in 0..3 {
                d_points[i * len + s][d] -= mean[s][d];
            }
        }
    }
    MomentJacobian {
        len,
        d_points,
        d_weights,
    }
}

/// Vector–Jacobian products `uᵀ ∂c/∂x` and `uᵀ ∂c/∂ω` for several adjoints
/// `u` at once, in raw coordinates.
pub fn moment_vjp(
    basis: &ZernikeBasis,
    cloud: &NormalizedCloud,
    adjoints: &[&MomentTensor],
) -> Vec<(Vec<[f64; 3]>, Vec<f64>)> {
    let len = MomentTensor::like(basis).data().len();
    let n = cloud.len();
    let inv_n = 1.0 / n as f64;
    let na = adjoints.len();
    // Per point: na gradient 3-vectors and na weight derivatives.
    let per_point: Vec<(Vec<[f64; 3]>, Vec<f64>)> = cloud
        .points
        .par_chunks(CHUNK)
        .zip(cloud.weights.par_chunks(CHUNK))
        .flat_map_iter(|(pts, ws)| {
            let mut vals = vec![0.0; len];
            let mut grads = vec![[0.0; 3]; len];
            pts.iter()
                .zip(ws)
                .map(|(p, &w)| {
                    basis.eval_all(p, &mut vals, Some(&mut grads));
                    let mut gp = vec![[0.0; 3]; na];
                    let mut gw = vec![0.0; na];
                    for (a, u) in adjoints.iter().enumerate() {
                        let u = u.data();
                        let mut acc = [0.0; 3];
                        let mut accw = 0.0;
                        for s in 0..len {
                            let us = u[s];
                            if us != 0.0 {
                                accw += us * vals[s];
                                acc[0] += us * grads[s][0];
                                acc[1] += us * grads[s][1];
                                acc[2] += us * grads[s][2];
                            }
                        }
                        let f = w * inv_n / cloud.scale;
                        gp[a] = [acc[0] * f, acc[1] * f, acc[2] * f];
                        gw[a] = accw * inv_n;
                    }
                    (gp, gw)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    (0..na)
        .map(|a| {
            let mut mean = [0.0; 3];
            for (gp, _) in &per_point {
                for d in 0..3 {
                    mean[d] += gp[a][d];
                }
            }
            for m in mean.iter_mut() {
                *m *= inv_n;
            }
            let pts = per_point
                .iter()
                .map(|(gp, _)| [gp[a][0] - mean[0], gp[a][1] - mean[1], gp[a][2] - mean[2]])
                .collect();
            let ws = per_point.iter().map(|(_, gw)| gw[a]).collect();
            (pts, ws)
        })
        .collect()
}

/// `−[P(H − αI)P]⁺ · mixed` with the pseudoinverse keeping singular values
/// above `pinv_threshold × largest`. Returns the Jacobian and the kept rank.
pub fn implicit_quat_jacobian(
    riem_hess: &Matrix4<f64>,
    mixed: &DMatrix<f64>,
    pinv_threshold: f64,
) -> Result<(DMatrix<f64>, usize)> {
    let (pinv, rank) = pinv_sym_with_rank(riem_hess, pinv_threshold);
    if rank == 0 || riem_hess.abs().max() < 1e-300 {
        return Err(Error::DegenerateHessian);
    }
    let p = DMatrix::from_fn(4, 4, |i, j| pinv[(i, j)]);
    Ok((-(p * mixed), rank))
}

/// `v_j = ∂(∂M/∂q_j)/∂c_e = (1/N_spec) (∂D/∂q_j)ᵀ c_t`, one tensor per component.
fn mixed_adjoints(grad_blocks: &[WignerBlockSet; 4], c_target: &MomentTensor) -> [MomentTensor; 4] {
    let inv = 1.0 / c_target.n_spec() as f64;
    std::array::from_fn(|j| {
        let t =
            rotate_spectrum(c_target, &grad_blocks[j].transpose()).expect("matching truncation");
        t.scale(inv)
    })
}

/// Everything shared by the analytic gradient and its diagnostics.
struct Evaluation {
    normalized: NormalizedCloud,
    c_evol: MomentTensor,
    alignment: AlignmentResult,
    spectral_mse: f64,
    com_penalty: f64,
    com: Point,
}

fn evaluate(
    basis: &ZernikeBasis,
    cloud: &PointCloud,
    target: &MomentTensor,
    r_max: f64,
    cfg: &LossConfig,
    warm_q: Option<UnitQuaternion>,
) -> Result<(Evaluation, Overlap)> {
    cfg.validate()?;
    let normalized = cloud.normalize_to_unit_ball(r_max)?;
    let c_evol = project_moments(basis, &normalized)?;
    c_evol.check_compatible(target)?;
    let overlap = Overlap::new(&c_evol, target)?;
    let starts = match warm_q {
        Some(q) => vec![q],
        None => start_set(
            cfg.multi_start,
            None,
            &mut stream(cfg.seed, streams::ALIGN_INIT),
        ),
    };
    let alignment = align_best_of(&overlap, &starts, &cfg.alignment)?;
    let d = overlap.table().eval(&alignment.q_star);
    let aligned = rotate_spectrum(&c_evol, &d)?;
    let com = cloud.center_of_mass();
    let spectral_mse = target.sub(&aligned).norm_squared() / target.n_spec() as f64;
    let com_penalty = com_penalty(&com, cloud.len(), cfg.lambda);
    Ok((
        Evaluation {
            normalized,
            c_evol,
            alignment,
            spectral_mse,
            com_penalty,
            com,
        },
        overlap,
    ))
}

/// End-to-end loss with a fresh alignment.
pub fn evaluate_loss(
    basis: &ZernikeBasis,
    cloud: &PointCloud,
    target: &MomentTensor,
    r_max: f64,
    cfg: &LossConfig,
    warm_q: Option<UnitQuaternion>,
) -> Result<(f64, AlignmentResult)> {
    let (e, _) = evaluate(basis, cloud, target, r_max, cfg, warm_q)?;
    Ok((e.spectral_mse + e.com_penalty, e.alignment))
}

/// Loss and exact gradients with respect to the raw points and weights of
/// `cloud`, normalized by the target radius `r_max`.
pub fn total_gradient(
    basis: &ZernikeBasis,
    cloud: &PointCloud,
    target: &MomentTensor,
    r_max: f64,
    cfg: &LossConfig,
    warm_q: Option<UnitQuaternion>,
) -> Result<LossGradient> {
    let (e, overlap) = evaluate(basis, cloud, target, r_max, cfg, warm_q)?;
    let q = e.alignment.q_star;
    let jet = overlap.table().eval_jet(&q, false);
    let inv_spec = 1.0 / target.n_spec() as f64;

    // Residual r = c_t − D c_e and the explicit adjoint −(2/N_spec) Dᵀ r.
    let aligned = rotate_spectrum(&e.c_evol, &jet.value)?;
    let resid = target.sub(&aligned);
    let explicit = rotate_spectrum(&resid, &jet.value.transpose())?.scale(-2.0 * inv_spec);

    // ∂L/∂q_j = −(2/N_spec) rᵀ (∂D/∂q_j) c_e.
    let mut dl_dq = Vector4::zeros();
    for j in 0..4 {
        let dc = rotate_spectrum(&e.c_evol, &jet.grad[j])?;
        dl_dq[j] = -2.0 * inv_spec * resid.dot(&dc);
    }
    let (_, g, h) = overlap.value_grad_hess(&q);
    let rh = riemannian_hessian(&h, &q, &g);
    let (pinv, rank) = pinv_sym_with_rank(&rh, cfg.pinv_threshold);
    let dl_dq_t = riemannian_gradient(&q, &dl_dq);
    // With no tangential loss sensitivity the implicit term vanishes whatever
    // the Hessian, so a degenerate one only matters otherwise.
    if rank == 0 && dl_dq_t.norm() > 0.0 {
        return Err(Error::DegenerateHessian);
    }
    let s = pinv * dl_dq_t;

    // Implicit adjoint −Σ_j s_j v_j.
    let v = mixed_adjoints(&jet.grad, target);
    let mut implicit = MomentTensor::zeros(target.n_max(), target.l_max());
    for j in 0..4 {
        implicit = implicit.add(&v[j].scale(-s[j]));
    }

    let mut out = moment_vjp(basis, &e.normalized, &[&explicit, &implicit]);
    let (imp_pts, imp_w) = out.pop().expect("two adjoints");
    let (exp_pts, exp_w) = out.pop().expect("two adjoints");
    let n = cloud.len() as f64;
    let pen = e.com * (2.0 * cfg.lambda / (n * n));
    let mut implicit_sq = 0.0;
    let grad_points = exp_pts
        .iter()
        .zip(&imp_pts)
        .map(|(a, b)| {
            implicit_sq += b.iter().map(|v| v * v).sum::<f64>();
            [
                a[0] + b[0] + pen[0],
                a[1] + b[1] + pen[1],
                a[2] + b[2] + pen[2],
            ]
        })
        .collect();
    let grad_weights = exp_w
        .iter()
        .zip(&imp_w)
        .map(|(a, b)| {
            implicit_sq += b * b;
            a + b
        })
        .collect();
    Ok(LossGradient {
        value: e.spectral_mse + e.com_penalty,
        spectral_mse: e.spectral_mse,
        com_penalty: e.com_penalty,
        grad_points,
        grad_weights,
        q_star: q,
        implicit_term_norm: implicit_sq.sqrt(),
        pinv_rank: rank,
        alignment_iterations: e.alignment.iterations,
    })
}

/// Jacobian `∇_X q*` (4 × 3N, columns ordered point-major then axis) by
/// implicit differentiation at the converged alignment of `cloud`.
pub fn quat_point_jacobian(
    basis: &ZernikeBasis,
    cloud: &PointCloud,
    target: &MomentTensor,
    r_max: f64,
    cfg: &LossConfig,
    warm_q: Option<UnitQuaternion>,
) -> Result<(UnitQuaternion, DMatrix<f64>, usize)> {
    let (e, overlap) = evaluate(basis, cloud, target, r_max, cfg, warm_q)?;
    let q = e.alignment.q_star;
    let jet = overlap.table().eval_jet(&q, false);
    let v = mixed_adjoints(&jet.grad, target);
    let vj = moment_vjp(basis, &e.normalized, &[&v[0], &v[1], &v[2], &v[3]]);
    let n = cloud.len();
    let mut mixed = DMatrix::zeros(4, 3 * n);
    for j in 0..4 {
        for i in 0..n {
            for d in 0..3 {
                mixed[(j, 3 * i + d)] = vj[j].0[i][d];
            }
        }
    }
    // Project onto the tangent space: the stationarity condition is P ∇M = 0.
    let qv = q.to_vector();
    let p = Matrix4::identity() - qv * qv.transpose();
    let pm = DMatrix::from_fn(4, 4, |i, j| p[(i, j)]) * mixed;
    let (_, g, h) = overlap.value_grad_hess(&q);
    let rh = riemannian_hessian(&h, &q, &g);
    let (jac, rank) = implicit_quat_jacobian(&rh, &pm, cfg.pinv_threshold)?;
    Ok((q, jac, rank))
}

/// Central finite differences of the end-to-end loss. Every probe re-solves
/// the alignment from the base optimum with `cfg.alignment`; tighten that
/// config (small threshold, Newton polish) for oracle use.
///
/// Returns the gradient and the number of loss evaluations: `6N + 1`, plus
/// `2N` when `with_weights` is set (otherwise `grad_weights` is all zero).
pub fn finite_difference_gradient(
    basis: &ZernikeBasis,
    cloud: &PointCloud,
    target: &MomentTensor,
    r_max: f64,
    cfg: &LossConfig,
    h: f64,
    warm_q: Option<UnitQuaternion>,
    with_weights: bool,
) -> Result<(LossGradient, usize)> {
    let (base, align0) = evaluate_loss(basis, cloud, target, r_max, cfg, warm_q)?;
    let q0 = align0.q_star;
    let (points, weights) = (cloud.points().to_vec(), cloud.weights().to_vec());
    let n = points.len();
    let probe = |pts: Vec<Point>, ws: Vec<f64>| -> Result<f64> {
        let c = PointCloud::new(pts, ws)?;
        Ok(evaluate_loss(basis, &c, target, r_max, cfg, Some(q0))?.0)
    };
    let point_grads: Vec<Result<[f64; 3]>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 3];
            for (d, gd) in g.iter_mut().enumerate() {
                let mut plus = points.clone();
                plus[i][d] += h;
                let mut minus = points.clone();
                minus[i][d] -= h;
                *gd = (probe(plus, weights.clone())? - probe(minus, weights.clone())?) / (2.0 * h);
            }
            Ok(g)
        })
        .collect();
    let weight_grads: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !with_weights {
                return Ok(0.0);
            }
            let mut plus = weights.clone();
            plus[i] += h;
            let mut minus = weights.clone();
            minus[i] -= h;
            Ok((probe(points.clone(), plus)? - probe(points.clone(), minus)?) / (2.0 * h))
        })
        .collect();
    let grad_points = point_grads.into_iter().collect::<Result<Vec<_>>>()?;
    let grad_weights = weight_grads.into_iter().collect::<Result<Vec<_>>>()?;
    let com = cloud.center_of_mass();
    let pen = com_penalty(&com, n, cfg.lambda);
    let evaluations = 1 + 6 * n + if with_weights { 2 * n } else { 0 };
    Ok((
        LossGradient {
            value: base,
            spectral_mse: base - pen,
            com_penalty: pen,
            grad_points,
            grad_weights,
            q_star: q0,
            implicit_term_norm: 0.0,
            pinv_rank: 0,
            alignment_iterations: align0.iterations,
        },
        evaluations,
    ))
}

/// Tight alignment settings for finite-difference oracles.
pub fn oracle_alignment(base: &AlignmentConfig) -> AlignmentConfig {
    AlignmentConfig {
        convergence_threshold: 1e-12,
        newton_polish: 4,
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rotation::WignerTable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(-1.0..1.2),
                    rng.random_range(-0.7..0.6),
                    rng.random_range(-0.5..0.9),
                )
            })
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn loss_zero_and_penalty_only_cases() {
        let c = MomentTensor::zeros(4, 4);
        assert_eq!(
            shape_matching_loss(&c, &c, &Point::zeros(), 10, 1.0).unwrap(),
            0.0
        );
        let v = shape_matching_loss(&c, &c, &Point::new(1.0, 0.0, 0.0), 4, 1.0).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_cross_term_identity() {
        let b = ZernikeBasis::new(6, 6).unwrap();
        let ce = project_moments(&b, &small_cloud(40, 1).normalize_self().unwrap()).unwrap();
        let ct = project_moments(&b, &small_cloud(40, 2).normalize_self().unwrap()).unwrap();
        let q = UnitQuaternion::random(&mut ChaCha8Rng::seed_from_u64(3));
        let d = WignerTable::new(6).eval(&q);
        let com = Point::new(0.1, -0.2, 0.3);
        let l =
            shape_matching_loss(&rotate_spectrum(&ce, &d).unwrap(), &ct, &com, 40, 0.7).unwrap();
        let m = Overlap::new(&ce, &ct).unwrap().value(&q);
        let ns = ct.n_spec() as f64;
        let identity = (ct.norm_squared() + ce.norm_squared()) / ns - 2.0 * m
            + 0.7 / 40.0 * com.norm_squared();
        assert!((l - identity).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = ZernikeBasis::new(6, 4).unwrap();
        let cloud = small_cloud(12, 4)
            .with_weights((0..12).map(|i| 1.0 + 0.1 * i as f64).collect())
            .unwrap();
        let r = 1.7;
        let jac = moment_jacobian(&b, &cloud.normalize_to_unit_ball(r).unwrap());
        let h = 1e-6;
        let proj =
            |c: &PointCloud| project_moments(&b, &c.normalize_to_unit_ball(r).unwrap()).unwrap();
        let (pts, ws) = cloud.clone().into_parts();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..12 {
            for d in 0..3 {
                let mut p = pts.clone();
                p[i][d] += h;
                let mut m = pts.clone();
                m[i][d] -= h;
                let cp = proj(&PointCloud::new(p, ws.clone()).unwrap());
                let cm = proj(&PointCloud::new(m, ws.clone()).unwrap());
                for s in 0..jac.len {
                    let fd = (cp.data()[s] - cm.data()[s]) / (2.0 * h);
                    worst = worst.max((fd - jac.d_points[i * jac.len + s][d]).abs());
                    scale = scale.max(fd.abs());
                }
            }
            // ∂c/∂ω_i = Z(x_i)/N
            let z = {
                let nc = cloud.normalize_to_unit_ball(r).unwrap();
                let mut v = vec![0.0; jac.len];
                b.eval_all(&nc.points[i], &mut v, None);
                v
            };
            for s in 0..jac.len {
                assert!((jac.d_weights[i * jac.len + s] - z[s] / 12.0).abs() < 1e-15);
            }
        }
        assert!(worst < 1e-6 * scale, "worst {worst} scale {scale}");
    }

    #[test]
    fn jacobian_rows_sum_to_zero_under_translation() {
        // A rigid translation leaves every normalized moment unchanged, so the
        // per-coefficient sum of point Jacobians must vanish.
        let b = ZernikeBasis::new(6, 4).unwrap();
        let cloud = small_cloud(15, 5);
        let jac = moment_jacobian(&b, &cloud.normalize_to_unit_ball(1.5).unwrap());
        for s in 0..jac.len {
            for d in 0..3 {
                let sum: f64 = (0..15).map(|i| jac.d_points[i * jac.len + s][d]).sum();
                assert!(sum.abs() < 1e-8);
            }
        }
        let shifted = cloud.translate(&Point::new(1e-4, -2e-4, 3e-4));
        let c1 = project_moments(&b, &cloud.normalize_to_unit_ball(1.5).unwrap()).unwrap();
        let c2 = project_moments(&b, &shifted.normalize_to_unit_ball(1.5).unwrap()).unwrap();
        assert!(c1.max_abs_diff(&c2) < 1e-12);
    }

    #[test]
    fn vjp_matches_dense_jacobian() {
        let b = ZernikeBasis::new(6, 4).unwrap();
        let cloud = small_cloud(300, 6);
        let nc = cloud.normalize_to_unit_ball(1.4).unwrap();
        let jac = moment_jacobian(&b, &nc);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut u = MomentTensor::like(&b);
        for s in 0..jac.len {
            if u.layout().is_admissible_slot(s) {
                u.data_mut()[s] = rng.random_range(-1.0..1.0);
            }
        }
        let out = moment_vjp(&b, &nc, &[&u]);
        for i in 0..300 {
            for d in 0..3 {
                let dense: f64 = (0..jac.len)
                    .map(|s| u.data()[s] * jac.d_points[i * jac.len + s][d])
                    .sum();
                assert!((dense - out[0].0[i][d]).abs() < 1e-12);
            }
            let dw: f64 = (0..jac.len)
                .map(|s| u.data()[s] * jac.d_weights[i * jac.len + s])
                .sum();
            assert!((dw - out[0].1[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn implicit_jacobian_basics() {
        let rh = Matrix4::from_diagonal(&Vector4::new(0.0, 2.0, -1.0, 1e-5));
        let (j, rank) = implicit_quat_jacobian(&rh, &DMatrix::zeros(4, 6), 0.01).unwrap();
        assert_eq!(j, DMatrix::zeros(4, 6));
        assert_eq!(rank, 2);
        assert!(matches!(
            implicit_quat_jacobian(&Matrix4::zeros(), &DMatrix::zeros(4, 1), 0.01),
            Err(Error::DegenerateHessian)
        ));
    }

    #[test]
    fn global_minimum_has_zero_loss_and_gradient() {
        let b = ZernikeBasis::new(6, 4).unwrap();
        let target = fixtures::bunny(200, 3).unwrap();
        let target = target.translate(&-target.center_of_mass());
        let r = target.max_radius();
        let ct = project_moments(&b, &target.normalize_to_unit_ball(r).unwrap()).unwrap();
        let g = total_gradient(
            &b,
            &target,
            &ct,
            r,
            &LossConfig::default(),
            Some(UnitQuaternion::identity()),
        )
        .unwrap();
        assert!(g.value <= 1e-10);
        assert!(g.norm() <= 1e-6, "norm {}", g.norm());
    }

    #[test]
    fn penalty_only_gradient() {
        let b = ZernikeBasis::new(2, 2).unwrap();
        let cloud = small_cloud(8, 8).translate(&Point::new(0.5, -0.25, 2.0));
        let zero = MomentTensor::like(&b);
        let cfg = LossConfig {
            lambda: 50.0,
            ..Default::default()
        };
        // Zero weights and a zero target leave only the penalty.
        let w0 = cloud.with_weights(vec![0.0; 8]).unwrap();
        let g =
            total_gradient(&b, &w0, &zero, 3.0, &cfg, Some(UnitQuaternion::identity())).unwrap();
        let com = cloud.center_of_mass();
        assert!((g.value - 50.0 / 8.0 * com.norm_squared()).abs() < 1e-12);
        for gp in &g.grad_points {
            for d in 0..3 {
                let expect = 2.0 * 50.0 * com[d] / 64.0;
                assert!((gp[d] - expect).abs() < 1e-12 * expect.abs().max(1.0));
            }
        }
        assert_eq!(g.implicit_term_norm, 0.0);
    }
}
