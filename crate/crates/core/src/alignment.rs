//! The inner problem: maximize the spectral overlap over unit quaternions.
//!
//! `M(q) = (1/N_spec) Σ c_targetᵀ D(q) c_evol`. Ascent runs ADAM in the
//! ambient 4-space on the projected (Riemannian) gradient of `−M`, re-projects
//! the ADAM direction onto the tangent space and retracts with the geodesic
//! exponential map.

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{sym_index, UnitQuaternion, WignerBlockSet, WignerTable};
use crate::zernike::MomentTensor;

/// Tolerance on `|⟨q, v⟩|` accepted by [`exp_map_step`].
pub const TANGENT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    pub learning_rate: f64,
    /// Stop once `|M_k − M_{k−1}| < convergence_threshold`.
    pub convergence_threshold: f64,
    pub max_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optional extra stop on the Riemannian gradient norm.
    pub gradient_tolerance: Option<f64>,
    /// Riemannian Newton steps applied after the ADAM phase.
    pub newton_polish: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            convergence_threshold: 1e-8,
            max_iterations: 5000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gradient_tolerance: None,
            newton_polish: 0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("alignment: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.convergence_threshold > 0.0) {
            return bad("convergence_threshold must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("ADAM betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub q_star: UnitQuaternion,
    pub iterations: usize,
    pub converged: bool,
    pub final_overlap: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub overlap_trace: Vec<f64>,
}

/// Precontracted overlap `M(q)` for a fixed pair of spectra.
///
/// Per degree, `G_ℓ = Σ_k c_t c_eᵀ / N_spec` so that `M = Σ_ℓ ⟨D_ℓ, G_ℓ⟩`.
#[derive(Clone, Debug)]
pub struct Overlap {
    table: WignerTable,
    gram: Vec<DMatrix<f64>>,
}

impl Overlap {
    pub fn new(c_evol: &MomentTensor, c_target: &MomentTensor) -> Result<Self> {
        c_evol.check_compatible(c_target)?;
        Ok(Self::with_table(
            WignerTable::new(c_evol.l_max()),
            c_evol,
            c_target,
        ))
    }

    /// Reuses an existing Wigner table (its `ℓ_max` must cover the spectra).
    pub fn with_table(table: WignerTable, c_evol: &MomentTensor, c_target: &MomentTensor) -> Self {
        let inv = 1.0 / c_evol.n_spec() as f64;
        let gram = (0..=c_evol.l_max())
            .map(|l| {
                let n = 2 * l + 1;
                let mut g = DMatrix::zeros(n, n);
                for k in 0..c_evol.radial_slots(l) {
                    let t = c_target.azimuthal(k, l);
                    let e = c_evol.azimuthal(k, l);
                    for i in 0..n {
                        for j in 0..n {
                            g[(i, j)] += t[i] * e[j] * inv;
                        }
                    }
                }
                g
            })
            .collect();
        Self { table, gram }
    }

    pub fn table(&self) -> &WignerTable {
        &self.table
    }

    pub fn value(&self, q: &UnitQuaternion) -> f64 {
        self.contract(&self.table.eval(q))
    }

    /// `Σ_ℓ ⟨B_ℓ, G_ℓ⟩` for any per-degree block set (rotation blocks or
    /// their derivatives, in whatever parameterization).
    pub fn contract(&self, blocks: &WignerBlockSet) -> f64 {
        self.gram
            .iter()
            .enumerate()
            .map(|(l, g)| blocks.block(l).dot(g))
            .sum()
    }

    /// `M` and its Euclidean gradient in ℝ⁴.
    pub fn value_grad(&self, q: &UnitQuaternion) -> (f64, Vector4<f64>) {
        let jet = self.table.eval_jet(q, false);
        let mut m = 0.0;
        let mut g = Vector4::zeros();
        for (l, gr) in self.gram.iter().enumerate() {
            m += jet.value.block(l).dot(gr);
            for j in 0..4 {
                g[j] += jet.grad[j].block(l).dot(gr);
            }
        }
        (m, g)
    }

    /// `M`, gradient and symmetric Euclidean Hessian in ℝ⁴.
    pub fn value_grad_hess(&self, q: &UnitQuaternion) -> (f64, Vector4<f64>, Matrix4<f64>) {
        let jet = self.table.eval_jet(q, true);
        let mut m = 0.0;
        let mut g = Vector4::zeros();
        let mut h = Matrix4::zeros();
        for (l, gr) in self.gram.iter().enumerate() {
            m += jet.value.block(l).dot(gr);
            for j in 0..4 {
                g[j] += jet.grad[j].block(l).dot(gr);
                for k in j..4 {
                    let v = jet.hess[sym_index(j, k)].block(l).dot(gr);
                    h[(j, k)] += v;
                    if k != j {
                        h[(k, j)] += v;
                    }
                }
            }
        }
        (m, g, h)
    }
}

/// `M(q)` for a single evaluation.
pub fn spectral_overlap(
    c_evol: &MomentTensor,
    c_target: &MomentTensor,
    q: &UnitQuaternion,
) -> Result<f64> {
    Ok(Overlap::new(c_evol, c_target)?.value(q))
}

/// `(I − q qᵀ) g`.
pub fn riemannian_gradient(q: &UnitQuaternion, euclid_grad: &Vector4<f64>) -> Vector4<f64> {
    let qv = q.to_vector();
    euclid_grad - qv * qv.dot(euclid_grad)
}

/// `cos(η‖v‖) q − sin(η‖v‖) v/‖v‖` for a tangent vector `v`.
pub fn exp_map_step(q: &UnitQuaternion, v: &Vector4<f64>, eta: f64) -> Result<UnitQuaternion> {
    let qv = q.to_vector();
    let dot = qv.dot(v);
    if dot.abs() > TANGENT_TOLERANCE * (1.0 + v.norm()) {
        return Err(Error::NotTangent(dot.abs()));
    }
    let n = v.norm();
    if n == 0.0 {
        return Ok(*q);
    }
    let t = eta * n;
    UnitQuaternion::from_vector(&(qv * t.cos() - v * (t.sin() / n)))
}

/// Riemannian gradient ascent on `M` from `q0`.
pub fn align(
    c_evol: &MomentTensor,
    c_target: &MomentTensor,
    q0: &UnitQuaternion,
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    let overlap = Overlap::new(c_evol, c_target)?;
    align_with(&overlap, q0, cfg)
}

/// As [`align`] with a prebuilt [`Overlap`].
pub fn align_with(
    overlap: &Overlap,
    q0: &UnitQuaternion,
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    let mut q = *q0;
    let mut m1 = Vector4::zeros();
    let mut m2 = Vector4::zeros();
    let (mut prev, _) = overlap.value_grad(&q);
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;
    if !prev.is_finite() {
        return Err(Error::AlignmentDiverged {
            iterations: 0,
            trace,
        });
    }
    for t in 1..=cfg.max_iterations {
        let (_, g) = overlap.value_grad(&q);
        // Descend f = −M.
        let rg = -riemannian_gradient(&q, &g);
        if let Some(tol) = cfg.gradient_tolerance {
            if rg.norm() < tol {
                converged = true;
                break;
            }
        }
        m1 = m1 * cfg.beta1 + rg * (1.0 - cfg.beta1);
        m2 = m2 * cfg.beta2 + rg.component_mul(&rg) * (1.0 - cfg.beta2);
        let mh = m1 / (1.0 - cfg.beta1.powi(t as i32));
        let vh = m2 / (1.0 - cfg.beta2.powi(t as i32));
        let dir = mh.zip_map(&vh, |a, b| a / (b.sqrt() + cfg.epsilon));
        let dir = riemannian_gradient(&q, &dir);
        q = exp_map_step(&q, &dir, cfg.learning_rate)?;
        iterations = t;
        let m = overlap.value(&q);
        trace.push(m);
        if !m.is_finite() {
            return Err(Error::AlignmentDiverged { iterations, trace });
        }
        if (m - prev).abs() < cfg.convergence_threshold {
            converged = true;
            break;
        }
        prev = m;
    }
    for _ in 0..cfg.newton_polish {
        q = newton_step(overlap, &q);
        trace.push(overlap.value(&q));
    }
    let final_overlap = *trace.last().unwrap_or(&prev);
    Ok(AlignmentResult {
        q_star: q,
        iterations,
        converged,
        final_overlap,
        overlap_trace: trace,
    })
}

/// One Riemannian Newton step toward the nearby stationary point of `M`,
/// with a pseudoinverse that discards near-null tangent directions.
pub fn newton_step(overlap: &Overlap, q: &UnitQuaternion) -> UnitQuaternion {
    let (_, g, h) = overlap.value_grad_hess(q);
    let rh = riemannian_hessian(&h, q, &g);
    let rg = riemannian_gradient(q, &g);
    let step = -pinv_sym(&rh, 1e-10) * rg;
    let n = step.norm();
    if !n.is_finite() || n == 0.0 {
        return *q;
    }
    // Geodesic retraction along the Newton direction.
    exp_map_step(q, &(-step), 1.0).unwrap_or(*q)
}

/// `P (H − α I) P` with `P = I − q qᵀ` and `α = qᵀ g`.
pub fn riemannian_hessian(h: &Matrix4<f64>, q: &UnitQuaternion, g: &Vector4<f64>) -> Matrix4<f64> {
    let qv = q.to_vector();
    let p = Matrix4::identity() - qv * qv.transpose();
    let alpha = qv.dot(g);
    p * (h - Matrix4::identity() * alpha) * p
}

/// Moore–Penrose pseudoinverse of a symmetric 4×4 matrix keeping
/// eigenvalues above `rel_cutoff × max |λ|`. Returns the inverse and its rank.
pub fn pinv_sym_with_rank(m: &Matrix4<f64>, rel_cutoff: f64) -> (Matrix4<f64>, usize) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = Matrix4::zeros();
    let mut rank = 0;
    if top == 0.0 {
        return (out, 0);
    }
    for i in 0..4 {
        let lam = eig.eigenvalues[i];
        if lam.abs() > rel_cutoff * top {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / lam;
            rank += 1;
        }
    }
    (out, rank)
}

fn pinv_sym(m: &Matrix4<f64>, rel_cutoff: f64) -> Matrix4<f64> {
    pinv_sym_with_rank(m, rel_cutoff).0
}

/// Runs [`align_with`] from each start and keeps the highest final overlap.
pub fn align_best_of(
    overlap: &Overlap,
    starts: &[UnitQuaternion],
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    let mut best: Option<AlignmentResult> = None;
    for q0 in starts {
        let r = align_with(overlap, q0, cfg)?;
        if best
            .as_ref()
            .is_none_or(|b| r.final_overlap > b.final_overlap)
        {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("no alignment starts given".into()))
}

/// `count` starts: the identity (or `warm`) followed by uniform random rotations.
pub fn start_set<R: Rng + ?Sized>(
    count: usize,
    warm: Option<UnitQuaternion>,
    rng: &mut R,
) -> Vec<UnitQuaternion> {
    let mut v = vec![warm.unwrap_or_default()];
    while v.len() < count.max(1) {
        v.push(UnitQuaternion::random(rng));
    }
    v
}
