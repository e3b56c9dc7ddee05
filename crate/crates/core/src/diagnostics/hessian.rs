//! Conditioning of the rotational Hessian of the self-overlap.

use nalgebra::{Matrix3, Matrix4, Matrix4x3, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::{pinv_sym_with_rank, Overlap};
use crate::cloud::PointCloud;
use crate::error::Result;
use crate::fixtures;
use crate::rotation::UnitQuaternion;
use crate::zernike::{project_moments, MomentTensor, ZernikeBasis};

/// Relative pseudoinverse cutoff used for the reported rank.
pub const PROBE_PINV_THRESHOLD: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// `∂²M/∂q²` in the ambient 4-space, row-major.
    pub euclidean_4x4: [[f64; 4]; 4],
    /// Eigenvalues of the Riemannian Hessian on the tangent frame, sorted by
    /// decreasing magnitude.
    pub tangent_eigenvalues: [f64; 3],
    pub tangent_determinant: f64,
    pub pinv_rank: usize,
}

impl HessianReport {
    /// `|λ_min| / |λ_max|` of the tangent spectrum.
    pub fn min_max_ratio(&self) -> f64 {
        let [a, _, c] = self.tangent_eigenvalues;
        if a == 0.0 {
            0.0
        } else {
            (c / a).abs()
        }
    }
}

/// The +1° rotation about `x` used as the default probe point.
pub fn default_probe() -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(&Vector3::x(), 1f64.to_radians()).expect("unit axis")
}

/// Orthonormal basis of `T_q S³`: QR of `q` followed by the three coordinate
/// vectors least aligned with it.
pub fn tangent_frame(q: &UnitQuaternion) -> Matrix4x3<f64> {
    let qv = q.to_vector();
    let drop = qv.iamax();
    let mut a = Matrix4::zeros();
    a.set_column(0, &qv);
    let mut col = 1;
    for k in (0..4).filter(|&k| k != drop) {
        a[(k, col)] = 1.0;
        col += 1;
    }
    let q_mat = a.qr().q();
    q_mat.fixed_columns::<3>(1).into_owned()
}

/// Riemannian Hessian `Uᵀ (H − (qᵀg) I) U` of an overlap at `q`.
pub fn tangent_hessian(overlap: &Overlap, q: &UnitQuaternion) -> (Matrix4<f64>, Matrix3<f64>) {
    let (_, g, h) = overlap.value_grad_hess(q);
    let u = tangent_frame(q);
    let alpha = q.to_vector().dot(&g);
    let t = u.transpose() * (h - Matrix4::identity() * alpha) * u;
    (h, (t + t.transpose()) * 0.5)
}

fn report_from(overlap: &Overlap, q: &UnitQuaternion) -> HessianReport {
    let (h, t) = tangent_hessian(overlap, q);
    let mut ev: Vec<f64> = t.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let u = tangent_frame(q);
    let riem = u * t * u.transpose();
    let (_, rank) = pinv_sym_with_rank(&riem, PROBE_PINV_THRESHOLD);
    HessianReport {
        euclidean_4x4: std::array::from_fn(|i| std::array::from_fn(|j| h[(i, j)])),
        tangent_eigenvalues: [ev[0], ev[1], ev[2]],
        tangent_determinant: ev.iter().product(),
        pinv_rank: rank,
    }
}

/// Hessian of `M(C, C)` at `q` for an already projected spectrum.
pub fn hessian_probe_moments(moments: &MomentTensor, q: &UnitQuaternion) -> Result<HessianReport> {
    let overlap = Overlap::new(moments, moments)?;
    Ok(report_from(&overlap, q))
}

/// Hessian of the self-overlap `M(C, C)` of `cloud` (normalized by its own
/// largest radius) at `q`.
pub fn hessian_probe(
    cloud: &PointCloud,
    q: &UnitQuaternion,
    basis: &ZernikeBasis,
) -> Result<HessianReport> {
    let moments = project_moments(basis, &cloud.normalize_self()?)?;
    hessian_probe_moments(&moments, q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub n_phi: usize,
    pub report: HessianReport,
}

/// Probes ring ellipsoids with increasing azimuthal resolution at the
/// default probe point.
pub fn symmetry_scan(
    n_phis: &[usize],
    n_rings: usize,
    elongation: f64,
    basis: &ZernikeBasis,
    seed: u64,
) -> Result<Vec<SymmetryRow>> {
    let q = default_probe();
    n_phis
        .iter()
        .map(|&n_phi| {
            let cloud = fixtures::ring_ellipsoid(n_rings, n_phi, elongation, seed)?;
            Ok(SymmetryRow {
                n_phi,
                report: hessian_probe(&cloud, &q, basis)?,
            })
        })
        .collect()
}

/// `n_phi,lambda_1,lambda_2,lambda_3,determinant,pinv_rank` table.
pub fn symmetry_csv(rows: &[SymmetryRow]) -> String {
    let mut out = String::from("n_phi,lambda_1,lambda_2,lambda_3,determinant,pinv_rank\n");
    for r in rows {
        let [a, b, c] = r.report.tangent_eigenvalues;
        out.push_str(&format!(
            "{},{a:e},{b:e},{c:e},{:e},{}\n",
            r.n_phi, r.report.tangent_determinant, r.report.pinv_rank
        ));
    }
    out
}

/// Sphere-grid perturbations compared in the determinant study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpherePerturbation {
    None,
    Elongated,
    Noised,
    ElongatedNoised,
}

impl SpherePerturbation {
    pub const ALL: [SpherePerturbation; 4] = [
        SpherePerturbation::None,
        SpherePerturbation::Elongated,
        SpherePerturbation::Noised,
        SpherePerturbation::ElongatedNoised,
    ];
}

/// Shell+core sphere grid with an optional elongation along `x` and
/// Gaussian position noise.
pub fn perturbed_sphere(
    kind: SpherePerturbation,
    n_shell: usize,
    elongation: f64,
    sigma: f64,
    seed: u64,
) -> Result<PointCloud> {
    let mut c = fixtures::gen_sphere_cloud(n_shell, seed)?;
    if matches!(
        kind,
        SpherePerturbation::Elongated | SpherePerturbation::ElongatedNoised
    ) {
        c = c.elongate(&Vector3::x(), elongation)?;
    }
    if matches!(
        kind,
        SpherePerturbation::Noised | SpherePerturbation::ElongatedNoised
    ) {
        c = fixtures::add_noise(&c, sigma, seed)?;
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereRow {
    pub perturbation: SpherePerturbation,
    pub seed: u64,
    pub report: HessianReport,
}

/// Every perturbation of the sphere grid for every seed, at the default probe.
pub fn sphere_study(
    n_shell: usize,
    elongation: f64,
    sigma: f64,
    seeds: &[u64],
    basis: &ZernikeBasis,
) -> Result<Vec<SphereRow>> {
    let q = default_probe();
    let mut rows = Vec::new();
    for &seed in seeds {
        for kind in SpherePerturbation::ALL {
            let cloud = perturbed_sphere(kind, n_shell, elongation, sigma, seed)?;
            rows.push(SphereRow {
                perturbation: kind,
                seed,
                report: hessian_probe(&cloud, &q, basis)?,
            });
        }
    }
    Ok(rows)
}

/// Median over seeds of `|det(elongated + noised)| / |det(sphere)|`.
pub fn determinant_ratio(rows: &[SphereRow]) -> f64 {
    let det = |kind, seed| {
        rows.iter()
            .find(|r| r.perturbation == kind && r.seed == seed)
            .map(|r| r.report.tangent_determinant.abs())
    };
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut ratios: Vec<f64> = seeds
        .into_iter()
        .filter_map(|s| {
            Some(det(SpherePerturbation::ElongatedNoised, s)? / det(SpherePerturbation::None, s)?)
        })
        .collect();
    if ratios.is_empty() {
        return f64::NAN;
    }
    ratios.sort_by(f64::total_cmp);
    let m = ratios.len() / 2;
    if ratios.len() % 2 == 1 {
        ratios[m]
    } else {
        0.5 * (ratios[m - 1] + ratios[m])
    }
}

/// `perturbation,seed,lambda_1,lambda_2,lambda_3,determinant,pinv_rank` table.
pub fn sphere_csv(rows: &[SphereRow]) -> String {
    let mut out =
        String::from("perturbation,seed,lambda_1,lambda_2,lambda_3,determinant,pinv_rank\n");
    for r in rows {
        let [a, b, c] = r.report.tangent_eigenvalues;
        let name = serde_json::to_value(r.perturbation).expect("enum serializes");
        out.push_str(&format!(
            "{},{},{a:e},{b:e},{c:e},{:e},{}\n",
            name.as_str().unwrap_or_default(),
            r.seed,
            r.report.tangent_determinant,
            r.report.pinv_rank
        ));
    }
    out
}
