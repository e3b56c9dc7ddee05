//! Distances between a fixture and its perturbed variants, and the
//! invariance pattern read off them.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::invariants::{spectral_distance, SpectrumOrder};
use super::point::{chamfer, pairwise_distance};
use super::transport::{entropic_gw, sinkhorn_emd};
use crate::cloud::{Axis, PointCloud};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::loss::{evaluate_loss, LossConfig};
use crate::rotation::UnitQuaternion;
use crate::zernike::{project_moments, MomentTensor, ZernikeBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "self")]
    Identity,
    Permuted,
    Subsampled,
    Rotated,
    Mirrored,
    /// A different shape, fixing the scale of "large" for each metric.
    Reference,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Identity,
        Variant::Permuted,
        Variant::Subsampled,
        Variant::Rotated,
        Variant::Mirrored,
        Variant::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Identity => "self",
            Variant::Permuted => "permuted",
            Variant::Subsampled => "subsampled",
            Variant::Rotated => "rotated",
            Variant::Mirrored => "mirrored",
            Variant::Reference => "reference",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Chamfer,
    EarthMovers,
    Pairwise,
    GromovWasserstein,
    PowerSpectrum,
    Bispectrum,
    Trispectrum,
    ShapeMatching,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Chamfer,
        Metric::EarthMovers,
        Metric::Pairwise,
        Metric::GromovWasserstein,
        Metric::PowerSpectrum,
        Metric::Bispectrum,
        Metric::Trispectrum,
        Metric::ShapeMatching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Chamfer => "chamfer",
            Metric::EarthMovers => "emd",
            Metric::Pairwise => "pairwise",
            Metric::GromovWasserstein => "gw",
            Metric::PowerSpectrum => "power_spectrum",
            Metric::Bispectrum => "bispectrum",
            Metric::Trispectrum => "trispectrum",
            Metric::ShapeMatching => "shape_matching",
        }
    }

    /// Metrics computed on raw coordinates rather than moments.
    pub fn is_coordinate_based(self) -> bool {
        matches!(
            self,
            Metric::Chamfer | Metric::EarthMovers | Metric::Pairwise | Metric::GromovWasserstein
        )
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportParams {
    /// Bunny size for the spectral metrics and the matching loss.
    pub n_points: usize,
    /// Smaller bunny (a subsample of the same one) for the coordinate
    /// metrics, whose cost grows quadratically or worse in the point count.
    pub transport_points: usize,
    /// Fraction of points kept by the subsampled variant.
    pub subsample_fraction: f64,
    /// Rotation of the rotated variant, as axis and angle in degrees.
    pub rotation_axis: [f64; 3],
    pub rotation_degrees: f64,
    pub mirror_axis: Axis,
    pub emd_eps: f64,
    pub gw_eps: f64,
    pub max_iter: usize,
    pub n_max: usize,
    pub l_max: usize,
    /// Relative change, as a fraction of the reference distance, above
    /// which a metric counts as sensitive to a perturbation.
    pub sensitivity: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            n_points: 8000,
            transport_points: 400,
            subsample_fraction: 0.5,
            rotation_axis: [1.0, 0.0, 0.0],
            rotation_degrees: 90.0,
            mirror_axis: Axis::X,
            emd_eps: 0.1,
            gw_eps: 0.5,
            max_iter: 5000,
            n_max: 10,
            l_max: 8,
            sensitivity: 0.05,
            loss: LossConfig {
                multi_start: 8,
                ..LossConfig::default()
            },
            seed: 1,
        }
    }
}

impl ReportParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("metrics: {m}")));
        if self.n_points < 2 || self.transport_points < 2 {
            return bad("point counts must be at least 2");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction < 1.0) {
            return bad("subsample_fraction must lie in (0, 1)");
        }
        if !self.rotation_axis.iter().all(|v| v.is_finite())
            || self.rotation_axis.iter().all(|&v| v == 0.0)
        {
            return bad("rotation_axis must be a finite nonzero vector");
        }
        if !self.rotation_degrees.is_finite() {
            return bad("rotation_degrees must be finite");
        }
        if !(self.emd_eps > 0.0 && self.gw_eps > 0.0) {
            return bad("entropic regularizations must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.sensitivity > 0.0 && self.sensitivity < 1.0) {
            return bad("sensitivity must lie in (0, 1)");
        }
        if self.l_max > self.n_max {
            return Err(Error::InvalidTruncation {
                n_max: self.n_max,
                l_max: self.l_max,
            });
        }
        self.loss.validate()
    }

    /// Stable SHA-256 over the JSON form of the parameters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: Metric,
    pub variant: Variant,
    /// `None` when the metric is undefined for the pair (pairwise distance
    /// with unequal counts).
    pub value: Option<f64>,
}

/// Boolean invariance pattern of one metric. `count_robust` is `None` when
/// the metric cannot be evaluated across point counts at all.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceFlags {
    pub metric: Metric,
    pub permutation_invariant: bool,
    pub count_robust: Option<bool>,
    pub rotation_invariant: bool,
    pub reflection_sensitive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub params: ReportParams,
    pub params_hash: String,
    pub rows: Vec<ReportRow>,
}

impl InvarianceReport {
    pub fn value(&self, metric: Metric, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.variant == variant)
            .and_then(|r| r.value)
    }

    /// CSV with columns `metric,variant,value,params_hash`; undefined values
    /// are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "variant", "value", "params_hash"])
            .expect("in-memory write");
        for r in &self.rows {
            let v = r.value.map_or("NaN".to_string(), |v| format!("{v:.17e}"));
            w.write_record([r.metric.name(), r.variant.name(), &v, &self.params_hash])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Thresholds each variant's distance against self, in units of the
    /// reference distance.
    pub fn flags(&self, metric: Metric) -> Option<InvarianceFlags> {
        let base = self.value(metric, Variant::Identity)?;
        let scale = (self.value(metric, Variant::Reference)? - base).abs();
        let tau = self.params.sensitivity * scale;
        let same = |v: Variant| self.value(metric, v).map(|x| (x - base).abs() <= tau);
        Some(InvarianceFlags {
            metric,
            permutation_invariant: same(Variant::Permuted)?,
            count_robust: same(Variant::Subsampled),
            rotation_invariant: same(Variant::Rotated)?,
            reflection_sensitive: !same(Variant::Mirrored)?,
        })
    }
}

struct Prepared {
    basis: ZernikeBasis,
    r_max: f64,
    target_moments: MomentTensor,
}

fn variants(base: &PointCloud, p: &ReportParams) -> Result<Vec<(Variant, PointCloud)>> {
    let axis = nalgebra::Vector3::from(p.rotation_axis);
    let q = UnitQuaternion::from_axis_angle(&axis, p.rotation_degrees.to_radians())?;
    let m = ((base.len() as f64 * p.subsample_fraction).round() as usize).clamp(1, base.len());
    // An ellipsoid of matching extent stands in for "a different shape".
    let reference = fixtures::ellipsoid(base.len(), [1.0, 0.6, 0.45], p.seed)?;
    let reference = reference.transform(&nalgebra::Matrix3::identity().scale(base.max_radius()));
    Ok(vec![
        (Variant::Identity, base.clone()),
        (Variant::Permuted, fixtures::shuffled(base, p.seed)?),
        (Variant::Subsampled, fixtures::subsample(base, m, p.seed)?),
        (Variant::Rotated, base.rotate(&q)),
        (Variant::Mirrored, base.mirror(p.mirror_axis)),
        (Variant::Reference, reference),
    ])
}

fn moments(prep: &Prepared, c: &PointCloud) -> Result<MomentTensor> {
    project_moments(&prep.basis, &c.normalize_to_unit_ball(prep.r_max)?)
}

fn evaluate(
    metric: Metric,
    base: &PointCloud,
    other: &PointCloud,
    prep: &Prepared,
    p: &ReportParams,
) -> Result<Option<f64>> {
    let spectral = |order| -> Result<Option<f64>> {
        Ok(Some(spectral_distance(
            &prep.target_moments,
            &moments(prep, other)?,
            order,
            true,
        )?))
    };
    Ok(match metric {
        Metric::Chamfer => Some(chamfer(base, other)),
        Metric::EarthMovers => Some(sinkhorn_emd(base, other, p.emd_eps, p.max_iter)?.value),
        Metric::Pairwise => pairwise_distance(base, other).ok(),
        Metric::GromovWasserstein => Some(entropic_gw(base, other, p.gw_eps, p.max_iter)?.value),
        Metric::PowerSpectrum => spectral(SpectrumOrder::Power)?,
        Metric::Bispectrum => spectral(SpectrumOrder::Bispectrum)?,
        Metric::Trispectrum => spectral(SpectrumOrder::Trispectrum)?,
        Metric::ShapeMatching => {
            // Variants are compared against the centered fixture, so the
            // evolved cloud is the variant.
            Some(
                evaluate_loss(
                    &prep.basis,
                    other,
                    &prep.target_moments,
                    prep.r_max,
                    &p.loss,
                    None,
                )?
                .0,
            )
        }
    })
}

/// Distances from `base` to each of its variants under each metric. Spectral
/// metrics compare cumulative invariant vectors.
pub fn invariance_report(
    base: &PointCloud,
    metrics: &[Metric],
    params: &ReportParams,
) -> Result<InvarianceReport> {
    params.validate()?;
    let base = base.translate(&-base.center_of_mass());
    let small = if base.len() > params.transport_points {
        fixtures::subsample(&base, params.transport_points, params.seed)?
    } else {
        base.clone()
    };
    let small = small.translate(&-small.center_of_mass());
    let basis = ZernikeBasis::new(params.n_max, params.l_max)?;
    let r_max = base.max_radius();
    let target_moments = project_moments(&basis, &base.normalize_to_unit_ball(r_max)?)?;
    let prep = Prepared {
        basis,
        r_max,
        target_moments,
    };
    let dense = variants(&base, params)?;
    let sparse = variants(&small, params)?;
    let mut rows = Vec::new();
    for &metric in metrics {
        let (origin, vs) = if metric.is_coordinate_based() {
            (&small, &sparse)
        } else {
            (&base, &dense)
        };
        for (variant, cloud) in vs {
            rows.push(ReportRow {
                metric,
                variant: *variant,
                value: evaluate(metric, origin, cloud, &prep, params)?,
            });
        }
    }
    Ok(InvarianceReport {
        params_hash: params.hash(),
        params: params.clone(),
        rows,
    })
}
