//! Point clouds, normalization to the unit ball and rigid transforms.
//!
//! A [`PointCloud`] is the raw shape representation: `N` points in 3-space,
//! each carrying a scalar weight. Before projection onto the Zernike basis a
//! cloud is centered on its (unweighted) center of mass and divided by a
//! radius, producing a [`NormalizedCloud`].

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotation::UnitQuaternion;

pub type Point = Vector3<f64>;

/// Coordinate axis selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Point {
        let mut v = Point::zeros();
        v[self.index()] = 1.0;
        v
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::InvalidAxis(format!("unknown axis '{other}'"))),
        }
    }
}

/// `N` weighted points in 3-space.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "RawCloud", into = "RawCloud")]
pub struct PointCloud {
    points: Vec<Point>,
    weights: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCloud {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl TryFrom<RawCloud> for PointCloud {
    type Error = Error;

    fn try_from(r: RawCloud) -> Result<Self> {
        PointCloud::new(r.points.into_iter().map(Point::from).collect(), r.weights)
    }
}

impl From<PointCloud> for RawCloud {
    fn from(c: PointCloud) -> Self {
        RawCloud {
            points: c.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            weights: c.weights,
        }
    }
}

impl PointCloud {
    /// Builds a cloud, validating that it is nonempty, finite and that
    /// `weights` matches `points` in length.
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidCloud(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} is not finite")));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidCloud(format!("weight {i} is not finite")));
        }
        Ok(Self { points, weights })
    }

    /// Unit-weight cloud.
    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_parts(self) -> (Vec<Point>, Vec<f64>) {
        (self.points, self.weights)
    }

    /// Replaces the weights, keeping the points.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }

    /// Unweighted arithmetic mean of the points.
    pub fn center_of_mass(&self) -> Point {
        center_of_mass(&self.points)
    }

    /// Largest distance of a point from the center of mass.
    pub fn max_radius(&self) -> f64 {
        let com = self.center_of_mass();
        self.points
            .iter()
            .map(|p| (p - com).norm())
            .fold(0.0, f64::max)
    }

    /// Centers on the center of mass and divides by `r_max`.
    pub fn normalize_to_unit_ball(&self, r_max: f64) -> Result<NormalizedCloud> {
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidScale(r_max));
        }
        let com = self.center_of_mass();
        let points: Vec<Point> = self.points.iter().map(|p| (p - com) / r_max).collect();
        let outside = points.iter().filter(|p| p.norm() > 1.0).count();
        Ok(NormalizedCloud {
            points,
            weights: self.weights.clone(),
            scale: r_max,
            com_shift: com,
            out_of_ball_fraction: outside as f64 / self.len() as f64,
        })
    }

    /// Normalizes against the cloud's own maximum radius, so the farthest
    /// point lands on the unit sphere.
    pub fn normalize_self(&self) -> Result<NormalizedCloud> {
        let r = self.max_radius();
        if r == 0.0 {
            // A single point (or coincident points) collapses to the origin.
            return self.normalize_to_unit_ball(1.0);
        }
        self.normalize_to_unit_ball(r)
    }

    /// Applies the rotation matrix of `q` to every point.
    pub fn rotate(&self, q: &UnitQuaternion) -> Self {
        let r = q.to_rotation_matrix();
        self.map_points(|p| r * p)
    }

    /// Applies an arbitrary linear map.
    pub fn transform(&self, m: &Matrix3<f64>) -> Self {
        self.map_points(|p| m * p)
    }

    pub fn translate(&self, t: &Point) -> Self {
        self.map_points(|p| p + t)
    }

    /// Negates the chosen coordinate of every point.
    pub fn mirror(&self, axis: Axis) -> Self {
        let k = axis.index();
        self.map_points(|p| {
            let mut q = *p;
            q[k] = -q[k];
            q
        })
    }

    /// Scales the component of each point along `axis_unit` by `factor`.
    pub fn elongate(&self, axis_unit: &Point, factor: f64) -> Result<Self> {
        let n = axis_unit.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidAxis("elongation axis is zero".into()));
        }
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidAxis(format!(
                "elongation axis must be unit length, got norm {n}"
            )));
        }
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidScale(factor));
        }
        Ok(self.map_points(|p| {
            let along = axis_unit.dot(p);
            p + axis_unit * (along * (factor - 1.0))
        }))
    }

    /// Bends the cloud along an arc of radius `radius`.
    ///
    /// For each point, `θ = p[source] / R`, then
    /// `p[offset] += R (1 − cos θ)` and `p[output] = R sin θ`.
    pub fn arc_bend(&self, radius: f64, roles: BendAxes) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidScale(radius));
        }
        let (s, o, t) = (
            roles.source.index(),
            roles.offset.index(),
            roles.output.index(),
        );
        if o == t || o == s {
            return Err(Error::InvalidAxis(
                "bend offset axis must differ from source and output axes".into(),
            ));
        }
        Ok(self.map_points(|p| {
            let theta = p[s] / radius;
            let mut q = *p;
            q[o] += radius * (1.0 - theta.cos());
            q[t] = radius * theta.sin();
            q
        }))
    }

    /// Reorders points (and weights) by `perm`, where `perm[i]` is the source index.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::SizeMismatch(format!(
                "permutation of length {} for {} points",
                perm.len(),
                self.len()
            )));
        }
        let points = perm.iter().map(|&i| self.points[i]).collect();
        let weights = perm.iter().map(|&i| self.weights[i]).collect();
        Self::new(points, weights)
    }

    /// Keeps the points at `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let weights = indices.iter().map(|&i| self.weights[i]).collect();
        Self::new(points, weights)
    }

    /// Concatenates two clouds.
    pub fn concat(&self, other: &Self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self { points, weights }
    }

    fn map_points(&self, f: impl Fn(&Point) -> Point) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Axis roles for [`PointCloud::arc_bend`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BendAxes {
    /// Coordinate converted into the bending angle.
    pub source: Axis,
    /// Coordinate receiving the `R (1 − cos θ)` offset.
    pub offset: Axis,
    /// Coordinate replaced by `R sin θ`.
    pub output: Axis,
}

impl Default for BendAxes {
    fn default() -> Self {
        Self {
            source: Axis::Y,
            offset: Axis::X,
            output: Axis::Z,
        }
    }
}

impl BendAxes {
    /// Bend that keeps the long axis as both the angle source and the arc
    /// coordinate, so an elongated body curls into a crescent without
    /// collapsing a dimension.
    pub fn along(long: Axis, offset: Axis) -> Self {
        Self {
            source: long,
            offset,
            output: long,
        }
    }
}

/// A cloud centered on its center of mass and scaled into (roughly) the unit ball.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedCloud {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Divisor applied after centering.
    pub scale: f64,
    /// Subtracted center of mass.
    pub com_shift: Point,
    /// Fraction of points with radius above 1 after normalization.
    pub out_of_ball_fraction: f64,
}

impl NormalizedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Undoes the normalization.
    pub fn denormalize(&self) -> Result<PointCloud> {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| p * self.scale + self.com_shift)
                .collect(),
            self.weights.clone(),
        )
    }
}

/// Unweighted mean of `points`.
pub fn center_of_mass(points: &[Point]) -> Point {
    let sum = points.iter().fold(Point::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}
