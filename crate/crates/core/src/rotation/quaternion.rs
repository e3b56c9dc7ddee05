//! Unit quaternions and their spatial rotation matrices.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm deviation accepted (and silently corrected) on construction.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// A rotation encoded as a point on S³, stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Builds a quaternion whose norm is within [`UNIT_TOLERANCE`] of one and
    /// renormalizes it exactly.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NonUnitQuaternion(n));
        }
        Ok(Self::scaled(w, x, y, z, n))
    }

    /// Projects any nonzero finite 4-vector onto S³.
    pub fn from_vector(v: &Vector4<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NonUnitQuaternion(n));
        }
        Ok(Self::scaled(v[0], v[1], v[2], v[3], n))
    }

    fn scaled(w: f64, x: f64, y: f64, z: f64, n: f64) -> Self {
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    /// `(cos(θ/2), sin(θ/2) · axis/‖axis‖)`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidAxis("rotation axis is zero".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n;
        Ok(Self::scaled(c, s * a.x, s * a.y, s * a.z, 1.0))
    }

    /// Draws a uniformly distributed rotation (normalized 4-d Gaussian).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(q) = Self::from_vector(&v) {
                return q;
            }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self · other`, renormalized.
    pub fn multiply(&self, b: &Self) -> Self {
        let a = self;
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            // Already unit to rounding; skip the divide so exact identities survive.
            return Self { w, x, y, z };
        }
        Self::scaled(w, x, y, z, n)
    }

    pub fn dot(&self, b: &Self) -> f64 {
        self.w * b.w + self.x * b.x + self.y * b.y + self.z * b.z
    }

    /// Rotation angle in `[0, π]` of `self⁻¹ · other`, i.e. the angle between
    /// the two rotations in SO(3).
    pub fn angle_to(&self, other: &Self) -> f64 {
        2.0 * self.dot(other).abs().min(1.0).acos()
    }

    /// Proper orthogonal matrix rotating vectors actively by this quaternion.
    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Inverse of [`to_rotation_matrix`](Self::to_rotation_matrix) (sign
    /// chosen with `w ≥ 0`).
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        // Shepperd's method: branch on the largest diagonal combination.
        let t = r.trace();
        let cands = [t, r[(0, 0)], r[(1, 1)], r[(2, 2)]];
        let k = (0..4)
            .max_by(|&i, &j| cands[i].total_cmp(&cands[j]))
            .unwrap_or(0);
        let v = match k {
            0 => {
                let s = (1.0 + t).sqrt() * 2.0;
                Vector4::new(
                    0.25 * s,
                    (r[(2, 1)] - r[(1, 2)]) / s,
                    (r[(0, 2)] - r[(2, 0)]) / s,
                    (r[(1, 0)] - r[(0, 1)]) / s,
                )
            }
            1 => {
                let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
                Vector4::new(
                    (r[(2, 1)] - r[(1, 2)]) / s,
                    0.25 * s,
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    (r[(0, 2)] + r[(2, 0)]) / s,
                )
            }
            2 => {
                let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
                Vector4::new(
                    (r[(0, 2)] - r[(2, 0)]) / s,
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    0.25 * s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                )
            }
            _ => {
                let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
                Vector4::new(
                    (r[(1, 0)] - r[(0, 1)]) / s,
                    (r[(0, 2)] + r[(2, 0)]) / s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                    0.25 * s,
                )
            }
        };
        let q = Self::scaled(v[0], v[1], v[2], v[3], v.norm());
        if q.w < 0.0 {
            q.neg()
        } else {
            q
        }
    }

    /// `q_z(α) · q_y(β) · q_x(γ)`, matching `R_z(α) R_y(β) R_x(γ)`.
    pub fn from_euler_zyx(alpha: f64, beta: f64, gamma: f64) -> Self {
        let qz = Self::axis_unchecked(2, alpha);
        let qy = Self::axis_unchecked(1, beta);
        let qx = Self::axis_unchecked(0, gamma);
        qz.multiply(&qy).multiply(&qx)
    }

    /// ZYX Euler angles `(α, β, γ)` with `β ∈ [−π/2, π/2]`.
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let r = self.to_rotation_matrix();
        let beta = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        if r[(2, 0)].abs() > 1.0 - 1e-12 {
            // Gimbal lock: only α ∓ γ is defined, so put it all in α.
            let beta = std::f64::consts::FRAC_PI_2.copysign(-r[(2, 0)]);
            return ((-r[(0, 1)]).atan2(r[(1, 1)]), beta, 0.0);
        }
        let alpha = r[(1, 0)].atan2(r[(0, 0)]);
        let gamma = r[(2, 1)].atan2(r[(2, 2)]);
        (alpha, beta, gamma)
    }

    fn axis_unchecked(k: usize, angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        let mut v = [c, 0.0, 0.0, 0.0];
        v[k + 1] = s;
        Self::scaled(v[0], v[1], v[2], v[3], 1.0)
    }

    /// Geodesic interpolation on S³ along the shorter arc.
    ///
    /// The flag is set when the endpoints are (numerically) antipodal after
    /// the sign fix, i.e. never in exact arithmetic; a fixed orthogonal great
    /// circle is used in that case.
    pub fn slerp(&self, b: &Self, t: f64) -> (Self, bool) {
        let mut d = self.dot(b);
        let mut bv = b.to_vector();
        if d < 0.0 {
            d = -d;
            bv = -bv;
        }
        let av = self.to_vector();
        if d > 1.0 - 1e-12 {
            let v = av + (bv - av) * t;
            return (Self::from_vector(&v).unwrap_or(*self), false);
        }
        let theta = d.min(1.0).acos();
        if theta.sin().abs() < 1e-12 {
            // Antipodal: move toward an arbitrary orthogonal quaternion.
            let o = Vector4::new(-av[1], av[0], -av[3], av[2]);
            let v = av * (std::f64::consts::PI * t).cos() + o * (std::f64::consts::PI * t).sin();
            return (Self::from_vector(&v).unwrap_or(*self), true);
        }
        let s = theta.sin();
        let v = av * (((1.0 - t) * theta).sin() / s) + bv * ((t * theta).sin() / s);
        (Self::from_vector(&v).unwrap_or(*self), false)
    }
}
