//! Real 3D Zernike basis on the unit ball and projection of weighted clouds.
//!
//! `Z_{nℓm}(x) = R_{nℓ}(r) Y_{ℓm}(x̂)` with admissible `n ∈ {ℓ, ℓ+2, …} ≤ n_max`.
//! Both factors are evaluated as polynomials in Cartesian coordinates:
//! `R_{nℓ}(r) = r^ℓ p_{nℓ}(r²)` and `r^ℓ Y_{ℓm}` is a solid harmonic, so
//! values and gradients are smooth everywhere, including the origin and the
//! poles.
//!
//! Moments are stored in a zero-padded dense tensor indexed
//! `[radial slot k, ℓ, m + ℓ]` where `n = ℓ + 2k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{NormalizedCloud, Point};
use crate::error::{Error, Result};

/// Points per parallel work unit; partial sums are combined in chunk order so
/// results do not depend on the thread count.
const CHUNK: usize = 256;

/// Precomputed radial polynomials and harmonic normalizations.
#[derive(Clone, Debug)]
pub struct ZernikeBasis {
    n_max: usize,
    l_max: usize,
    /// `radial[l][k]` holds the coefficients of `p_{nℓ}(s)` in powers of `s = r²`.
    radial: Vec<Vec<Vec<f64>>>,
    /// Admissible `(n, ℓ)` pairs.
    index_table: Vec<(usize, usize)>,
    n_spec: usize,
    /// Jacobi three-term recurrence constants `[a, b, c, d]` per `(ℓ, k ≥ 2)`,
    /// used for evaluation since the expanded coefficients cancel badly near
    /// `r = 1` at high order.
    recurrence: Vec<Vec<[f64; 4]>>,
    /// Solid-harmonic prefactor per `(ℓ, m)` at flat index `ℓ² + m + ℓ`.
    sh_norm: Vec<f64>,
}

/// Number of admissible `(n, ℓ, m)` triples.
pub fn n_spec(n_max: usize, l_max: usize) -> usize {
    (0..=l_max.min(n_max))
        .map(|l| ((n_max - l) / 2 + 1) * (2 * l + 1))
        .sum()
}

impl ZernikeBasis {
    pub fn new(n_max: usize, l_max: usize) -> Result<Self> {
        if l_max > n_max {
            return Err(Error::InvalidTruncation { n_max, l_max });
        }
        let mut radial = Vec::with_capacity(l_max + 1);
        let mut index_table = Vec::new();
        for l in 0..=l_max {
            let alpha = l as f64 + 0.5;
            let mut per_l = Vec::new();
            for k in 0..=(n_max - l) / 2 {
                let n = l + 2 * k;
                index_table.push((n, l));
                per_l.push(radial_coefficients(k, alpha, (2.0 * n as f64 + 3.0).sqrt()));
            }
            radial.push(per_l);
        }
        let recurrence = (0..=l_max)
            .map(|l| {
                let alpha = l as f64 + 0.5;
                (0..=(n_max - l) / 2)
                    .map(|k| {
                        let n = k as f64;
                        let two = 2.0 * n + alpha;
                        [
                            2.0 * n * (n + alpha) * (two - 2.0),
                            (two - 1.0) * alpha * alpha,
                            (two - 1.0) * two * (two - 2.0),
                            2.0 * (n + alpha - 1.0) * (n - 1.0) * two,
                        ]
                    })
                    .collect()
            })
            .collect();
        let mut sh_norm = Vec::with_capacity((l_max + 1) * (l_max + 1));
        for l in 0..=l_max {
            let li = l as i64;
            for m in -li..=li {
                let a = m.unsigned_abs() as usize;
                // (ℓ−a)!/(ℓ+a)! as a running product to stay accurate.
                let ratio: f64 = ((l - a + 1)..=(l + a)).map(|t| 1.0 / t as f64).product();
                let base = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt();
                sh_norm.push(if m == 0 {
                    base
                } else {
                    std::f64::consts::SQRT_2 * base
                });
            }
        }
        Ok(Self {
            n_max,
            l_max,
            radial,
            n_spec: n_spec(n_max, l_max),
            index_table,
            recurrence,
            sh_norm,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_spec(&self) -> usize {
        self.n_spec
    }

    /// Admissible `(n, ℓ)` pairs ordered by `ℓ`, then `n`.
    pub fn index_table(&self) -> &[(usize, usize)] {
        &self.index_table
    }

    /// Packed radial table shape: `(ℓ rows, radial slots)`.
    pub fn radial_table_dims(&self) -> (usize, usize) {
        (self.l_max + 1, self.n_max / 2 + 1)
    }

    /// Packed harmonic table shape: `(ℓ rows, azimuthal width)`.
    pub fn harmonic_table_dims(&self) -> (usize, usize) {
        (self.l_max + 1, 2 * self.l_max + 1)
    }

    /// Coefficients of `R_{nℓ}(r) / r^ℓ` in powers of `r²`.
    pub fn radial_coefficients(&self, n: usize, l: usize) -> Result<&[f64]> {
        self.check(n, l, 0)?;
        Ok(&self.radial[l][(n - l) / 2])
    }

    /// `R_{nℓ}(r)`.
    pub fn radial(&self, n: usize, l: usize, r: f64) -> Result<f64> {
        self.check(n, l, 0)?;
        let mut p = vec![0.0; (self.n_max - l) / 2 + 1];
        let mut dp = p.clone();
        self.radial_reduced(l, r * r, &mut p, &mut dp);
        Ok(r.powi(l as i32) * p[(n - l) / 2])
    }

    /// `p_{nℓ}(s) = R_{nℓ}(r)/r^ℓ` and `dp/ds` for every radial slot of degree `ℓ`.
    fn radial_reduced(&self, l: usize, s: f64, p: &mut [f64], dp: &mut [f64]) {
        let alpha = l as f64 + 0.5;
        let t = 1.0 - 2.0 * s;
        let kmax = p.len() - 1;
        // Jacobi values and t-derivatives.
        let (mut j0, mut d0) = (1.0, 0.0);
        let (mut j1, mut d1) = (0.5 * ((alpha + 2.0) * t + alpha), 0.5 * (alpha + 2.0));
        for k in 0..=kmax {
            let (jk, dk) = match k {
                0 => (j0, d0),
                1 => (j1, d1),
                _ => {
                    let [a, b, c, d] = self.recurrence[l][k];
                    let j2 = ((b + c * t) * j1 - d * j0) / a;
                    let d2 = ((b + c * t) * d1 + c * j1 - d * d0) / a;
                    j0 = j1;
                    d0 = d1;
                    j1 = j2;
                    d1 = d2;
                    (j2, d2)
                }
            };
            let n = l + 2 * k;
            let scale = if k % 2 == 0 { 1.0 } else { -1.0 } * (2.0 * n as f64 + 3.0).sqrt();
            p[k] = scale * jk;
            dp[k] = -2.0 * scale * dk;
        }
    }

    fn check(&self, n: usize, l: usize, m: i64) -> Result<()> {
        let ok = l <= self.l_max
            && n <= self.n_max
            && n >= l
            && (n - l) % 2 == 0
            && m.unsigned_abs() as usize <= l;
        if ok {
            Ok(())
        } else {
            Err(Error::InadmissibleIndex { n, l, m })
        }
    }

    /// Value of `Z_{nℓm}` at `x`.
    pub fn eval(&self, n: usize, l: usize, m: i64, x: &Point) -> Result<f64> {
        self.check(n, l, m)?;
        let sh = SolidHarmonics::new(l, x, false);
        let mut p = vec![0.0; (self.n_max - l) / 2 + 1];
        let mut dp = p.clone();
        self.radial_reduced(l, x.norm_squared(), &mut p, &mut dp);
        let idx = l * l + (m + l as i64) as usize;
        Ok(p[(n - l) / 2] * self.sh_norm[idx] * sh.raw(l, m))
    }

    /// Evaluates every basis function (and optionally its gradient) at `x`
    /// into buffers laid out like [`MomentTensor::data`].
    pub fn eval_all(&self, x: &Point, values: &mut [f64], grads: Option<&mut [[f64; 3]]>) {
        let want_grad = grads.is_some();
        let sh = SolidHarmonics::new(self.l_max, x, want_grad);
        let s = x.norm_squared();
        let layout = Layout::new(self.n_max, self.l_max);
        let mut grads = grads;
        let mut pbuf = vec![0.0; self.n_max / 2 + 1];
        let mut dbuf = pbuf.clone();
        for l in 0..=self.l_max {
            let li = l as i64;
            let slots = self.radial[l].len();
            self.radial_reduced(l, s, &mut pbuf[..slots], &mut dbuf[..slots]);
            for k in 0..slots {
                let (p, dp) = (pbuf[k], dbuf[k]);
                for m in -li..=li {
                    let hidx = l * l + (m + li) as usize;
                    let norm = self.sh_norm[hidx];
                    let slot = layout.offset(k, l) + (m + li) as usize;
                    let y = norm * sh.raw(l, m);
                    values[slot] = p * y;
                    if let Some(g) = grads.as_deref_mut() {
                        let gy = sh.raw_grad(l, m);
                        for d in 0..3 {
                            g[slot][d] = p * norm * gy[d] + y * dp * 2.0 * x[d];
                        }
                    }
                }
            }
        }
    }
}

/// Solid-harmonic polynomials `r^ℓ P_ℓ^{|m|}(cos θ) {cos, sin}(|m| φ)` (no
/// normalization, no Condon–Shortley phase), optionally with gradients.
struct SolidHarmonics {
    vals: Vec<f64>,
    grads: Vec<[f64; 3]>,
}

impl SolidHarmonics {
    fn new(l_max: usize, x: &Point, with_grad: bool) -> Self {
        let (px, py, pz) = (x[0], x[1], x[2]);
        let s = px * px + py * py + pz * pz;
        let n = l_max + 1;
        // (x + iy)^m = A_m + i B_m
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        a[0] = 1.0;
        for m in 1..n {
            a[m] = px * a[m - 1] - py * b[m - 1];
            b[m] = px * b[m - 1] + py * a[m - 1];
        }
        // Π[ℓ][m] with partials in z and s.
        let idx = |l: usize, m: usize| l * n + m;
        let mut pi = vec![0.0; n * n];
        let mut pz_ = vec![0.0; n * n];
        let mut ps = vec![0.0; n * n];
        let mut dfact = 1.0;
        for m in 0..n {
            if m > 0 {
                dfact *= (2 * m - 1) as f64;
            }
            pi[idx(m, m)] = dfact;
            if m + 1 < n {
                let c = (2 * m + 1) as f64;
                pi[idx(m + 1, m)] = c * pz * dfact;
                pz_[idx(m + 1, m)] = c * dfact;
            }
            for l in (m + 2)..n {
                let c1 = (2 * l - 1) as f64;
                let c2 = (l + m - 1) as f64;
                let inv = 1.0 / (l - m) as f64;
                let (p1, p2) = (pi[idx(l - 1, m)], pi[idx(l - 2, m)]);
                pi[idx(l, m)] = (c1 * pz * p1 - c2 * s * p2) * inv;
                pz_[idx(l, m)] =
                    (c1 * (p1 + pz * pz_[idx(l - 1, m)]) - c2 * s * pz_[idx(l - 2, m)]) * inv;
                ps[idx(l, m)] =
                    (c1 * pz * ps[idx(l - 1, m)] - c2 * (p2 + s * ps[idx(l - 2, m)])) * inv;
            }
        }
        let mut vals = Vec::with_capacity(n * n);
        let mut grads = Vec::with_capacity(if with_grad { n * n } else { 0 });
        for l in 0..n {
            let li = l as i64;
            for m in -li..=li {
                let am = m.unsigned_abs() as usize;
                let p = pi[idx(l, am)];
                let (f, df) = if m > 0 {
                    let da = if am > 0 {
                        [am as f64 * a[am - 1], -(am as f64) * b[am - 1]]
                    } else {
                        [0.0, 0.0]
                    };
                    (a[am], da)
                } else if m < 0 {
                    (b[am], [am as f64 * b[am - 1], am as f64 * a[am - 1]])
                } else {
                    (1.0, [0.0, 0.0])
                };
                vals.push(p * f);
                if with_grad {
                    let dps = ps[idx(l, am)];
                    let gp = [
                        2.0 * px * dps,
                        2.0 * py * dps,
                        pz_[idx(l, am)] + 2.0 * pz * dps,
                    ];
                    grads.push([gp[0] * f + p * df[0], gp[1] * f + p * df[1], gp[2] * f]);
                }
            }
        }
        Self { vals, grads }
    }

    fn raw(&self, l: usize, m: i64) -> f64 {
        self.vals[l * l + (m + l as i64) as usize]
    }

    fn raw_grad(&self, l: usize, m: i64) -> [f64; 3] {
        self.grads[l * l + (m + l as i64) as usize]
    }
}

/// Coefficients in `s` of `(−1)^k · scale · P_k^{(α,0)}(1 − 2s)`.
fn radial_coefficients(k: usize, alpha: f64, scale: f64) -> Vec<f64> {
    // P_k^{(α,0)}(1−2s) = Σ_j C(k,j)/k! · Γ(α+k+j+1)/Γ(α+j+1) · (−s)^j
    let mut kfact = 1.0;
    for t in 1..=k {
        kfact *= t as f64;
    }
    let mut binom = 1.0;
    (0..=k)
        .map(|j| {
            if j > 0 {
                binom = binom * (k - j + 1) as f64 / j as f64;
            }
            let gamma_ratio: f64 = (0..k).map(|t| alpha + (j + 1 + t) as f64).product();
            let sign = if (k + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * scale * binom / kfact * gamma_ratio
        })
        .collect()
}

/// Flat offsets of the padded `[k, ℓ, m]` layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_max: usize,
    pub l_max: usize,
}

impl Layout {
    pub fn new(n_max: usize, l_max: usize) -> Self {
        Self { n_max, l_max }
    }

    /// `(radial slots, ℓ rows, azimuthal width)`.
    pub fn dims(&self) -> [usize; 3] {
        [self.n_max / 2 + 1, self.l_max + 1, 2 * self.l_max + 1]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offset(&self, k: usize, l: usize) -> usize {
        let [_, nl, w] = self.dims();
        (k * nl + l) * w
    }

    pub fn radial_slots(&self, l: usize) -> usize {
        if l > self.n_max {
            0
        } else {
            (self.n_max - l) / 2 + 1
        }
    }

    /// Whether the flat slot holds an admissible coefficient.
    pub fn is_admissible_slot(&self, idx: usize) -> bool {
        let [_, nl, w] = self.dims();
        let j = idx % w;
        let l = (idx / w) % nl;
        let k = idx / (w * nl);
        l <= self.l_max && k < self.radial_slots(l) && j < 2 * l + 1
    }
}

/// Dense zero-padded coefficient tensor `c_{nℓm}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentTensorJson", into = "MomentTensorJson")]
pub struct MomentTensor {
    layout: Layout,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentTensorJson {
    n_max: usize,
    l_max: usize,
    dims: [usize; 3],
    data: Vec<f64>,
}

impl TryFrom<MomentTensorJson> for MomentTensor {
    type Error = Error;

    fn try_from(j: MomentTensorJson) -> Result<Self> {
        let t = MomentTensor::from_data(j.n_max, j.l_max, j.data)?;
        if t.layout.dims() != j.dims {
            return Err(Error::TruncationMismatch(format!(
                "declared dims {:?} do not match truncation dims {:?}",
                j.dims,
                t.layout.dims()
            )));
        }
        Ok(t)
    }
}

impl From<MomentTensor> for MomentTensorJson {
    fn from(t: MomentTensor) -> Self {
        Self {
            n_max: t.layout.n_max,
            l_max: t.layout.l_max,
            dims: t.layout.dims(),
            data: t.data,
        }
    }
}

impl MomentTensor {
    pub fn zeros(n_max: usize, l_max: usize) -> Self {
        let layout = Layout::new(n_max, l_max);
        Self {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Wraps flat data, checking size, finiteness and zero padding.
    pub fn from_data(n_max: usize, l_max: usize, data: Vec<f64>) -> Result<Self> {
        if l_max > n_max {
            return Err(Error::InvalidTruncation { n_max, l_max });
        }
        let layout = Layout::new(n_max, l_max);
        if data.len() != layout.len() {
            return Err(Error::SizeMismatch(format!(
                "expected {} entries, got {}",
                layout.len(),
                data.len()
            )));
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "moment entry {i} is not finite"
                )));
            }
            if !layout.is_admissible_slot(i) && *v != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "padded moment entry {i} is nonzero"
                )));
            }
        }
        Ok(Self { layout, data })
    }

    pub fn like(basis: &ZernikeBasis) -> Self {
        Self::zeros(basis.n_max, basis.l_max)
    }

    pub fn n_max(&self) -> usize {
        self.layout.n_max
    }

    pub fn l_max(&self) -> usize {
        self.layout.l_max
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_spec(&self) -> usize {
        n_spec(self.layout.n_max, self.layout.l_max)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.layout.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn radial_slots(&self, l: usize) -> usize {
        self.layout.radial_slots(l)
    }

    /// `c_{nℓm}`, or an error for inadmissible indices.
    pub fn get(&self, n: usize, l: usize, m: i64) -> Result<f64> {
        let ok = l <= self.l_max()
            && n <= self.n_max()
            && n >= l
            && (n - l) % 2 == 0
            && m.unsigned_abs() as usize <= l;
        if !ok {
            return Err(Error::InadmissibleIndex { n, l, m });
        }
        Ok(self.data[self.layout.offset((n - l) / 2, l) + (m + l as i64) as usize])
    }

    pub fn set(&mut self, n: usize, l: usize, m: i64, v: f64) -> Result<()> {
        self.get(n, l, m)?;
        let i = self.layout.offset((n - l) / 2, l) + (m + l as i64) as usize;
        self.data[i] = v;
        Ok(())
    }

    /// Azimuthal vector `c_{nℓ·}` for radial slot `k` (`n = ℓ + 2k`).
    pub fn azimuthal(&self, k: usize, l: usize) -> &[f64] {
        let o = self.layout.offset(k, l);
        &self.data[o..o + 2 * l + 1]
    }

    pub fn azimuthal_mut(&mut self, k: usize, l: usize) -> &mut [f64] {
        let o = self.layout.offset(k, l);
        &mut self.data[o..o + 2 * l + 1]
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::TruncationMismatch(format!(
                "(n_max={}, l_max={}) vs (n_max={}, l_max={})",
                self.n_max(),
                self.l_max(),
                other.n_max(),
                other.l_max()
            )));
        }
        Ok(())
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            layout: self.layout,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            layout: self.layout,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            layout: self.layout,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of the entries with degree `ℓ`.
    pub fn degree_norm(&self, l: usize) -> f64 {
        (0..self.radial_slots(l))
            .flat_map(|k| self.azimuthal(k, l).iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// `c_{nℓm} = (1/N) Σ_i ω_i Z_{nℓm}(x_i)` over a normalized cloud.
pub fn project_moments(basis: &ZernikeBasis, cloud: &NormalizedCloud) -> Result<MomentTensor> {
    project_points(basis, &cloud.points, &cloud.weights)
}

/// Projection of explicit points and weights (already normalized).
pub fn project_points(
    basis: &ZernikeBasis,
    points: &[Point],
    weights: &[f64],
) -> Result<MomentTensor> {
    if points.is_empty() {
        return Err(Error::InvalidCloud("cannot project an empty cloud".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::SizeMismatch(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let mut out = MomentTensor::like(basis);
    let len = out.data.len();
    let partials: Vec<Vec<f64>> = points
        .par_chunks(CHUNK)
        .zip(weights.par_chunks(CHUNK))
        .map(|(pts, ws)| {
            let mut acc = vec![0.0; len];
            let mut buf = vec![0.0; len];
            for (p, &w) in pts.iter().zip(ws) {
                basis.eval_all(p, &mut buf, None);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += w * b;
                }
            }
            acc
        })
        .collect();
    let inv_n = 1.0 / points.len() as f64;
    for part in partials {
        for (a, b) in out.data.iter_mut().zip(&part) {
            *a += b;
        }
    }
    for a in out.data.iter_mut() {
        *a *= inv_n;
    }
    Ok(out)
}

/// Truncated expansion `Σ c_{nℓm} Z_{nℓm}(x)` at each grid point.
pub fn reconstruct_density(
    moments: &MomentTensor,
    basis: &ZernikeBasis,
    grid: &[Point],
) -> Result<Vec<f64>> {
    if moments.n_max() != basis.n_max() || moments.l_max() != basis.l_max() {
        return Err(Error::TruncationMismatch("moments and basis differ".into()));
    }
    Ok(grid
        .par_iter()
        .map_init(
            || vec![0.0; moments.data.len()],
            |buf, x| {
                basis.eval_all(x, buf, None);
                buf.iter().zip(&moments.data).map(|(z, c)| z * c).sum()
            },
        )
        .collect())
}
