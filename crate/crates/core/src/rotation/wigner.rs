//! Real Wigner-D blocks from quaternions and Euler angles.
//!
//! Complex blocks are built in the standard `|ℓ m⟩` basis and then conjugated
//! into the real spherical-harmonic basis, where they act on the azimuthal
//! vectors of a [`MomentTensor`]. The convention is active: for every degree,
//! `Y(R(q) x) = D(q) Y(x)`, hence `project(rotate(X, q)) = D(q) · project(X)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::quaternion::UnitQuaternion;
use crate::error::{Error, Result};
use crate::zernike::MomentTensor;

type C = Complex64;

const I: C = C::new(0.0, 1.0);

/// Per-degree real rotation blocks for `ℓ = 0..=ℓ_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerBlockSet {
    blocks: Vec<DMatrix<f64>>,
}

impl WignerBlockSet {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        for (l, b) in blocks.iter().enumerate() {
            if b.nrows() != 2 * l + 1 || b.ncols() != 2 * l + 1 {
                return Err(Error::SizeMismatch(format!(
                    "block {l} has shape {}x{}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn identity(l_max: usize) -> Self {
        Self {
            blocks: (0..=l_max)
                .map(|l| DMatrix::identity(2 * l + 1, 2 * l + 1))
                .collect(),
        }
    }

    fn zeros(l_max: usize) -> Self {
        Self {
            blocks: (0..=l_max)
                .map(|l| DMatrix::zeros(2 * l + 1, 2 * l + 1))
                .collect(),
        }
    }

    pub fn l_max(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, l: usize) -> &DMatrix<f64> {
        &self.blocks[l]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Blockwise product `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.transpose()).collect(),
        }
    }

    /// Largest `‖DᵀD − I‖_max` over blocks.
    pub fn orthogonality_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.nrows();
                (b.transpose() * b - DMatrix::identity(n, n)).abs().max()
            })
            .fold(0.0, f64::max)
    }

    /// Largest entrywise difference from `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }
}

/// Dense `Q^ℓ` with `Y^complex = Q^ℓ Y^real`, rows and columns ordered `m = −ℓ..ℓ`.
pub fn real_cob_matrix(l: usize) -> DMatrix<C> {
    let n = 2 * l + 1;
    let mut q = DMatrix::zeros(n, n);
    for (j, col) in cob_columns(l).into_iter().enumerate() {
        for (i, v) in col {
            q[(i, j)] = v;
        }
    }
    q
}

/// Nonzero entries of each column of `Q^ℓ` as `(row, value)`.
fn cob_columns(l: usize) -> Vec<Vec<(usize, C)>> {
    let li = l as i64;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (-li..=li)
        .map(|mr| {
            let a = mr.abs();
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            let row = |m: i64| (m + li) as usize;
            match mr.cmp(&0) {
                std::cmp::Ordering::Equal => vec![(row(0), C::new(1.0, 0.0))],
                std::cmp::Ordering::Greater => {
                    vec![(row(-a), C::new(h, 0.0)), (row(a), C::new(sign * h, 0.0))]
                }
                std::cmp::Ordering::Less => {
                    vec![(row(-a), C::new(0.0, -h)), (row(a), C::new(0.0, sign * h))]
                }
            }
        })
        .collect()
}

/// `(Q^ℓ)† M Q^ℓ` for a flat row-major complex matrix, returning the real part
/// and the largest discarded imaginary magnitude.
fn complex_to_real(cols: &[Vec<(usize, C)>], m: &[C]) -> (DMatrix<f64>, f64) {
    let n = cols.len();
    let mut out = DMatrix::zeros(n, n);
    let mut resid: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = C::new(0.0, 0.0);
            for &(r, qi) in &cols[i] {
                for &(c, qj) in &cols[j] {
                    s += qi.conj() * m[r * n + c] * qj;
                }
            }
            out[(i, j)] = s.re;
            resid = resid.max(s.im.abs());
        }
    }
    (out, resid)
}

/// One monomial `coef · a^e0 ā^e1 b^e2 b̄^e3` of a complex Wigner-D entry.
#[derive(Clone, Copy, Debug)]
struct Term {
    idx: usize,
    coef: f64,
    e: [usize; 4],
}

/// Precomputed factorial prefactors and binomial products of the
/// quaternion Wigner-D sum, for every `(ℓ, m', m, ρ)` up to `ℓ_max`.
#[derive(Clone, Debug)]
pub struct WignerTable {
    l_max: usize,
    terms: Vec<Vec<Term>>,
    cob: Vec<Vec<Vec<(usize, C)>>>,
}

/// ∂u/∂q for `u = (a, ā, b, b̄)`, `a = w + i z`, `b = y + i x`; rows are `(w, x, y, z)`.
const CHAIN: [[C; 4]; 4] = [
    [
        C::new(1.0, 0.0),
        C::new(1.0, 0.0),
        C::new(0.0, 0.0),
        C::new(0.0, 0.0),
    ],
    [
        C::new(0.0, 0.0),
        C::new(0.0, 0.0),
        C::new(0.0, 1.0),
        C::new(0.0, -1.0),
    ],
    [
        C::new(0.0, 0.0),
        C::new(0.0, 0.0),
        C::new(1.0, 0.0),
        C::new(1.0, 0.0),
    ],
    [
        C::new(0.0, 1.0),
        C::new(0.0, -1.0),
        C::new(0.0, 0.0),
        C::new(0.0, 0.0),
    ],
];

/// Index of the unordered pair `(j, k)` among the 10 second derivatives.
pub fn sym_index(j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    a * 4 - a * (a + 1) / 2 + b
}

impl WignerTable {
    pub fn new(l_max: usize) -> Self {
        let fact = factorials(2 * l_max + 1);
        let binom = |n: usize, k: usize| fact[n] / (fact[k] * fact[n - k]);
        let mut terms = Vec::with_capacity(l_max + 1);
        for l in 0..=l_max {
            let li = l as i64;
            let n = 2 * l + 1;
            let mut t = Vec::new();
            for mp in -li..=li {
                for m in -li..=li {
                    let f = |x: i64| fact[x as usize];
                    let pre = (f(li + m) * f(li - m) / (f(li + mp) * f(li - mp))).sqrt();
                    let lo = 0.max(mp - m);
                    let hi = (li + mp).min(li - m);
                    for rho in lo..=hi {
                        let sign = if rho % 2 == 0 { 1.0 } else { -1.0 };
                        let coef = sign
                            * pre
                            * binom((li + mp) as usize, rho as usize)
                            * binom((li - mp) as usize, (li - rho - m) as usize);
                        t.push(Term {
                            idx: ((mp + li) as usize) * n + (m + li) as usize,
                            coef,
                            e: [
                                (li + mp - rho) as usize,
                                (li - rho - m) as usize,
                                (rho - mp + m) as usize,
                                rho as usize,
                            ],
                        });
                    }
                }
            }
            terms.push(t);
        }
        Self {
            l_max,
            terms,
            cob: (0..=l_max).map(cob_columns).collect(),
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    fn powers(&self, q: &UnitQuaternion) -> [Vec<C>; 4] {
        let a = C::new(q.w(), q.z());
        let b = C::new(q.y(), q.x());
        let base = [a, a.conj(), b, b.conj()];
        let top = 2 * self.l_max + 1;
        base.map(|u| {
            let mut p = Vec::with_capacity(top + 1);
            p.push(C::new(1.0, 0.0));
            for e in 1..=top {
                p.push(p[e - 1] * u);
            }
            p
        })
    }

    /// Real blocks `D^ℓ(q)` for `ℓ ≤ ℓ_max`.
    pub fn eval(&self, q: &UnitQuaternion) -> WignerBlockSet {
        self.eval_checked(q).0
    }

    /// As [`eval`](Self::eval), also returning the largest discarded
    /// imaginary residue.
    pub fn eval_checked(&self, q: &UnitQuaternion) -> (WignerBlockSet, f64) {
        let pw = self.powers(q);
        let mut resid: f64 = 0.0;
        let blocks = (0..=self.l_max)
            .map(|l| {
                let n = 2 * l + 1;
                let mut m = vec![C::new(0.0, 0.0); n * n];
                for t in &self.terms[l] {
                    m[t.idx] +=
                        pw[0][t.e[0]] * pw[1][t.e[1]] * pw[2][t.e[2]] * pw[3][t.e[3]] * t.coef;
                }
                let (r, res) = complex_to_real(&self.cob[l], &m);
                resid = resid.max(res);
                r
            })
            .collect();
        (WignerBlockSet { blocks }, resid)
    }

    /// Blocks together with their first (and optionally second) partial
    /// derivatives with respect to the quaternion components `(w, x, y, z)`,
    /// treating `D` as a polynomial on all of ℝ⁴.
    pub fn eval_jet(&self, q: &UnitQuaternion, second: bool) -> WignerJet {
        let pw = self.powers(q);
        let dp = |k: usize, e: usize| -> C {
            if e == 0 {
                C::new(0.0, 0.0)
            } else {
                pw[k][e - 1] * e as f64
            }
        };
        let d2p = |k: usize, e: usize| -> C {
            if e < 2 {
                C::new(0.0, 0.0)
            } else {
                pw[k][e - 2] * (e * (e - 1)) as f64
            }
        };
        let mut value = WignerBlockSet::zeros(self.l_max);
        let mut grad: [WignerBlockSet; 4] =
            std::array::from_fn(|_| WignerBlockSet::zeros(self.l_max));
        let mut hess: Vec<WignerBlockSet> = if second {
            (0..10).map(|_| WignerBlockSet::zeros(self.l_max)).collect()
        } else {
            Vec::new()
        };
        for l in 0..=self.l_max {
            let n = 2 * l + 1;
            let zero = vec![C::new(0.0, 0.0); n * n];
            let mut v = zero.clone();
            let mut du: [Vec<C>; 4] = std::array::from_fn(|_| zero.clone());
            let mut duu: Vec<Vec<C>> = if second {
                vec![zero.clone(); 10]
            } else {
                Vec::new()
            };
            for t in &self.terms[l] {
                let p = [pw[0][t.e[0]], pw[1][t.e[1]], pw[2][t.e[2]], pw[3][t.e[3]]];
                let d = [dp(0, t.e[0]), dp(1, t.e[1]), dp(2, t.e[2]), dp(3, t.e[3])];
                v[t.idx] += p[0] * p[1] * p[2] * p[3] * t.coef;
                for k in 0..4 {
                    let mut prod = d[k] * t.coef;
                    for (j, pj) in p.iter().enumerate() {
                        if j != k {
                            prod *= pj;
                        }
                    }
                    du[k][t.idx] += prod;
                }
                if second {
                    for k in 0..4 {
                        for kk in k..4 {
                            let mut prod = if k == kk {
                                d2p(k, t.e[k])
                            } else {
                                d[k] * d[kk]
                            } * t.coef;
                            for (j, pj) in p.iter().enumerate() {
                                if j != k && j != kk {
                                    prod *= pj;
                                }
                            }
                            duu[sym_index(k, kk)][t.idx] += prod;
                        }
                    }
                }
            }
            value.blocks[l] = complex_to_real(&self.cob[l], &v).0;
            for j in 0..4 {
                let mut acc = zero.clone();
                for k in 0..4 {
                    let c = CHAIN[j][k];
                    if c != C::new(0.0, 0.0) {
                        for (a, b) in acc.iter_mut().zip(&du[k]) {
                            *a += c * b;
                        }
                    }
                }
                grad[j].blocks[l] = complex_to_real(&self.cob[l], &acc).0;
            }
            if second {
                for j in 0..4 {
                    for jj in j..4 {
                        let mut acc = zero.clone();
                        for k in 0..4 {
                            for kk in 0..4 {
                                let c = CHAIN[j][k] * CHAIN[jj][kk];
                                if c != C::new(0.0, 0.0) {
                                    for (a, b) in acc.iter_mut().zip(&duu[sym_index(k, kk)]) {
                                        *a += c * b;
                                    }
                                }
                            }
                        }
                        hess[sym_index(j, jj)].blocks[l] = complex_to_real(&self.cob[l], &acc).0;
                    }
                }
            }
        }
        WignerJet { value, grad, hess }
    }
}

/// Wigner-D blocks with partial derivatives in the quaternion components.
#[derive(Clone, Debug)]
pub struct WignerJet {
    pub value: WignerBlockSet,
    /// `∂D/∂q_j` for `j ∈ (w, x, y, z)`.
    pub grad: [WignerBlockSet; 4],
    /// `∂²D/∂q_j∂q_k` indexed by [`sym_index`]; empty unless requested.
    pub hess: Vec<WignerBlockSet>,
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Blocks `D^ℓ(q)` for `ℓ ≤ ℓ_max` via the Cayley–Klein binomial sum.
pub fn wigner_d_quat(l_max: usize, q: &UnitQuaternion) -> WignerBlockSet {
    WignerTable::new(l_max).eval(q)
}

/// Angular-momentum operators of degree `ℓ` in the complex basis and the
/// matching real rotation generators.
#[derive(Clone, Debug)]
pub struct GeneratorSet {
    pub jx: DMatrix<C>,
    pub jy: DMatrix<C>,
    pub jz: DMatrix<C>,
    /// Real skew-symmetric generators with `exp(θ L_k) = D(rotation by θ about axis k)`.
    pub lx: DMatrix<f64>,
    pub ly: DMatrix<f64>,
    pub lz: DMatrix<f64>,
}

/// Ladder-operator construction of `J_x, J_y, J_z` and their real forms.
pub fn su2_generators(l: usize) -> GeneratorSet {
    let n = 2 * l + 1;
    let li = l as i64;
    let mut jp = DMatrix::<C>::zeros(n, n);
    let mut jm = DMatrix::<C>::zeros(n, n);
    let mut jz = DMatrix::<C>::zeros(n, n);
    for mp in -li..=li {
        let c = (mp + li) as usize;
        if mp < li {
            jp[(c + 1, c)] = C::new((((li - mp) * (li + mp + 1)) as f64).sqrt(), 0.0);
        }
        if mp > -li {
            jm[(c - 1, c)] = C::new((((li + mp) * (li - mp + 1)) as f64).sqrt(), 0.0);
        }
        jz[(c, c)] = C::new(mp as f64, 0.0);
    }
    let jx = (&jp + &jm) * C::new(0.5, 0.0);
    let jy = (&jp - &jm) / (I * 2.0);
    let cols = cob_columns(l);
    let real = |j: &DMatrix<C>| {
        // Real generator: Q† conj(−i J) Q.
        let m = (j * -I).map(|z| z.conj());
        let flat: Vec<C> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
        complex_to_real(&cols, &flat).0
    };
    GeneratorSet {
        lx: real(&jx),
        ly: real(&jy),
        lz: real(&jz),
        jx,
        jy,
        jz,
    }
}

/// `D(α, β, γ) = exp(α L_z) exp(β L_y) exp(γ L_x)` per degree, i.e. the
/// blocks of the rotation `R_z(α) R_y(β) R_x(γ)`.
pub fn wigner_d_euler(l_max: usize, alpha: f64, beta: f64, gamma: f64) -> WignerBlockSet {
    EulerJet::new(l_max, alpha, beta, gamma, false).value
}

/// Euler-angle Wigner-D blocks with derivatives in `(α, β, γ)`.
#[derive(Clone, Debug)]
pub struct EulerJet {
    pub value: WignerBlockSet,
    pub grad: [WignerBlockSet; 3],
    /// Second derivatives indexed `[αα, αβ, αγ, ββ, βγ, γγ]`; empty unless requested.
    pub hess: Vec<WignerBlockSet>,
}

impl EulerJet {
    pub fn new(l_max: usize, alpha: f64, beta: f64, gamma: f64, second: bool) -> Self {
        let mut value = Vec::new();
        let mut grad: [Vec<DMatrix<f64>>; 3] = Default::default();
        let mut hess: Vec<Vec<DMatrix<f64>>> = if second {
            vec![Vec::new(); 6]
        } else {
            Vec::new()
        };
        for l in 0..=l_max {
            let g = su2_generators(l);
            let a = (&g.lz * alpha).exp();
            let b = (&g.ly * beta).exp();
            let c = (&g.lx * gamma).exp();
            let bc = &b * &c;
            let d = &a * &bc;
            let a_ly_b_c = &a * &g.ly * &bc;
            grad[0].push(&g.lz * &d);
            grad[1].push(a_ly_b_c.clone());
            grad[2].push(&d * &g.lx);
            if second {
                hess[0].push(&g.lz * &g.lz * &d);
                hess[1].push(&g.lz * &a_ly_b_c);
                hess[2].push(&g.lz * &d * &g.lx);
                hess[3].push(&a * &g.ly * &g.ly * &bc);
                hess[4].push(&a_ly_b_c * &g.lx);
                hess[5].push(&d * &g.lx * &g.lx);
            }
            value.push(d);
        }
        let wrap = |blocks| WignerBlockSet { blocks };
        Self {
            value: wrap(value),
            grad: grad.map(wrap),
            hess: hess.into_iter().map(wrap).collect(),
        }
    }
}

/// Multiplies every azimuthal vector `c_{nℓ·}` by `D^ℓ`.
pub fn rotate_spectrum(moments: &MomentTensor, blocks: &WignerBlockSet) -> Result<MomentTensor> {
    if blocks.l_max() < moments.l_max() {
        return Err(Error::TruncationMismatch(format!(
            "blocks cover l_max={} but moments need {}",
            blocks.l_max(),
            moments.l_max()
        )));
    }
    let mut out = moments.clone();
    for l in 0..=moments.l_max() {
        let d = blocks.block(l);
        for k in 0..moments.radial_slots(l) {
            let v = moments.azimuthal(k, l);
            let rotated = d * nalgebra::DVector::from_column_slice(v);
            out.azimuthal_mut(k, l).copy_from_slice(rotated.as_slice());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn cob_is_unitary() {
        for l in 0..=10 {
            let q = real_cob_matrix(l);
            let n = 2 * l + 1;
            let e = (&q * q.adjoint() - DMatrix::<C>::identity(n, n))
                .map(|z| z.norm())
                .max();
            assert!(e < 1e-14, "l={l}: {e}");
        }
        assert_eq!(real_cob_matrix(0)[(0, 0)], C::new(1.0, 0.0));
    }

    #[test]
    fn identity_quaternion_gives_identity_blocks() {
        let d = wigner_d_quat(10, &UnitQuaternion::identity());
        assert!(d.max_abs_diff(&WignerBlockSet::identity(10)) < 1e-15);
        assert_eq!(d.block(0)[(0, 0)], 1.0);
    }

    #[test]
    fn blocks_orthogonal_and_real() {
        let table = WignerTable::new(10);
        let mut r = rng(1);
        for _ in 0..20 {
            let (d, resid) = table.eval_checked(&UnitQuaternion::random(&mut r));
            assert!(d.orthogonality_error() < 1e-10);
            assert!(resid < 1e-10);
        }
    }

    #[test]
    fn degree_one_is_permuted_rotation_matrix() {
        // Real ℓ=1 harmonics are ordered (y, z, x).
        let p = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let mut r = rng(2);
        for _ in 0..20 {
            let q = UnitQuaternion::random(&mut r);
            let d = wigner_d_quat(1, &q);
            let expect = p * q.to_rotation_matrix() * p.transpose();
            let got = Matrix3::from_iterator(d.block(1).iter().copied());
            assert!((got - expect).abs().max() < 1e-12);
        }
    }

    #[test]
    fn representation_property_and_double_cover() {
        let table = WignerTable::new(10);
        let mut r = rng(3);
        for _ in 0..20 {
            let a = UnitQuaternion::random(&mut r);
            let b = UnitQuaternion::random(&mut r);
            let lhs = table.eval(&a.multiply(&b));
            let rhs = table.eval(&a).compose(&table.eval(&b));
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
            assert!(table.eval(&a).max_abs_diff(&table.eval(&a.neg())) < 1e-14);
        }
    }

    #[test]
    fn generators_commutation_and_skew() {
        for l in 0..=10 {
            let g = su2_generators(l);
            let comm = &g.jx * &g.jy - &g.jy * &g.jx;
            let err = (comm - &g.jz * I).map(|z| z.norm()).max();
            assert!(err < 1e-12, "l={l}");
            for m in [&g.lx, &g.ly, &g.lz] {
                assert!((m + m.transpose()).abs().max() < 1e-12);
            }
            if l == 0 {
                assert_eq!(g.lx[(0, 0)], 0.0);
                assert_eq!(g.jz[(0, 0)], C::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn generator_exponentials_match_axis_rotations() {
        for l in 1..=6 {
            let g = su2_generators(l);
            for (gen, axis) in [
                (&g.lx, Vector3::x()),
                (&g.ly, Vector3::y()),
                (&g.lz, Vector3::z()),
            ] {
                let theta = 0.83;
                let q = UnitQuaternion::from_axis_angle(&axis, theta).unwrap();
                let d = wigner_d_quat(l, &q);
                assert!(((gen * theta).exp() - d.block(l)).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn euler_matches_quaternion_and_composes() {
        let mut r = rng(4);
        use rand::Rng;
        for _ in 0..10 {
            let (a, b, g) = (
                r.random_range(-3.0..3.0),
                r.random_range(-1.4..1.4),
                r.random_range(-3.0..3.0),
            );
            let de = wigner_d_euler(8, a, b, g);
            let dq = wigner_d_quat(8, &UnitQuaternion::from_euler_zyx(a, b, g));
            assert!(de.max_abs_diff(&dq) < 1e-9);
            let prod = wigner_d_euler(8, a, 0.0, 0.0)
                .compose(&wigner_d_euler(8, 0.0, b, 0.0))
                .compose(&wigner_d_euler(8, 0.0, 0.0, g));
            assert!(prod.max_abs_diff(&de) < 1e-10);
        }
        assert!(
            wigner_d_euler(5, 0.0, 0.0, 0.0).max_abs_diff(&WignerBlockSet::identity(5)) < 1e-15
        );
    }

    fn perturbed(q: &UnitQuaternion, j: usize, h: f64) -> [f64; 4] {
        let mut v = q.to_array();
        v[j] += h;
        v
    }

    /// Evaluates the (unnormalized) polynomial D at an arbitrary 4-vector by
    /// scaling: each block is homogeneous of degree 2ℓ in q.
    fn d_at(table: &WignerTable, v: [f64; 4]) -> WignerBlockSet {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q = UnitQuaternion::from_vector(&nalgebra::Vector4::from(v)).unwrap();
        let mut d = table.eval(&q);
        for (l, b) in d.blocks.iter_mut().enumerate() {
            *b *= n.powi(2 * l as i32);
        }
        d
    }

    #[test]
    fn quaternion_derivatives_match_finite_differences() {
        let table = WignerTable::new(6);
        let q = UnitQuaternion::random(&mut rng(5));
        let jet = table.eval_jet(&q, true);
        assert!(jet.value.max_abs_diff(&table.eval(&q)) < 1e-14);
        let h = 1e-5;
        for j in 0..4 {
            let p = d_at(&table, perturbed(&q, j, h));
            let m = d_at(&table, perturbed(&q, j, -h));
            for l in 0..=6 {
                let fd = (p.block(l) - m.block(l)) / (2.0 * h);
                let err = (fd - jet.grad[j].block(l)).abs().max();
                assert!(err < 1e-7, "grad j={j} l={l} err={err}");
            }
            let qp = UnitQuaternion::from_vector(&nalgebra::Vector4::from(perturbed(&q, j, h)));
            let _ = qp;
            let jp = jet_at(&table, perturbed(&q, j, h));
            let jm = jet_at(&table, perturbed(&q, j, -h));
            for k in 0..4 {
                for l in 0..=6 {
                    let fd = (jp[k].block(l) - jm[k].block(l)) / (2.0 * h);
                    let err = (fd - jet.hess[sym_index(j, k)].block(l)).abs().max();
                    assert!(err < 1e-6, "hess j={j} k={k} l={l} err={err}");
                }
            }
        }
    }

    /// First derivatives at an arbitrary 4-vector using homogeneity:
    /// ∂D(s u)/∂v = s^{2ℓ−1} (∂D/∂v)(u) for |u| = 1.
    fn jet_at(table: &WignerTable, v: [f64; 4]) -> [WignerBlockSet; 4] {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q = UnitQuaternion::from_vector(&nalgebra::Vector4::from(v)).unwrap();
        let mut g = table.eval_jet(&q, false).grad;
        for set in g.iter_mut() {
            for (l, b) in set.blocks.iter_mut().enumerate() {
                *b *= n.powi(2 * l as i32 - 1);
            }
        }
        g
    }

    #[test]
    fn euler_derivatives_match_finite_differences() {
        let (a, b, g) = (0.4, -0.3, 1.2);
        let jet = EulerJet::new(4, a, b, g, true);
        let h = 1e-5;
        let shift = |k: usize, s: f64| {
            let mut v = [a, b, g];
            v[k] += s;
            v
        };
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for k in 0..3 {
            let p = shift(k, h);
            let m = shift(k, -h);
            let dp = wigner_d_euler(4, p[0], p[1], p[2]);
            let dm = wigner_d_euler(4, m[0], m[1], m[2]);
            let jp = EulerJet::new(4, p[0], p[1], p[2], false);
            let jm = EulerJet::new(4, m[0], m[1], m[2], false);
            for l in 0..=4 {
                let fd = (dp.block(l) - dm.block(l)) / (2.0 * h);
                assert!((fd - jet.grad[k].block(l)).abs().max() < 1e-8);
                for kk in 0..3 {
                    let idx = pairs
                        .iter()
                        .position(|&pr| pr == (k.min(kk), k.max(kk)))
                        .unwrap();
                    let fd2 = (jp.grad[kk].block(l) - jm.grad[kk].block(l)) / (2.0 * h);
                    assert!((fd2 - jet.hess[idx].block(l)).abs().max() < 1e-7);
                }
            }
        }
    }
}
