//! Power spectrum, bispectrum and trispectrum of Zernike moments.
//!
//! Moments are coupled per radial slot `k` (`n = ℓ + 2k`), after conversion
//! to the complex harmonic basis, where standard Clebsch–Gordan coupling
//! applies. The last factor of each product is conjugated, which is what
//! makes the contraction rotation invariant.

use std::collections::BTreeSet;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use super::clebsch::ClebschTable;
use crate::rotation::real_cob_matrix;
use crate::zernike::MomentTensor;

/// Imaginary residue above which a contraction is considered broken.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumOrder {
    Power,
    Bispectrum,
    Trispectrum,
}

impl SpectrumOrder {
    pub fn degree(self) -> usize {
        match self {
            Self::Power => 2,
            Self::Bispectrum => 3,
            Self::Trispectrum => 4,
        }
    }

    pub fn from_degree(d: usize) -> Option<Self> {
        match d {
            2 => Some(Self::Power),
            3 => Some(Self::Bispectrum),
            4 => Some(Self::Trispectrum),
            _ => None,
        }
    }

    /// This order and all lower ones.
    pub fn cumulative(self) -> &'static [SpectrumOrder] {
        match self {
            Self::Power => &[Self::Power],
            Self::Bispectrum => &[Self::Power, Self::Bispectrum],
            Self::Trispectrum => &[Self::Power, Self::Bispectrum, Self::Trispectrum],
        }
    }
}

/// Invariants of one order, laid out slot-major: for each radial slot `k`,
/// one value per entry of the order's index set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantVector {
    pub order: SpectrumOrder,
    pub slots: usize,
    /// Entries per slot: `ℓ_max + 1`, `|I_B|` or `|I_T|`.
    pub per_slot: usize,
    pub values: Vec<f64>,
    /// Largest dropped imaginary part.
    pub imaginary_residue: f64,
}

/// A trispectrum quartet with the intermediate degrees it couples through.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrispectrumEntry {
    pub l: [usize; 4],
    pub l_prime: Vec<usize>,
}

/// Triplets `(ℓ₁, ℓ₂, ℓ₃)` up to `l_max` obeying the triangle rule with
/// even `ℓ₁ + ℓ₂ + ℓ₃`.
pub fn bispectrum_index_set(l_max: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for l1 in 0..=l_max {
        for l2 in 0..=l_max {
            // Starting at |ℓ₁ − ℓ₂| fixes the parity; stepping by 2 keeps it.
            let mut l3 = l1.abs_diff(l2);
            while l3 <= (l1 + l2).min(l_max) {
                out.push([l1, l2, l3]);
                l3 += 2;
            }
        }
    }
    out
}

/// Quartets up to `l_max` with a nonempty set of intermediate degrees `ℓ′`
/// satisfying both triangle rules and both parity rules. `ℓ′` may exceed
/// `l_max`.
pub fn trispectrum_index_set(l_max: usize) -> Vec<TrispectrumEntry> {
    let mut out = Vec::new();
    for l1 in 0..=l_max {
        for l2 in 0..=l_max {
            for l3 in 0..=l_max {
                for l4 in 0..=l_max {
                    if (l1 + l2 + l3 + l4) % 2 != 0 {
                        continue;
                    }
                    let lo = l1.abs_diff(l2).max(l3.abs_diff(l4));
                    let hi = (l1 + l2).min(l3 + l4);
                    let start = if (lo + l1 + l2) % 2 == 0 { lo } else { lo + 1 };
                    let l_prime: Vec<usize> = (start..=hi).step_by(2).collect();
                    if !l_prime.is_empty() {
                        out.push(TrispectrumEntry {
                            l: [l1, l2, l3, l4],
                            l_prime,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Exhaustive filter over all index triples; a check on the enumeration above.
pub fn brute_force_bispectrum_set(l_max: usize) -> BTreeSet<[usize; 3]> {
    let mut s = BTreeSet::new();
    for l1 in 0..=l_max {
        for l2 in 0..=l_max {
            for l3 in 0..=l_max {
                let triangle = l1.abs_diff(l2) <= l3 && l3 <= l1 + l2;
                if triangle && (l1 + l2 + l3) % 2 == 0 {
                    s.insert([l1, l2, l3]);
                }
            }
        }
    }
    s
}

/// Exhaustive filter over all `(ℓ₁, ℓ₂, ℓ₃, ℓ₄, ℓ′)` with `ℓ′ ≤ 2 l_max`.
pub fn brute_force_trispectrum_set(l_max: usize) -> BTreeSet<([usize; 4], usize)> {
    let mut s = BTreeSet::new();
    for l1 in 0..=l_max {
        for l2 in 0..=l_max {
            for l3 in 0..=l_max {
                for l4 in 0..=l_max {
                    for lp in 0..=2 * l_max {
                        let t12 = l1.abs_diff(l2) <= lp && lp <= l1 + l2;
                        let t34 = l3.abs_diff(l4) <= lp && lp <= l3 + l4;
                        let parity = (l1 + l2 + lp) % 2 == 0 && (l3 + l4 + lp) % 2 == 0;
                        if t12 && t34 && parity {
                            s.insert(([l1, l2, l3, l4], lp));
                        }
                    }
                }
            }
        }
    }
    s
}

/// Complex-basis moments `u[k][ℓ] = Q^ℓ c[k][ℓ]`, indexed by `m + ℓ`.
pub fn complex_moments(c: &MomentTensor) -> Vec<Vec<Vec<C>>> {
    let [slots, _, _] = c.dims();
    let qs: Vec<_> = (0..=c.l_max()).map(real_cob_matrix).collect();
    (0..slots)
        .map(|k| {
            (0..=c.l_max())
                .map(|l| {
                    let v = c.azimuthal(k, l);
                    (0..2 * l + 1)
                        .map(|i| (0..2 * l + 1).map(|j| qs[l][(i, j)] * v[j]).sum())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// `c̄_ℓ = Σ_{n,m} c² / (n_max (2ℓ+1))`.
fn degree_energy(c: &MomentTensor) -> Vec<f64> {
    let [slots, _, _] = c.dims();
    let nm = c.n_max().max(1) as f64;
    (0..=c.l_max())
        .map(|l| {
            let s: f64 = (0..slots)
                .map(|k| c.azimuthal(k, l).iter().map(|v| v * v).sum::<f64>())
                .sum();
            s / (nm * (2 * l + 1) as f64)
        })
        .collect()
}

/// Complex moments scaled by `1/√c̄_ℓ`; degrees with `c̄_ℓ = 0` become zero.
fn normalized_complex(c: &MomentTensor) -> Vec<Vec<Vec<C>>> {
    let energy = degree_energy(c);
    let mut u = complex_moments(c);
    for slot in u.iter_mut() {
        for (l, v) in slot.iter_mut().enumerate() {
            let s = if energy[l] > 0.0 {
                1.0 / energy[l].sqrt()
            } else {
                0.0
            };
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }
    u
}

/// `Σ_{m₁} ⟨ℓ₁ m₁; ℓ₂ m−m₁ | ℓ m⟩ a_{m₁} b_{m−m₁}` for every `m`.
fn couple(cg: &ClebschTable, l1: usize, a: &[C], l2: usize, b: &[C], l: usize) -> Vec<C> {
    let (i1, i2, il) = (l1 as i64, l2 as i64, l as i64);
    (-il..=il)
        .map(|m| {
            let mut s = C::new(0.0, 0.0);
            for m1 in (-i1).max(m - i2)..=i1.min(m + i2) {
                let w = cg.get(l1, m1, l2, m - m1, l);
                if w != 0.0 {
                    s += a[(m1 + i1) as usize] * b[(m - m1 + i2) as usize] * w;
                }
            }
            s
        })
        .collect()
}

fn dot_conj(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn power(c: &MomentTensor) -> InvariantVector {
    let [slots, _, _] = c.dims();
    let per_slot = c.l_max() + 1;
    let mut values = Vec::with_capacity(slots * per_slot);
    for k in 0..slots {
        for l in 0..=c.l_max() {
            values.push(c.azimuthal(k, l).iter().map(|v| v * v).sum::<f64>() / (2 * l + 1) as f64);
        }
    }
    InvariantVector {
        order: SpectrumOrder::Power,
        slots,
        per_slot,
        values,
        imaginary_residue: 0.0,
    }
}

fn bispectrum(c: &MomentTensor, cg: &ClebschTable) -> InvariantVector {
    let u = normalized_complex(c);
    let set = bispectrum_index_set(c.l_max());
    let mut values = Vec::with_capacity(u.len() * set.len());
    let mut residue: f64 = 0.0;
    for slot in &u {
        for &[l1, l2, l3] in &set {
            let p = couple(cg, l1, &slot[l1], l2, &slot[l2], l3);
            let b = dot_conj(&p, &slot[l3]);
            residue = residue.max(b.im.abs());
            values.push(b.re);
        }
    }
    InvariantVector {
        order: SpectrumOrder::Bispectrum,
        slots: u.len(),
        per_slot: set.len(),
        values,
        imaginary_residue: residue,
    }
}

fn trispectrum(c: &MomentTensor, cg: &ClebschTable) -> InvariantVector {
    let u = normalized_complex(c);
    let l_max = c.l_max();
    let set = trispectrum_index_set(l_max);
    let n = l_max + 1;
    let mut values = Vec::with_capacity(u.len() * set.len());
    let mut residue: f64 = 0.0;
    for slot in &u {
        // Coupled pair products, indexed [ℓ₁][ℓ₂][ℓ′].
        let mut pairs: Vec<Vec<Vec<Vec<C>>>> = vec![vec![Vec::new(); n]; n];
        for l1 in 0..n {
            for l2 in 0..n {
                pairs[l1][l2] = (0..=l1 + l2)
                    .map(|lp| {
                        if lp < l1.abs_diff(l2) {
                            Vec::new()
                        } else {
                            couple(cg, l1, &slot[l1], l2, &slot[l2], lp)
                        }
                    })
                    .collect();
            }
        }
        for e in &set {
            let [l1, l2, l3, l4] = e.l;
            let t: C = e
                .l_prime
                .iter()
                .map(|&lp| dot_conj(&pairs[l1][l2][lp], &pairs[l3][l4][lp]))
                .sum();
            residue = residue.max(t.im.abs());
            values.push(t.re);
        }
    }
    InvariantVector {
        order: SpectrumOrder::Trispectrum,
        slots: u.len(),
        per_slot: set.len(),
        values,
        imaginary_residue: residue,
    }
}

/// Rotation-invariant descriptors of one order.
pub fn spectral_invariants(c: &MomentTensor, order: SpectrumOrder) -> InvariantVector {
    match order {
        SpectrumOrder::Power => power(c),
        SpectrumOrder::Bispectrum => bispectrum(c, &ClebschTable::new(c.l_max())),
        SpectrumOrder::Trispectrum => trispectrum(c, &ClebschTable::new(c.l_max())),
    }
}

/// Invariants of `order` and every lower order, concatenated.
pub fn cumulative_invariants(c: &MomentTensor, order: SpectrumOrder) -> Vec<f64> {
    order
        .cumulative()
        .iter()
        .flat_map(|o| spectral_invariants(c, *o).values)
        .collect()
}

fn order_distance(a: &InvariantVector, b: &InvariantVector, n_max: usize, l_max: usize) -> f64 {
    let sq: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let count = match a.order {
        SpectrumOrder::Power => l_max.max(1),
        _ => a.per_slot.max(1),
    };
    sq / (n_max.max(1) * count) as f64
}

/// Mean squared difference of invariants. With `cumulative`, lower orders
/// are included and their distances summed.
pub fn spectral_distance(
    x: &MomentTensor,
    y: &MomentTensor,
    order: SpectrumOrder,
    cumulative: bool,
) -> crate::Result<f64> {
    x.check_compatible(y)?;
    let orders: &[SpectrumOrder] = if cumulative {
        order.cumulative()
    } else {
        std::slice::from_ref(&order)
    };
    Ok(orders
        .iter()
        .map(|o| {
            order_distance(
                &spectral_invariants(x, *o),
                &spectral_invariants(y, *o),
                x.n_max(),
                x.l_max(),
            )
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Axis;
    use crate::fixtures;
    use crate::rotation::{rotate_spectrum, wigner_d_quat, UnitQuaternion};
    use crate::zernike::{project_moments, ZernikeBasis};
    use rand::SeedableRng;

    fn bunny_moments(
        n_max: usize,
        l_max: usize,
    ) -> (ZernikeBasis, crate::PointCloud, MomentTensor) {
        let b = ZernikeBasis::new(n_max, l_max).unwrap();
        let cloud = fixtures::bunny(300, 1).unwrap();
        let c = project_moments(&b, &cloud.normalize_self().unwrap()).unwrap();
        (b, cloud, c)
    }

    #[test]
    fn index_sets_match_brute_force() {
        for l_max in 0..=6 {
            let fast: BTreeSet<_> = bispectrum_index_set(l_max).into_iter().collect();
            assert_eq!(fast.len(), bispectrum_index_set(l_max).len());
            assert_eq!(fast, brute_force_bispectrum_set(l_max));
            let fast: BTreeSet<_> = trispectrum_index_set(l_max)
                .into_iter()
                .flat_map(|e| {
                    e.l_prime
                        .iter()
                        .map(move |&lp| (e.l, lp))
                        .collect::<Vec<_>>()
                })
                .collect();
            assert_eq!(fast, brute_force_trispectrum_set(l_max));
        }
    }

    #[test]
    fn zero_moments_give_zero_invariants() {
        let c = MomentTensor::zeros(6, 4);
        for o in [
            SpectrumOrder::Power,
            SpectrumOrder::Bispectrum,
            SpectrumOrder::Trispectrum,
        ] {
            assert!(spectral_invariants(&c, o).values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn invariant_under_rotation_and_reflection() {
        let (b, cloud, c) = bunny_moments(8, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mirrored =
            project_moments(&b, &cloud.mirror(Axis::X).normalize_self().unwrap()).unwrap();
        for o in [
            SpectrumOrder::Power,
            SpectrumOrder::Bispectrum,
            SpectrumOrder::Trispectrum,
        ] {
            let base = spectral_invariants(&c, o);
            assert!(base.imaginary_residue <= IMAGINARY_TOLERANCE);
            assert!(base.values.iter().any(|v| v.abs() > 1e-3));
            for _ in 0..5 {
                let q = UnitQuaternion::random(&mut rng);
                let r =
                    spectral_invariants(&rotate_spectrum(&c, &wigner_d_quat(6, &q)).unwrap(), o);
                let err = base
                    .values
                    .iter()
                    .zip(&r.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-8, "{o:?}: {err}");
            }
            let m = spectral_invariants(&mirrored, o);
            let err = base
                .values
                .iter()
                .zip(&m.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-8, "{o:?} mirror: {err}");
        }
    }

    #[test]
    fn cumulative_is_concatenation() {
        let (_, _, c) = bunny_moments(6, 4);
        let p = spectral_invariants(&c, SpectrumOrder::Power).values;
        let bi = spectral_invariants(&c, SpectrumOrder::Bispectrum).values;
        let tri = spectral_invariants(&c, SpectrumOrder::Trispectrum).values;
        let cum = cumulative_invariants(&c, SpectrumOrder::Trispectrum);
        assert_eq!(cum, [p, bi, tri].concat());
    }

    #[test]
    fn power_spectrum_by_hand() {
        let mut c = MomentTensor::zeros(2, 2);
        c.set(1, 1, -1, 3.0).unwrap();
        c.set(1, 1, 1, 4.0).unwrap();
        c.set(0, 0, 0, 2.0).unwrap();
        let p = spectral_invariants(&c, SpectrumOrder::Power);
        assert_eq!(p.values[..3], [4.0, 25.0 / 3.0, 0.0]);
    }
}
