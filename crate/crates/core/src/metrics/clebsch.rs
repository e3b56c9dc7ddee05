//! Clebsch–Gordan coefficients for integer angular momenta.

use std::sync::OnceLock;

fn factorials() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut f = vec![1.0; 171];
        for i in 1..171 {
            f[i] = f[i - 1] * i as f64;
        }
        f
    })
}

fn fact(n: i64) -> f64 {
    factorials()[n as usize]
}

/// `⟨ℓ₁ m₁; ℓ₂ m₂ | ℓ₃ m₃⟩` by Racah's closed-form sum; zero outside the
/// selection rules.
pub fn clebsch_gordan(l1: i64, m1: i64, l2: i64, m2: i64, l3: i64, m3: i64) -> f64 {
    if l1 < 0 || l2 < 0 || l3 < 0 || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return 0.0;
    }
    if m1 + m2 != m3 || l3 < (l1 - l2).abs() || l3 > l1 + l2 {
        return 0.0;
    }
    let pre = ((2 * l3 + 1) as f64 * fact(l3 + l1 - l2) * fact(l3 - l1 + l2) * fact(l1 + l2 - l3)
        / fact(l1 + l2 + l3 + 1))
    .sqrt();
    let norm = (fact(l3 + m3)
        * fact(l3 - m3)
        * fact(l1 - m1)
        * fact(l1 + m1)
        * fact(l2 - m2)
        * fact(l2 + m2))
    .sqrt();
    let k_min = 0.max(l2 - l3 - m1).max(l1 - l3 + m2);
    let k_max = (l1 + l2 - l3).min(l1 - m1).min(l2 + m2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let den = fact(k)
            * fact(l1 + l2 - l3 - k)
            * fact(l1 - m1 - k)
            * fact(l2 + m2 - k)
            * fact(l3 - l2 + m1 + k)
            * fact(l3 - l1 - m2 + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den;
    }
    pre * norm * sum
}

/// Dense cache of `⟨ℓ₁ m₁; ℓ₂ m₂ | ℓ₃ m₁+m₂⟩` for `ℓ₁, ℓ₂ ≤ l_max` and
/// coupled degree `ℓ₃ ≤ 2 l_max`.
#[derive(Clone, Debug)]
pub struct ClebschTable {
    l_max: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClebschTable {
    pub fn new(l_max: usize) -> Self {
        let n = l_max + 1;
        let n3 = 2 * l_max + 1;
        let width = 2 * l_max + 1;
        let mut data = vec![0.0; n * n * n3 * width * width];
        let mut t = Self {
            l_max,
            width,
            data: Vec::new(),
        };
        for l1 in 0..n {
            for l2 in 0..n {
                for l3 in 0..n3 {
                    for m1 in -(l1 as i64)..=l1 as i64 {
                        for m2 in -(l2 as i64)..=l2 as i64 {
                            let v =
                                clebsch_gordan(l1 as i64, m1, l2 as i64, m2, l3 as i64, m1 + m2);
                            data[t.index(l1, l2, l3, m1, m2)] = v;
                        }
                    }
                }
            }
        }
        t.data = data;
        t
    }

    fn index(&self, l1: usize, l2: usize, l3: usize, m1: i64, m2: i64) -> usize {
        let n = self.l_max + 1;
        let n3 = 2 * self.l_max + 1;
        ((((l1 * n + l2) * n3 + l3) * self.width) + (m1 + l1 as i64) as usize) * self.width
            + (m2 + l2 as i64) as usize
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// `⟨ℓ₁ m₁; ℓ₂ m₂ | ℓ₃ m₁+m₂⟩`.
    pub fn get(&self, l1: usize, m1: i64, l2: usize, m2: i64, l3: usize) -> f64 {
        self.data[self.index(l1, l2, l3, m1, m2)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(clebsch_gordan(0, 0, 0, 0, 0, 0), 1.0);
        assert!((clebsch_gordan(1, 1, 1, -1, 0, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((clebsch_gordan(1, 0, 1, 0, 0, 0) + 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((clebsch_gordan(1, 1, 1, 0, 2, 1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((clebsch_gordan(1, 0, 1, 0, 2, 0) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(clebsch_gordan(1, 1, 1, 1, 1, 1), 0.0);
        assert_eq!(clebsch_gordan(1, 0, 1, 0, 3, 0), 0.0);
    }

    #[test]
    fn orthogonality_sums() {
        for l1 in 0..=6i64 {
            for l2 in 0..=6i64 {
                for l3 in (l1 - l2).abs()..=(l1 + l2).min(6) {
                    for m3 in -l3..=l3 {
                        let mut s = 0.0;
                        for m1 in -l1..=l1 {
                            s += clebsch_gordan(l1, m1, l2, m3 - m1, l3, m3).powi(2);
                        }
                        assert!((s - 1.0).abs() < 1e-10);
                    }
                    // Summing over all m₁, m₂ for fixed m₃ gives 1; over m₃
                    // too, 2ℓ₃+1.
                    let mut total = 0.0;
                    for m1 in -l1..=l1 {
                        for m2 in -l2..=l2 {
                            total += clebsch_gordan(l1, m1, l2, m2, l3, m1 + m2).powi(2);
                        }
                    }
                    assert!((total - (2 * l3 + 1) as f64).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn table_matches_direct() {
        let t = ClebschTable::new(4);
        assert!((t.get(2, 1, 3, -2, 4) - clebsch_gordan(2, 1, 3, -2, 4, -1)).abs() == 0.0);
        assert_eq!(t.get(1, 1, 1, 1, 0), 0.0);
        assert!((t.get(4, 3, 4, 2, 8) - clebsch_gordan(4, 3, 4, 2, 8, 5)).abs() == 0.0);
    }
}
