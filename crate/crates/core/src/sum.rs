//! Exact floating-point accumulation.
//!
//! [`ExactSum`] keeps the running total as a wide fixed-point integer, so
//! adding and removing terms in any order yields the same correctly rounded
//! result. Aggregates and incremental sweeps rely on this to agree bit for
//! bit with a from-scratch recomputation.

const LIMB_BITS: u32 = 32;
const LIMB_MASK: i64 = (1 << LIMB_BITS) - 1;
/// Weight of limb 0 is 2^-BIAS; covers the smallest subnormal (2^-1074).
const BIAS: i32 = 1088;
/// Enough limbs for the largest finite double plus carry headroom.
const LIMBS: usize = 72;
/// Each add puts < 2^32 into a limb; normalize well before i64 overflow.
const NORMALIZE_EVERY: u32 = 1 << 29;

#[derive(Clone, Debug)]
pub struct ExactSum {
    limbs: Vec<i64>,
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum {
            limbs: vec![0; LIMBS],
            pending: 0,
        }
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a finite value; non-finite input panics.
    pub fn add(&mut self, value: f64) {
        assert!(value.is_finite(), "ExactSum only accepts finite values, got {value}");
        if value == 0.0 {
            return;
        }
        let bits = value.to_bits();
        let negative = bits >> 63 == 1;
        let exp_field = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1 << 52) - 1);
        let (mantissa, exp) = if exp_field == 0 {
            (frac, -1074)
        } else {
            (frac | 1 << 52, exp_field - 1075)
        };
        let pos = (exp + BIAS) as u32;
        let (limb, shift) = ((pos / LIMB_BITS) as usize, pos % LIMB_BITS);
        let wide = (mantissa as u128) << shift;
        for k in 0..3 {
            let digit = ((wide >> (k * LIMB_BITS)) as i64) & LIMB_MASK;
            if digit != 0 {
                if negative {
                    self.limbs[limb + k as usize] -= digit;
                } else {
                    self.limbs[limb + k as usize] += digit;
                }
            }
        }
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            self.normalize();
        }
    }

    pub fn sub(&mut self, value: f64) {
        self.add(-value);
    }

    /// The exact total rounded to the nearest double (ties to even).
    pub fn value(&self) -> f64 {
        let mut limbs = self.limbs.clone();
        carry(&mut limbs);
        let negative = limbs[LIMBS - 1] < 0;
        if negative {
            for l in limbs.iter_mut() {
                *l = -*l;
            }
            carry(&mut limbs);
        }
        let Some(top) = limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let low = top.saturating_sub(3);
        let mut window: u128 = 0;
        for i in (low..=top).rev() {
            window = window << LIMB_BITS | limbs[i] as u128;
        }
        if limbs[..low].iter().any(|&l| l != 0) {
            window |= 1;
        }
        let scale = low as i32 * LIMB_BITS as i32 - BIAS;
        let magnitude = scale_by_pow2(window as f64, scale);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }

    fn normalize(&mut self) {
        carry(&mut self.limbs);
        self.pending = 0;
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        s.extend(iter);
        s
    }
}

/// Propagates carries so limbs below the top lie in [0, 2^32).
fn carry(limbs: &mut [i64]) {
    let n = limbs.len();
    for i in 0..n - 1 {
        let c = limbs[i] >> LIMB_BITS;
        limbs[i] -= c << LIMB_BITS;
        limbs[i + 1] += c;
    }
}

fn scale_by_pow2(mut x: f64, mut e: i32) -> f64 {
    while e > 1000 {
        x *= f64::from_bits(((1000 + 1023) as u64) << 52);
        e -= 1000;
    }
    while e < -1000 {
        x *= f64::from_bits(((-1000 + 1023) as u64) << 52);
        e += 1000;
    }
    x * f64::from_bits(((e + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancellation_is_exact() {
        let s: ExactSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = [0.1, 0.2, -0.3].into_iter().collect();
        // The three doubles differ from their decimal names; the exact total is 2^-55.
        assert_eq!(s.value(), 2f64.powi(-55));
    }

    #[test]
    fn small_integers_and_halves() {
        let s: ExactSum = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(s.value(), 249750.0);
        assert_eq!(ExactSum::new().value(), 0.0);
    }

    #[test]
    fn negative_totals_and_subnormals() {
        let s: ExactSum = [-3.25, 1.0].into_iter().collect();
        assert_eq!(s.value(), -2.25);
        let tiny = f64::from_bits(1);
        let s: ExactSum = [tiny, tiny, tiny].into_iter().collect();
        assert_eq!(s.value(), f64::from_bits(3));
        let s: ExactSum = [f64::MAX, -f64::MAX, 2.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn rounds_ties_to_even() {
        // 1 + 2^-53 sits exactly between 1 and the next double.
        let s: ExactSum = [1.0, 2f64.powi(-53)].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = [1.0, 2f64.powi(-53), 2f64.powi(-200)].into_iter().collect();
        assert_eq!(s.value(), 1.0 + f64::EPSILON);
    }

    proptest! {
        #[test]
        fn order_independent(mut values in proptest::collection::vec(0.0f64..1.0, 0..200), seed: u64) {
            let forward: ExactSum = values.iter().copied().collect();
            let n = values.len();
            if n > 1 {
                values.rotate_left((seed as usize) % n);
                values.swap(0, n - 1);
            }
            let shuffled: ExactSum = values.iter().copied().collect();
            prop_assert_eq!(forward.value().to_bits(), shuffled.value().to_bits());
        }

        #[test]
        fn add_then_remove_is_identity(base in proptest::collection::vec(0.0f64..1.0, 1..50), extra in proptest::collection::vec(-1e3f64..1e3, 0..50)) {
            let reference: ExactSum = base.iter().copied().collect();
            let mut s = reference.clone();
            for &e in &extra { s.add(e); }
            for &e in &extra { s.sub(e); }
            prop_assert_eq!(s.value().to_bits(), reference.value().to_bits());
        }

        #[test]
        fn close_to_naive(values in proptest::collection::vec(0.0f64..1.0, 1..100)) {
            let naive: f64 = values.iter().sum();
            let exact: ExactSum = values.iter().copied().collect();
            prop_assert!((naive - exact.value()).abs() <= 1e-12 * values.len() as f64);
        }
    }
}
