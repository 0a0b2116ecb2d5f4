//! Exact, order-independent summation of `f64` values.
//!
//! Every finite double is an integer multiple of `2^-1074`. An
//! [`ExactSum`] keeps that integer in radix-`2^32` limbs, so adding terms is
//! exact and associative. Rounding happens once, in [`ExactSum::round`],
//! to the nearest double (ties to even).
//!
//! Limbs travel through the message fabric as `f64` payloads. After
//! [`ExactSum::normalize`] every limb is an integer below `2^32` in
//! magnitude, so an elementwise floating-point sum of up to `2^20`
//! payloads is still exact. That is what makes a distributed reduction of
//! partial sums bit-identical to the sequential sum on every process grid.

/// Number of 32-bit limbs. Covers `2^-1074 .. 2^1102`, enough for any sum of
/// fewer than `2^50` finite doubles.
pub const LIMBS: usize = 68;

const LIMB_BITS: u32 = 32;
const LIMB_MASK: u64 = (1 << LIMB_BITS) - 1;
// Each add moves less than 2^32 into a limb; renormalize well before i64 overflow.
const ADDS_BEFORE_NORMALIZE: u32 = 1 << 28;

#[derive(Clone, PartialEq, Eq)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({:e})", self.round())
    }
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum {
            limbs: [0; LIMBS],
            pending: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        debug_assert!(x.is_finite(), "exact summation of non-finite value {x}");
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as usize;
        let frac = bits & ((1u64 << 52) - 1);
        // x = mant * 2^(shift - 1074)
        let (mant, shift) = if biased == 0 {
            (frac, 0)
        } else {
            (frac | (1u64 << 52), biased - 1)
        };
        let limb = shift / LIMB_BITS as usize;
        let wide = (mant as u128) << (shift % LIMB_BITS as usize);
        let negative = bits >> 63 == 1;
        for t in 0..3 {
            let part = ((wide >> (LIMB_BITS as usize * t)) as u64 & LIMB_MASK) as i64;
            if negative {
                self.limbs[limb + t] -= part;
            } else {
                self.limbs[limb + t] += part;
            }
        }
        self.pending += 1;
        if self.pending >= ADDS_BEFORE_NORMALIZE {
            self.normalize();
        }
    }

    /// Accumulates `a * b`, with the product rounded once as in plain `f64`.
    pub fn add_product(&mut self, a: f64, b: f64) {
        self.add(a * b);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        let mut o = other.clone();
        o.normalize();
        self.normalize();
        for (l, r) in self.limbs.iter_mut().zip(o.limbs.iter()) {
            *l += r;
        }
        self.pending = 1;
    }

    /// Carry-propagates so every limb but the top one lies in `[0, 2^32)`;
    /// the top limb carries the sign.
    pub fn normalize(&mut self) {
        for i in 0..LIMBS - 1 {
            let carry = self.limbs[i] >> LIMB_BITS;
            self.limbs[i] -= carry << LIMB_BITS;
            self.limbs[i + 1] += carry;
        }
        self.pending = 0;
    }

    /// Appends the normalized limbs to `out` as exactly-representable doubles.
    pub fn write_payload(&self, out: &mut Vec<f64>) {
        let mut n = self.clone();
        n.normalize();
        out.extend(n.limbs.iter().map(|&l| l as f64));
    }

    /// Rebuilds a sum from a (possibly elementwise-summed) payload slice.
    pub fn from_payload(words: &[f64]) -> Self {
        assert_eq!(words.len(), LIMBS, "exact-sum payload has wrong length");
        let mut s = ExactSum::new();
        for (l, &w) in s.limbs.iter_mut().zip(words) {
            debug_assert!(w.fract() == 0.0 && w.abs() < 9.0e15, "limb {w} is not exact");
            *l = w as i64;
        }
        s.pending = 1;
        s
    }

    pub fn is_zero(&self) -> bool {
        let mut n = self.clone();
        n.normalize();
        n.limbs.iter().all(|&l| l == 0)
    }

    /// The exact sum rounded to the nearest double, ties to even. An exact
    /// zero comes back as `+0.0`.
    pub fn round(&self) -> f64 {
        let mut mag = self.clone();
        mag.normalize();
        let negative = mag.limbs[LIMBS - 1] < 0;
        if negative {
            for l in mag.limbs.iter_mut() {
                *l = -*l;
            }
            mag.normalize();
        }
        let limbs: Vec<u64> = mag.limbs.iter().map(|&l| l as u64).collect();
        let Some(top) = limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let bit_len = 64 - limbs[top].leading_zeros() as usize + LIMB_BITS as usize * top;
        let value = if bit_len <= 53 {
            let n = limbs[0] | (limbs.get(1).copied().unwrap_or(0) << LIMB_BITS);
            n as f64 * pow2(-1074)
        } else {
            let shift = bit_len - 53;
            // 96-bit window of the three most significant limbs.
            let limb_at = |i: isize| if i < 0 { 0u64 } else { limbs[i as usize] };
            let top = top as isize;
            let window = ((limb_at(top) as u128) << 64)
                | ((limb_at(top - 1) as u128) << 32)
                | limb_at(top - 2) as u128;
            let window_base = LIMB_BITS as isize * (top - 2);
            let rel = (shift as isize - window_base) as u32;
            let mut mant = (window >> rel) as u64;
            let half = (window >> (rel - 1)) & 1 == 1;
            let below_window = (top - 2).max(0) as usize;
            let sticky = (window & ((1u128 << (rel - 1)) - 1)) != 0
                || limbs[..below_window].iter().any(|&l| l != 0);
            if half && (sticky || mant & 1 == 1) {
                mant += 1;
            }
            mant as f64 * pow2(shift as i32 - 1074)
        };
        if negative {
            -value
        } else {
            value
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Exactly rounded sum of `values`.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<ExactSum>().round()
}

/// Exactly rounded dot product of the already-rounded products `a[i] * b[i]`.
pub fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).collect::<ExactSum>().round()
}

/// `2^e` built from its bit pattern, exact over the whole double range.
fn pow2(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        debug_assert!(e >= -1074);
        f64::from_bits(1u64 << (e + 1074))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits_eq(a: f64, b: f64) -> bool {
        a.to_bits() == b.to_bits()
    }

    #[test]
    fn single_values_round_trip() {
        for &x in &[
            1.0,
            -1.0,
            0.1,
            -3.75e-300,
            f64::MIN_POSITIVE,
            5e-324,
            -5e-324,
            f64::MAX,
            -f64::MAX,
            1.0 + f64::EPSILON,
            123456789.123,
        ] {
            assert!(bits_eq(exact_sum([x]), x), "{x:e}");
        }
        assert!(bits_eq(exact_sum([-0.0]), 0.0));
        assert!(bits_eq(exact_sum([]), 0.0));
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-53 is exactly halfway between 1 and 1 + 2^-52.
        assert!(bits_eq(exact_sum([1.0, pow2(-53)]), 1.0));
        let up = 1.0 + f64::EPSILON;
        assert!(bits_eq(exact_sum([up, pow2(-53)]), up + f64::EPSILON));
        // Sticky bit far below the window breaks the tie upward.
        assert!(bits_eq(exact_sum([1.0, pow2(-53), pow2(-1000)]), up));
    }

    #[test]
    fn cancellation_is_exact() {
        let big = 1e300;
        assert!(bits_eq(exact_sum([big, 1.0, -big]), 1.0));
        for &(a, b) in &[(0.1, 0.2), (1e-300, 3.0), (-7.5, 1e16)] {
            assert!(bits_eq(exact_sum([a, b, -a]), b));
        }
    }

    #[test]
    fn payload_sum_is_exact() {
        let xs = [1.5, -2.25e10, 3.0e-7, 7.0, -1e-300];
        let mut parts = vec![ExactSum::new(), ExactSum::new(), ExactSum::new()];
        for (i, &x) in xs.iter().enumerate() {
            parts[i % 3].add(x);
        }
        let mut folded = vec![0.0; LIMBS];
        for p in &parts {
            let mut buf = Vec::new();
            p.write_payload(&mut buf);
            for (f, b) in folded.iter_mut().zip(buf) {
                *f += b;
            }
        }
        assert!(bits_eq(
            ExactSum::from_payload(&folded).round(),
            exact_sum(xs)
        ));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            (-1e6f64..1e6f64),
            (-1.0f64..1.0f64).prop_map(|x| x * 1e-310),
        ]
    }

    proptest! {
        // Two-term oracle: IEEE addition is the correctly rounded exact sum.
        #[test]
        fn two_terms_match_ieee(a in finite(), b in finite()) {
            let s = a + b;
            prop_assume!(s.is_finite());
            let expect = if s == 0.0 { 0.0 } else { s };
            prop_assert!(bits_eq(exact_sum([a, b]), expect), "{a:e} + {b:e}");
        }

        #[test]
        fn order_and_partition_independent(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..40),
            split in 0usize..40,
        ) {
            let forward = exact_sum(xs.iter().copied());
            let backward = exact_sum(xs.iter().rev().copied());
            prop_assert!(bits_eq(forward, backward));
            let cut = split.min(xs.len());
            let mut left: ExactSum = xs[..cut].iter().copied().collect();
            let right: ExactSum = xs[cut..].iter().copied().collect();
            left.merge(&right);
            prop_assert!(bits_eq(left.round(), forward));
        }

        #[test]
        fn integers_sum_exactly(xs in proptest::collection::vec(-1_000_000i64..1_000_000, 0..50)) {
            let expect: i64 = xs.iter().sum();
            prop_assert_eq!(exact_sum(xs.iter().map(|&x| x as f64)), expect as f64);
        }
    }
}
