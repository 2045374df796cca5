//! Arithmetic in the prime field `Z_p` with `p = 2^127 - 1`.
//!
//! Every share, opened mask and fixed-point encoding in the crate is a
//! [`RingElement`]. The Mersenne modulus gives branch-light reduction and
//! leaves enough headroom above the fixed-point products that share-wise
//! truncation almost never wraps.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// The field modulus `2^127 - 1`.
pub const MODULUS: u128 = (1u128 << 127) - 1;

/// Number of bytes used to serialize one element.
pub const ELEMENT_BYTES: usize = 16;

const HALF: u128 = MODULUS / 2;

/// An element of `Z_p`, always kept in canonical form `0 <= value < p`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct RingElement(u128);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);
    pub const ONE: RingElement = RingElement(1);

    /// Reduces an arbitrary `u128` into the field.
    #[inline]
    pub fn new(value: u128) -> Self {
        RingElement(reduce_u128(value))
    }

    #[inline]
    pub fn value(self) -> u128 {
        self.0
    }

    /// Embeds a signed integer; negatives map to the upper half `p - |x|`.
    #[inline]
    pub fn from_i128(x: i128) -> Self {
        if x >= 0 {
            RingElement::new(x as u128)
        } else {
            -RingElement::new(x.unsigned_abs())
        }
    }

    #[inline]
    pub fn from_i64(x: i64) -> Self {
        RingElement::from_i128(x as i128)
    }

    /// Signed representative in `(-p/2, p/2]`.
    #[inline]
    pub fn to_i128(self) -> i128 {
        if self.0 > HALF {
            -((MODULUS - self.0) as i128)
        } else {
            self.0 as i128
        }
    }

    #[inline]
    pub fn is_negative(self) -> bool {
        self.0 > HALF
    }

    /// `2^k mod p` for any integer `k`; negative exponents give inverses.
    #[inline]
    pub fn pow2(k: i64) -> Self {
        // 2^127 = 1 (mod p), so exponents live in Z_127.
        let e = k.rem_euclid(127) as u32;
        RingElement(1u128 << e)
    }

    pub fn pow(self, mut exp: u128) -> Self {
        let mut base = self;
        let mut acc = RingElement::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        if self.0 == 0 {
            None
        } else {
            Some(self.pow(MODULUS - 2))
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Rejection sampling over 127-bit draws; the only rejected value is p itself.
        loop {
            let v = rng.gen::<u128>() >> 1;
            if v < MODULUS {
                return RingElement(v);
            }
        }
    }

    pub fn to_le_bytes(self) -> [u8; ELEMENT_BYTES] {
        self.0.to_le_bytes()
    }

    /// Parses 16 little-endian bytes, rejecting non-canonical values.
    pub fn from_le_bytes(bytes: [u8; ELEMENT_BYTES]) -> Option<Self> {
        let v = u128::from_le_bytes(bytes);
        (v < MODULUS).then_some(RingElement(v))
    }
}

#[inline]
fn reduce_u128(v: u128) -> u128 {
    let r = (v & MODULUS) + (v >> 127);
    if r >= MODULUS {
        r - MODULUS
    } else {
        r
    }
}

#[inline]
fn mul_mod(a: u128, b: u128) -> u128 {
    const LO: u128 = u64::MAX as u128;
    let (a0, a1) = (a & LO, a >> 64);
    let (b0, b1) = (b & LO, b >> 64);
    let lo_lo = a0 * b0;
    // a1, b1 < 2^63 so the cross sum fits in 128 bits.
    let mid = a1 * b0 + a0 * b1;
    let hi_hi = a1 * b1;
    let (lo, carry) = lo_lo.overflowing_add(mid << 64);
    let hi = hi_hi + (mid >> 64) + carry as u128;
    // value = hi * 2^128 + lo, and 2^128 = 2 (mod p).
    let folded = (lo & MODULUS) + (lo >> 127) + (hi << 1);
    reduce_u128(folded)
}

impl Add for RingElement {
    type Output = RingElement;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        RingElement(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Sub for RingElement {
    type Output = RingElement;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            RingElement(self.0 - rhs.0)
        } else {
            RingElement(self.0 + MODULUS - rhs.0)
        }
    }
}

impl Neg for RingElement {
    type Output = RingElement;
    #[inline]
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            RingElement(MODULUS - self.0)
        }
    }
}

impl Mul for RingElement {
    type Output = RingElement;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        RingElement(mul_mod(self.0, rhs.0))
    }
}

impl AddAssign for RingElement {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for RingElement {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for RingElement {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Sum for RingElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(RingElement::ZERO, |a, b| a + b)
    }
}

impl From<u64> for RingElement {
    fn from(v: u64) -> Self {
        RingElement(v as u128)
    }
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R({})", self.to_i128())
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Serializes a slice of elements as consecutive little-endian words.
pub fn encode_elements(values: &[RingElement]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * ELEMENT_BYTES);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_elements`]; `None` on ragged or non-canonical input.
pub fn decode_elements(bytes: &[u8]) -> Option<Vec<RingElement>> {
    if !bytes.len().is_multiple_of(ELEMENT_BYTES) {
        return None;
    }
    bytes
        .chunks_exact(ELEMENT_BYTES)
        .map(|c| RingElement::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big_mul(a: u128, b: u128) -> u128 {
        // Schoolbook reference on 32-bit limbs.
        let al = [a as u32, (a >> 32) as u32, (a >> 64) as u32, (a >> 96) as u32];
        let bl = [b as u32, (b >> 32) as u32, (b >> 64) as u32, (b >> 96) as u32];
        let mut limbs = [0u64; 9];
        for i in 0..4 {
            let mut carry = 0u64;
            for j in 0..4 {
                let t = limbs[i + j] + al[i] as u64 * bl[j] as u64 + carry;
                limbs[i + j] = t & 0xffff_ffff;
                carry = t >> 32;
            }
            limbs[i + 4] += carry;
        }
        // reduce: value mod (2^127 - 1) by repeated folding of 127-bit chunks
        let mut rem = 0u128;
        for k in (0..8).rev() {
            // rem = rem * 2^32 + limb (mod p)
            for _ in 0..32 {
                rem = reduce_u128(rem << 1);
            }
            rem = reduce_u128(rem + limbs[k] as u128);
        }
        rem
    }

    #[test]
    fn negative_embedding() {
        let x = RingElement::from_i128(-5);
        assert_eq!(x.value(), MODULUS - 5);
        assert_eq!(x.to_i128(), -5);
        assert_eq!(x + RingElement::from(5u64), RingElement::ZERO);
    }

    #[test]
    fn pow2_negative_is_inverse() {
        for k in [-130i64, -40, -1, 0, 1, 63, 126, 200] {
            assert_eq!(RingElement::pow2(k) * RingElement::pow2(-k), RingElement::ONE);
        }
        assert_eq!(RingElement::pow2(10).value(), 1024);
    }

    #[test]
    fn inverse_of_zero() {
        assert!(RingElement::ZERO.inverse().is_none());
        let a = RingElement::new(123456789);
        assert_eq!(a * a.inverse().unwrap(), RingElement::ONE);
    }

    proptest! {
        #[test]
        fn mul_matches_reference(a in 0..MODULUS, b in 0..MODULUS) {
            prop_assert_eq!((RingElement(a) * RingElement(b)).value(), big_mul(a, b));
        }

        #[test]
        fn field_laws(a in 0..MODULUS, b in 0..MODULUS, c in 0..MODULUS) {
            let (a, b, c) = (RingElement(a), RingElement(b), RingElement(c));
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!(a * b, b * a);
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
            prop_assert_eq!(a + (-a), RingElement::ZERO);
            prop_assert!((a - b).value() < MODULUS);
        }
    }
}
