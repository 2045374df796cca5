//! Fixed-point encoding of reals into the field and truncation after products.
//!
//! A real `x` is stored as `round(x * 2^f)` with negatives in the upper half of
//! `[0, p)`. A product of two encodings carries scale `2^(2f)` and is brought
//! back to `2^f` by [`FixedPointCodec::trunc`] (public values) or
//! [`trunc_share`] (one party's additive share, no interaction).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::RingElement;
use crate::sharing::PartyId;

/// Default number of fractional bits.
pub const DEFAULT_FRAC_BITS: u32 = 20;
/// Default bound on plaintext magnitude, `|x| < 2^l`.
pub const DEFAULT_INT_BITS: u32 = 20;
/// Default scale for plaintext weights multiplied into shares.
pub const DEFAULT_WEIGHT_FRAC_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub frac_bits: u32,
    pub int_bits: u32,
    /// Fractional bits used for public weights (conv kernels, BN factors).
    pub weight_frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            frac_bits: DEFAULT_FRAC_BITS,
            int_bits: DEFAULT_INT_BITS,
            weight_frac_bits: DEFAULT_WEIGHT_FRAC_BITS,
        }
    }
}

impl FixedPointCodec {
    /// Validates `2^(2f + l + 1) < p` against the built-in modulus.
    pub fn new(frac_bits: u32, int_bits: u32) -> Result<Self> {
        let codec = FixedPointCodec {
            frac_bits,
            int_bits,
            ..FixedPointCodec::default()
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn validate(&self) -> Result<()> {
        let product_bits = 2 * self.frac_bits + self.int_bits + 1;
        if product_bits >= 127 {
            return Err(Error::Config(format!(
                "2^(2f+l+1) = 2^{product_bits} does not fit below p = 2^127 - 1"
            )));
        }
        if self.weight_frac_bits + self.frac_bits + self.int_bits + 16 >= 127 {
            return Err(Error::Config(format!(
                "weight scale 2^{} leaves no headroom for weighted sums",
                self.weight_frac_bits
            )));
        }
        if self.frac_bits == 0 {
            return Err(Error::Config("at least one fractional bit is required".into()));
        }
        Ok(())
    }

    /// `2^f` as a float.
    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    /// One unit in the last place, `2^-f`.
    pub fn ulp(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Largest encodable magnitude (exclusive), `2^l`.
    pub fn bound(&self) -> f64 {
        (self.int_bits as f64).exp2()
    }

    pub fn encode(&self, x: f64) -> Result<RingElement> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        if x.abs() >= self.bound() {
            return Err(Error::Range {
                value: x,
                int_bits: self.int_bits,
            });
        }
        Ok(RingElement::from_i128((x * self.scale()).round() as i128))
    }

    /// Encodes with saturation at `±(2^l - ulp)` instead of failing.
    pub fn encode_saturating(&self, x: f64) -> RingElement {
        let limit = self.bound() - self.ulp();
        let x = if x.is_nan() { 0.0 } else { x.clamp(-limit, limit) };
        RingElement::from_i128((x * self.scale()).round() as i128)
    }

    pub fn decode(&self, e: RingElement) -> f64 {
        e.to_i128() as f64 / self.scale()
    }

    pub fn encode_slice(&self, xs: &[f64]) -> Result<Vec<RingElement>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_slice(&self, es: &[RingElement]) -> Vec<f64> {
        es.iter().map(|&e| self.decode(e)).collect()
    }

    /// Encodes a public weight at the weight scale `2^fw`.
    pub fn encode_weight(&self, w: f64) -> Result<RingElement> {
        if !w.is_finite() {
            return Err(Error::NonFinite(w));
        }
        let scaled = w * (self.weight_frac_bits as f64).exp2();
        if scaled.abs() >= 2f64.powi(100) {
            return Err(Error::Range {
                value: w,
                int_bits: 100 - self.weight_frac_bits,
            });
        }
        Ok(RingElement::from_i128(scaled.round() as i128))
    }

    pub fn decode_weight(&self, e: RingElement) -> f64 {
        e.to_i128() as f64 / (self.weight_frac_bits as f64).exp2()
    }

    /// Truncates a public value at scale `2^(2f)` to scale `2^f` (floor).
    pub fn trunc(&self, e: RingElement) -> RingElement {
        trunc_public(e, self.frac_bits)
    }
}

/// Signed floor division of a public value by `2^shift`.
pub fn trunc_public(e: RingElement, shift: u32) -> RingElement {
    RingElement::from_i128(e.to_i128() >> shift)
}

/// Share-wise probabilistic truncation by `2^shift`.
///
/// Party 1 floors its share as an unsigned integer; party 2 floors the
/// negation of its share and negates back. For a secret `z` with
/// `|z| < 2^k` the reconstruction equals `floor(z / 2^shift)` or that plus
/// one, except with probability about `2^k / p`.
#[inline]
pub fn trunc_share(share: RingElement, party: PartyId, shift: u32) -> RingElement {
    match party {
        PartyId::P1 => RingElement::new(share.value() >> shift),
        PartyId::P2 => -RingElement::new((-share).value() >> shift),
    }
}

/// Distance in units of the last place between two encodings.
pub fn ulp_distance(a: RingElement, b: RingElement) -> u128 {
    (a - b).to_i128().unsigned_abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::MODULUS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::default()
    }

    #[test]
    fn encode_examples() {
        let c = codec();
        assert_eq!(c.encode(0.0).unwrap(), RingElement::ZERO);
        assert_eq!(c.encode(1.0).unwrap().value(), 1_048_576);
        // p - round(1.5 * 2^20)
        assert_eq!(c.encode(-1.5).unwrap().value(), MODULUS - 1_572_864);
    }

    #[test]
    fn encode_rejects_overflow_and_nan() {
        let c = codec();
        assert!(matches!(c.encode(2f64.powi(20)), Err(Error::Range { .. })));
        assert!(matches!(c.encode(-2f64.powi(21)), Err(Error::Range { .. })));
        assert!(matches!(c.encode(f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn decode_examples() {
        let c = codec();
        assert_eq!(c.decode(RingElement::ZERO), 0.0);
        assert_eq!(c.decode(c.encode(3.25).unwrap()), 3.25);
        assert!((c.decode(c.encode(0.1).unwrap()) - 0.1).abs() <= c.ulp());
    }

    #[test]
    fn codec_rejects_oversized_parameters() {
        assert!(FixedPointCodec::new(60, 20).is_err());
        assert!(FixedPointCodec::new(20, 20).is_ok());
    }

    #[test]
    fn round_trip_uniform_sample() {
        let c = codec();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bound = c.bound();
        for _ in 0..100_000 {
            let x = rng.gen_range(-bound + 1e-3..bound - 1e-3);
            let y = c.decode(c.encode(x).unwrap());
            assert!((x - y).abs() <= c.ulp(), "{x} -> {y}");
        }
    }

    #[test]
    fn public_trunc_examples() {
        let c = codec();
        let z = c.encode(2.0).unwrap() * c.encode(3.0).unwrap();
        assert!(ulp_distance(c.trunc(z), c.encode(6.0).unwrap()) <= 1);
        assert_eq!(c.trunc(RingElement::ZERO), RingElement::ZERO);
        let one = c.encode(1.0).unwrap();
        assert!(ulp_distance(c.trunc(one * one), one) <= 1);
    }

    #[test]
    fn share_trunc_against_exact_rationals() {
        // Oracle: exact integer product of the two encodings, floored by 2^f.
        let c = codec();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let half = 2f64.powi((c.int_bits / 2) as i32);
        for _ in 0..10_000 {
            let x = rng.gen_range(-half..half);
            let y = rng.gen_range(-half..half);
            let (ex, ey) = (c.encode(x).unwrap(), c.encode(y).unwrap());
            let exact = ex.to_i128() * ey.to_i128();
            let expected = exact.div_euclid(1i128 << c.frac_bits);
            let z = RingElement::from_i128(exact);
            let s1 = RingElement::random(&mut rng);
            let s2 = z - s1;
            let t = trunc_share(s1, PartyId::P1, c.frac_bits) + trunc_share(s2, PartyId::P2, c.frac_bits);
            let err = (t.to_i128() - expected).abs();
            assert!(err <= 1, "x={x} y={y} err={err}");
        }
    }
}
