//! Secret sharing: two-party additive sharing over the field, a bounded
//! masked-real additive domain, Shamir threshold sharing with degree
//! reduction, and the dealer's correlated randomness.

pub mod dealer;
pub mod shamir;

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::trunc_share;
use crate::ring::RingElement;

pub use dealer::{CorrelatedSource, DealerBundle, DealerCounts, DealerGenerator, DealerStream, TripleShare};
pub use shamir::{mul_grr, shamir_reconstruct, shamir_share, ShamirShare};

/// One of the two compute parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    P1,
    P2,
}

impl PartyId {
    pub fn index(self) -> usize {
        match self {
            PartyId::P1 => 0,
            PartyId::P2 => 1,
        }
    }

    /// 1-based party number as used on the wire and in file headers.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<PartyId> {
        match n {
            1 => Some(PartyId::P1),
            2 => Some(PartyId::P2),
            _ => None,
        }
    }

    pub fn other(self) -> PartyId {
        match self {
            PartyId::P1 => PartyId::P2,
            PartyId::P2 => PartyId::P1,
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Field,
    MaskedReal,
}

/// The payload of a single share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SharePayload {
    Field(RingElement),
    MaskedReal(f64),
}

impl SharePayload {
    pub fn domain(&self) -> Domain {
        match self {
            SharePayload::Field(_) => Domain::Field,
            SharePayload::MaskedReal(_) => Domain::MaskedReal,
        }
    }
}

/// One party's piece of a secret scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub party: PartyId,
    pub payload: SharePayload,
}

impl Share {
    pub fn field(party: PartyId, value: RingElement) -> Share {
        Share {
            party,
            payload: SharePayload::Field(value),
        }
    }

    pub fn masked_real(party: PartyId, value: f64) -> Share {
        Share {
            party,
            payload: SharePayload::MaskedReal(value),
        }
    }

    pub fn domain(&self) -> Domain {
        self.payload.domain()
    }
}

/// Splits `x` into `(x - r, r)`-style additive field shares; party 1's share
/// is uniform in the field.
pub fn split_additive<R: Rng + ?Sized>(x: RingElement, rng: &mut R) -> (Share, Share) {
    let s1 = RingElement::random(rng);
    (Share::field(PartyId::P1, s1), Share::field(PartyId::P2, x - s1))
}

/// Splits a real into masked-real shares `(u - r, r)` with `r` uniform in `[-bound, bound]`.
pub fn split_masked_real<R: Rng + ?Sized>(u: f64, bound: f64, rng: &mut R) -> Result<(Share, Share)> {
    if !u.is_finite() {
        return Err(Error::NonFinite(u));
    }
    let r = rng.gen_range(-bound..=bound);
    Ok((
        Share::masked_real(PartyId::P1, u - r),
        Share::masked_real(PartyId::P2, r),
    ))
}

/// Recombines two shares of the same domain.
pub fn reconstruct_additive(s1: &Share, s2: &Share) -> Result<SharePayload> {
    match (s1.payload, s2.payload) {
        (SharePayload::Field(a), SharePayload::Field(b)) => Ok(SharePayload::Field(a + b)),
        (SharePayload::MaskedReal(a), SharePayload::MaskedReal(b)) => Ok(SharePayload::MaskedReal(a + b)),
        _ => Err(Error::DomainMismatch(
            "cannot reconstruct a field share with a masked-real share",
        )),
    }
}

/// Splits every element of a vector; returns the two parties' share vectors.
pub fn split_vec<R: Rng + ?Sized>(xs: &[RingElement], rng: &mut R) -> (Vec<RingElement>, Vec<RingElement>) {
    xs.iter()
        .map(|&x| {
            let s1 = RingElement::random(rng);
            (s1, x - s1)
        })
        .unzip()
}

pub fn reconstruct_vec(a: &[RingElement], b: &[RingElement]) -> Vec<RingElement> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Element storage for one party's share of a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TensorPayload {
    Field(Vec<RingElement>),
    MaskedReal(Vec<f64>),
}

impl TensorPayload {
    pub fn len(&self) -> usize {
        match self {
            TensorPayload::Field(v) => v.len(),
            TensorPayload::MaskedReal(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One party's share of an n-dimensional array (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedTensor {
    pub party: PartyId,
    pub shape: Vec<usize>,
    pub payload: TensorPayload,
}

impl SharedTensor {
    pub fn from_field(party: PartyId, shape: Vec<usize>, data: Vec<RingElement>) -> Result<Self> {
        Self::new(party, shape, TensorPayload::Field(data))
    }

    pub fn new(party: PartyId, shape: Vec<usize>, payload: TensorPayload) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != payload.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {expected} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(SharedTensor { party, shape, payload })
    }

    pub fn domain(&self) -> Domain {
        match self.payload {
            TensorPayload::Field(_) => Domain::Field,
            TensorPayload::MaskedReal(_) => Domain::MaskedReal,
        }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn field(&self) -> Result<&[RingElement]> {
        match &self.payload {
            TensorPayload::Field(v) => Ok(v),
            TensorPayload::MaskedReal(_) => Err(Error::DomainMismatch("expected a field tensor")),
        }
    }

    pub fn into_field(self) -> Result<Vec<RingElement>> {
        match self.payload {
            TensorPayload::Field(v) => Ok(v),
            TensorPayload::MaskedReal(_) => Err(Error::DomainMismatch("expected a field tensor")),
        }
    }

    /// `[channels, height, width]` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::Shape(format!("expected [C, H, W], got {s:?}"))),
        }
    }
}

/// Tracks which triple identifiers have been consumed.
#[derive(Debug, Default, Clone)]
pub struct TripleLedger {
    used: HashSet<u64>,
}

impl TripleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn consume(&mut self, id: u64) -> Result<()> {
        if self.used.insert(id) {
            Ok(())
        } else {
            Err(Error::TripleReuse(id))
        }
    }

    pub fn used(&self) -> usize {
        self.used.len()
    }
}

/// Local masking step of Beaver multiplication: `(x_i - a_i, y_i - b_i)`.
#[inline]
pub fn beaver_masks(x: RingElement, y: RingElement, t: &TripleShare) -> (RingElement, RingElement) {
    (x - t.a, y - t.b)
}

/// Combines the opened masks `d = x - a`, `e = y - b` into a share of `x * y`.
#[inline]
pub fn beaver_combine(party: PartyId, d: RingElement, e: RingElement, t: &TripleShare) -> RingElement {
    let z = t.c + d * t.b + e * t.a;
    match party {
        PartyId::P1 => z + d * e,
        PartyId::P2 => z,
    }
}

/// Runs a full Beaver multiplication on both parties' shares in one place.
///
/// Returns shares of `x * y` at scale `2^(2f)`; when `trunc_bits` is given the
/// shares are truncated share-wise back down.
pub fn mul_beaver(
    x: (RingElement, RingElement),
    y: (RingElement, RingElement),
    triple: (&TripleShare, &TripleShare),
    ledger: &mut TripleLedger,
    trunc_bits: Option<u32>,
) -> Result<(RingElement, RingElement)> {
    if triple.0.id != triple.1.id {
        return Err(Error::Protocol(format!(
            "triple halves do not match: {} vs {}",
            triple.0.id, triple.1.id
        )));
    }
    ledger.consume(triple.0.id)?;
    let (d1, e1) = beaver_masks(x.0, y.0, triple.0);
    let (d2, e2) = beaver_masks(x.1, y.1, triple.1);
    let (d, e) = (d1 + d2, e1 + e2);
    let z1 = beaver_combine(PartyId::P1, d, e, triple.0);
    let z2 = beaver_combine(PartyId::P2, d, e, triple.1);
    Ok(match trunc_bits {
        Some(s) => (trunc_share(z1, PartyId::P1, s), trunc_share(z2, PartyId::P2, s)),
        None => (z1, z2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedPointCodec;
    use crate::stats::chi_square_uniform_p;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    fn field_of(p: SharePayload) -> RingElement {
        match p {
            SharePayload::Field(v) => v,
            _ => panic!("not a field value"),
        }
    }

    #[test]
    fn split_examples() {
        let mut rng = rng();
        let (a, b) = split_additive(RingElement::ZERO, &mut rng);
        assert_eq!(field_of(reconstruct_additive(&a, &b).unwrap()), RingElement::ZERO);
        let (a, b) = split_additive(RingElement::from(42u64), &mut rng);
        assert_eq!(field_of(reconstruct_additive(&a, &b).unwrap()).value(), 42);
        let (a, b) = split_additive(RingElement::from(17u64), &mut rng);
        assert_eq!(field_of(reconstruct_additive(&a, &b).unwrap()).value(), 17);
    }

    #[test]
    fn reconstruct_complementary_pair() {
        let a = Share::field(PartyId::P1, RingElement::from(3u64));
        let b = Share::field(PartyId::P2, -RingElement::from(3u64));
        assert_eq!(field_of(reconstruct_additive(&a, &b).unwrap()), RingElement::ZERO);
    }

    #[test]
    fn reconstruct_rejects_mixed_domains() {
        let a = Share::field(PartyId::P1, RingElement::ONE);
        let b = Share::masked_real(PartyId::P2, 1.0);
        assert!(matches!(reconstruct_additive(&a, &b), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn masked_real_reconstruction() {
        let mut rng = rng();
        let (a, b) = split_masked_real(2.5, 64.0, &mut rng).unwrap();
        match reconstruct_additive(&a, &b).unwrap() {
            SharePayload::MaskedReal(v) => assert!((v - 2.5).abs() <= 2f64.powi(-45)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn additive_reconstruction_is_exact() {
        let mut rng = rng();
        for _ in 0..100_000 {
            let x = RingElement::random(&mut rng);
            let (a, b) = split_additive(x, &mut rng);
            assert_eq!(field_of(reconstruct_additive(&a, &b).unwrap()), x);
        }
    }

    #[test]
    fn first_share_is_uniform() {
        let mut rng = rng();
        let bins = 64;
        let mut counts = vec![0u64; bins];
        let x = RingElement::from(1234u64);
        for _ in 0..100_000 {
            let (a, _) = split_additive(x, &mut rng);
            let SharePayload::Field(v) = a.payload else {
                unreachable!()
            };
            counts[(v.value() >> 121) as usize] += 1;
        }
        let p = chi_square_uniform_p(&counts);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn beaver_examples_and_reuse() {
        let codec = FixedPointCodec::default();
        let mut rng = rng();
        let mut generator = DealerGenerator::new(5);
        let mut ledger = TripleLedger::new();

        let mut mul = |x: f64, y: f64, ledger: &mut TripleLedger| {
            let (t1, t2) = generator.triple();
            let (x1, x2) = split_vec(&[codec.encode(x).unwrap()], &mut rng);
            let (y1, y2) = split_vec(&[codec.encode(y).unwrap()], &mut rng);
            let z = mul_beaver(
                (x1[0], x2[0]),
                (y1[0], y2[0]),
                (&t1, &t2),
                ledger,
                Some(codec.frac_bits),
            )
            .unwrap();
            (codec.decode(z.0 + z.1), t1, t2)
        };
        let (v, _, _) = mul(3.0, 4.0, &mut ledger);
        assert!((v - 12.0).abs() <= codec.ulp());
        let (v, t1, t2) = mul(5.5, 0.0, &mut ledger);
        assert!(v.abs() <= codec.ulp());

        let err = mul_beaver(
            (RingElement::ONE, RingElement::ZERO),
            (RingElement::ONE, RingElement::ZERO),
            (&t1, &t2),
            &mut ledger,
            None,
        );
        assert!(matches!(err, Err(Error::TripleReuse(_))));
    }

    #[test]
    fn beaver_random_pairs_within_one_ulp() {
        let codec = FixedPointCodec::default();
        let mut rng = rng();
        let mut generator = DealerGenerator::new(9);
        let mut ledger = TripleLedger::new();
        for _ in 0..10_000 {
            let x = codec.decode(codec.encode(rng.gen_range(-1000.0..1000.0)).unwrap());
            let y = codec.decode(codec.encode(rng.gen_range(-1000.0..1000.0)).unwrap());
            let (t1, t2) = generator.triple();
            let (x1, x2) = split_vec(&[codec.encode(x).unwrap()], &mut rng);
            let (y1, y2) = split_vec(&[codec.encode(y).unwrap()], &mut rng);
            let z = mul_beaver(
                (x1[0], x2[0]),
                (y1[0], y2[0]),
                (&t1, &t2),
                &mut ledger,
                Some(codec.frac_bits),
            )
            .unwrap();
            let got = codec.decode(z.0 + z.1);
            assert!((got - x * y).abs() <= codec.ulp(), "{x}*{y}: {got}");
        }
    }

    #[test]
    fn beaver_wire_values_are_uniform() {
        // Fixed inputs; the opened d = x - a must look uniform over many runs.
        let mut rng = rng();
        let mut generator = DealerGenerator::new(3);
        let x = RingElement::from(7u64);
        let mut counts = vec![0u64; 32];
        for _ in 0..10_000 {
            let (t1, t2) = generator.triple();
            let (x1, x2) = split_vec(&[x], &mut rng);
            let d = beaver_masks(x1[0], RingElement::ZERO, &t1).0 + beaver_masks(x2[0], RingElement::ZERO, &t2).0;
            counts[(d.value() >> 122) as usize] += 1;
        }
        assert!(chi_square_uniform_p(&counts) > 0.01);
    }
}
