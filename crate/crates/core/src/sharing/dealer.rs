//! Correlated randomness from the trusted dealer.
//!
//! All items are derived from one seed with an independent ChaCha stream per
//! kind, so the `k`-th item of a kind does not depend on how many items of
//! other kinds were drawn. A bundle file holds one party's half of the first
//! `n` items of each kind; [`DealerStream`] yields the same halves lazily.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::PartyId;
use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::ring::{RingElement, ELEMENT_BYTES, MODULUS};

const MAGIC: &[u8; 4] = b"PPDB";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 16 + 4 + 4 + 8 + 5 * 8;

/// Statistical hiding margin, in bits, of the common sort offset.
pub const OFFSET_MARGIN_BITS: u32 = 40;

/// One party's half of a multiplication triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleShare {
    pub id: u64,
    pub a: RingElement,
    pub b: RingElement,
    pub c: RingElement,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealerCounts {
    pub triples: u64,
    pub bits: u64,
    pub offsets: u64,
    pub positive_scales: u64,
    pub divisor_scales: u64,
}

impl DealerCounts {
    pub fn triples(n: u64) -> Self {
        DealerCounts {
            triples: n,
            ..Default::default()
        }
    }

    fn as_array(&self) -> [u64; 5] {
        [
            self.triples,
            self.bits,
            self.offsets,
            self.positive_scales,
            self.divisor_scales,
        ]
    }

    fn from_array(a: [u64; 5]) -> Self {
        DealerCounts {
            triples: a[0],
            bits: a[1],
            offsets: a[2],
            positive_scales: a[3],
            divisor_scales: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Triple = 0,
    Bit = 1,
    Offset = 2,
    PositiveScale = 3,
    DivisorScale = 4,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Triple => "triples",
            Kind::Bit => "masked bits",
            Kind::Offset => "common offsets",
            Kind::PositiveScale => "positive scales",
            Kind::DivisorScale => "divisor scales",
        }
    }
}

/// Deterministic generator for both parties' halves.
#[derive(Debug, Clone)]
pub struct DealerGenerator {
    seed: u64,
    codec: FixedPointCodec,
    streams: [ChaCha20Rng; 5],
    next_triple_id: u64,
}

impl DealerGenerator {
    pub fn new(seed: u64) -> Self {
        Self::with_codec(seed, FixedPointCodec::default())
    }

    pub fn with_codec(seed: u64, codec: FixedPointCodec) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            r.set_stream(k + 1);
            r
        };
        DealerGenerator {
            seed,
            codec,
            streams: [stream(0), stream(1), stream(2), stream(3), stream(4)],
            next_triple_id: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codec(&self) -> FixedPointCodec {
        self.codec
    }

    fn split(rng: &mut ChaCha20Rng, x: RingElement) -> (RingElement, RingElement) {
        let s = RingElement::random(rng);
        (s, x - s)
    }

    pub fn triple(&mut self) -> (TripleShare, TripleShare) {
        let rng = &mut self.streams[Kind::Triple as usize];
        let a = RingElement::random(rng);
        let b = RingElement::random(rng);
        let (a1, a2) = Self::split(rng, a);
        let (b1, b2) = Self::split(rng, b);
        let (c1, c2) = Self::split(rng, a * b);
        let id = self.next_triple_id;
        self.next_triple_id += 1;
        (
            TripleShare {
                id,
                a: a1,
                b: b1,
                c: c1,
            },
            TripleShare {
                id,
                a: a2,
                b: b2,
                c: c2,
            },
        )
    }

    /// Shares of a uniform bit in `{0, 1}`.
    pub fn bit(&mut self) -> (RingElement, RingElement) {
        let rng = &mut self.streams[Kind::Bit as usize];
        let s = RingElement::from(rng.gen::<bool>() as u64);
        Self::split(rng, s)
    }

    /// Shares of a bounded offset, uniform in `[-2^k, 2^k]` with `k = l + f + 40`.
    pub fn offset(&mut self) -> (RingElement, RingElement) {
        let bits = self.codec.int_bits + self.codec.frac_bits + OFFSET_MARGIN_BITS;
        let rng = &mut self.streams[Kind::Offset as usize];
        let bound = 1i128 << bits;
        let rho = rng.gen_range(-bound..=bound);
        Self::split(rng, RingElement::from_i128(rho))
    }

    /// Shares of a fixed-point scale uniform in `[1, 2)`.
    pub fn positive_scale(&mut self) -> (RingElement, RingElement) {
        let f = self.codec.frac_bits;
        let rng = &mut self.streams[Kind::PositiveScale as usize];
        let r = rng.gen_range((1i128 << f)..(1i128 << (f + 1)));
        Self::split(rng, RingElement::from_i128(r))
    }

    /// Shares of a fixed-point scale uniform in `(-2, -1] ∪ [1, 2)`.
    pub fn divisor_scale(&mut self) -> (RingElement, RingElement) {
        let f = self.codec.frac_bits;
        let rng = &mut self.streams[Kind::DivisorScale as usize];
        let mut r = rng.gen_range((1i128 << f)..(1i128 << (f + 1)));
        if rng.gen::<bool>() {
            r = -r;
        }
        Self::split(rng, RingElement::from_i128(r))
    }

    /// Generates both parties' bundles holding the first `counts` items.
    pub fn bundles(&mut self, counts: DealerCounts) -> (DealerBundle, DealerBundle) {
        let mut b1 = DealerBundle::empty(PartyId::P1, self.seed, self.codec);
        let mut b2 = DealerBundle::empty(PartyId::P2, self.seed, self.codec);
        for _ in 0..counts.triples {
            let (t1, t2) = self.triple();
            b1.triples.push(t1);
            b2.triples.push(t2);
        }
        let pairs = [
            (counts.bits, Kind::Bit),
            (counts.offsets, Kind::Offset),
            (counts.positive_scales, Kind::PositiveScale),
            (counts.divisor_scales, Kind::DivisorScale),
        ];
        for (n, kind) in pairs {
            for _ in 0..n {
                let (x1, x2) = self.draw(kind);
                b1.list_mut(kind).push(x1);
                b2.list_mut(kind).push(x2);
            }
        }
        (b1, b2)
    }

    fn draw(&mut self, kind: Kind) -> (RingElement, RingElement) {
        match kind {
            Kind::Bit => self.bit(),
            Kind::Offset => self.offset(),
            Kind::PositiveScale => self.positive_scale(),
            Kind::DivisorScale => self.divisor_scale(),
            Kind::Triple => unreachable!("triples are drawn with DealerGenerator::triple"),
        }
    }
}

/// A party's supply of correlated randomness.
pub trait CorrelatedSource: Send {
    fn triples(&mut self, n: usize) -> Result<Vec<TripleShare>>;
    fn bits(&mut self, n: usize) -> Result<Vec<RingElement>>;
    fn offsets(&mut self, n: usize) -> Result<Vec<RingElement>>;
    fn positive_scales(&mut self, n: usize) -> Result<Vec<RingElement>>;
    fn divisor_scales(&mut self, n: usize) -> Result<Vec<RingElement>>;
    /// Items handed out so far.
    fn consumed(&self) -> DealerCounts;
}

/// One party's finite bundle, as loaded from a dealer file.
#[derive(Debug, Clone, PartialEq)]
pub struct DealerBundle {
    pub party: PartyId,
    pub seed: u64,
    pub codec: FixedPointCodec,
    pub triples: Vec<TripleShare>,
    pub bits: Vec<RingElement>,
    pub offsets: Vec<RingElement>,
    pub positive_scales: Vec<RingElement>,
    pub divisor_scales: Vec<RingElement>,
    cursor: [usize; 5],
}

impl DealerBundle {
    fn empty(party: PartyId, seed: u64, codec: FixedPointCodec) -> Self {
        DealerBundle {
            party,
            seed,
            codec,
            triples: Vec::new(),
            bits: Vec::new(),
            offsets: Vec::new(),
            positive_scales: Vec::new(),
            divisor_scales: Vec::new(),
            cursor: [0; 5],
        }
    }

    fn list_mut(&mut self, kind: Kind) -> &mut Vec<RingElement> {
        match kind {
            Kind::Bit => &mut self.bits,
            Kind::Offset => &mut self.offsets,
            Kind::PositiveScale => &mut self.positive_scales,
            Kind::DivisorScale => &mut self.divisor_scales,
            Kind::Triple => unreachable!(),
        }
    }

    fn list(&self, kind: Kind) -> &[RingElement] {
        match kind {
            Kind::Bit => &self.bits,
            Kind::Offset => &self.offsets,
            Kind::PositiveScale => &self.positive_scales,
            Kind::DivisorScale => &self.divisor_scales,
            Kind::Triple => unreachable!(),
        }
    }

    pub fn counts(&self) -> DealerCounts {
        DealerCounts {
            triples: self.triples.len() as u64,
            bits: self.bits.len() as u64,
            offsets: self.offsets.len() as u64,
            positive_scales: self.positive_scales.len() as u64,
            divisor_scales: self.divisor_scales.len() as u64,
        }
    }

    fn take(&mut self, kind: Kind, n: usize) -> Result<Vec<RingElement>> {
        let k = kind as usize;
        let start = self.cursor[k];
        let list = self.list(kind);
        if start + n > list.len() {
            return Err(Error::DealerExhausted {
                kind: kind.name(),
                needed: (start + n - list.len()) as u64,
            });
        }
        let out = list[start..start + n].to_vec();
        self.cursor[k] += n;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let counts = self.counts().as_array();
        let items: u64 = counts[0] * 3 + counts[1..].iter().sum::<u64>();
        let mut out = Vec::with_capacity(HEADER_BYTES + items as usize * ELEMENT_BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.party.number());
        out.push(0);
        out.extend_from_slice(&MODULUS.to_le_bytes());
        out.extend_from_slice(&self.codec.frac_bits.to_le_bytes());
        out.extend_from_slice(&self.codec.int_bits.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for t in &self.triples {
            out.extend_from_slice(&t.a.to_le_bytes());
            out.extend_from_slice(&t.b.to_le_bytes());
            out.extend_from_slice(&t.c.to_le_bytes());
        }
        for kind in [Kind::Bit, Kind::Offset, Kind::PositiveScale, Kind::DivisorScale] {
            for v in self.list(kind) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Format("dealer bundle is truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("not a dealer bundle (bad magic)".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dealer bundle version {version}")));
        }
        let party = PartyId::from_number(take(1)?[0])
            .ok_or_else(|| Error::Format("bad party number in dealer bundle".into()))?;
        take(1)?;
        let modulus = u128::from_le_bytes(take(16)?.try_into().unwrap());
        if modulus != MODULUS {
            return Err(Error::Format(format!(
                "bundle modulus {modulus} does not match the field"
            )));
        }
        let frac_bits = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let int_bits = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut counts = [0u64; 5];
        for c in counts.iter_mut() {
            *c = u64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let codec = FixedPointCodec {
            frac_bits,
            int_bits,
            ..FixedPointCodec::default()
        };
        let mut bundle = DealerBundle::empty(party, seed, codec);
        let mut elem = || -> Result<RingElement> {
            RingElement::from_le_bytes(take(ELEMENT_BYTES)?.try_into().unwrap())
                .ok_or_else(|| Error::Format("non-canonical field element in bundle".into()))
        };
        for id in 0..counts[0] {
            let (a, b, c) = (elem()?, elem()?, elem()?);
            bundle.triples.push(TripleShare { id, a, b, c });
        }
        for (i, kind) in [Kind::Bit, Kind::Offset, Kind::PositiveScale, Kind::DivisorScale]
            .into_iter()
            .enumerate()
        {
            for _ in 0..counts[i + 1] {
                let v = elem()?;
                bundle.list_mut(kind).push(v);
            }
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after dealer bundle".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

impl CorrelatedSource for DealerBundle {
    fn triples(&mut self, n: usize) -> Result<Vec<TripleShare>> {
        let start = self.cursor[0];
        if start + n > self.triples.len() {
            return Err(Error::DealerExhausted {
                kind: Kind::Triple.name(),
                needed: (start + n - self.triples.len()) as u64,
            });
        }
        self.cursor[0] += n;
        Ok(self.triples[start..start + n].to_vec())
    }

    fn bits(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.take(Kind::Bit, n)
    }

    fn offsets(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.take(Kind::Offset, n)
    }

    fn positive_scales(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.take(Kind::PositiveScale, n)
    }

    fn divisor_scales(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.take(Kind::DivisorScale, n)
    }

    fn consumed(&self) -> DealerCounts {
        DealerCounts::from_array(self.cursor.map(|c| c as u64))
    }
}

/// Unbounded per-party source that regenerates the dealer's output from the
/// seed and keeps one half. Simulation only: whoever holds the seed can
/// derive the other party's half too.
#[derive(Debug, Clone)]
pub struct DealerStream {
    party: PartyId,
    generator: DealerGenerator,
    consumed: DealerCounts,
}

impl DealerStream {
    pub fn new(seed: u64, party: PartyId, codec: FixedPointCodec) -> Self {
        DealerStream {
            party,
            generator: DealerGenerator::with_codec(seed, codec),
            consumed: DealerCounts::default(),
        }
    }

    fn pick<T>(&self, pair: (T, T)) -> T {
        match self.party {
            PartyId::P1 => pair.0,
            PartyId::P2 => pair.1,
        }
    }

    fn draw_n(&mut self, kind: Kind, n: usize) -> Vec<RingElement> {
        (0..n)
            .map(|_| {
                let pair = self.generator.draw(kind);
                self.pick(pair)
            })
            .collect()
    }
}

impl CorrelatedSource for DealerStream {
    fn triples(&mut self, n: usize) -> Result<Vec<TripleShare>> {
        self.consumed.triples += n as u64;
        Ok((0..n)
            .map(|_| {
                let pair = self.generator.triple();
                self.pick(pair)
            })
            .collect())
    }

    fn bits(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.consumed.bits += n as u64;
        Ok(self.draw_n(Kind::Bit, n))
    }

    fn offsets(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.consumed.offsets += n as u64;
        Ok(self.draw_n(Kind::Offset, n))
    }

    fn positive_scales(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.consumed.positive_scales += n as u64;
        Ok(self.draw_n(Kind::PositiveScale, n))
    }

    fn divisor_scales(&mut self, n: usize) -> Result<Vec<RingElement>> {
        self.consumed.divisor_scales += n as u64;
        Ok(self.draw_n(Kind::DivisorScale, n))
    }

    fn consumed(&self) -> DealerCounts {
        self.consumed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_uniform_p;

    fn counts() -> DealerCounts {
        DealerCounts {
            triples: 10,
            bits: 20,
            offsets: 5,
            positive_scales: 7,
            divisor_scales: 3,
        }
    }

    #[test]
    fn triples_reconstruct() {
        let (b1, b2) = DealerGenerator::new(0).bundles(DealerCounts::triples(10));
        for (t1, t2) in b1.triples.iter().zip(&b2.triples) {
            assert_eq!(t1.id, t2.id);
            assert_eq!(t1.c + t2.c, (t1.a + t2.a) * (t1.b + t2.b));
        }
    }

    #[test]
    fn other_kinds_reconstruct_in_range() {
        let codec = FixedPointCodec::default();
        let (b1, b2) = DealerGenerator::new(4).bundles(counts());
        for (x, y) in b1.bits.iter().zip(&b2.bits) {
            assert!((*x + *y).value() <= 1);
        }
        let one = 1i128 << codec.frac_bits;
        for (x, y) in b1.positive_scales.iter().zip(&b2.positive_scales) {
            let r = (*x + *y).to_i128();
            assert!((one..2 * one).contains(&r));
        }
        for (x, y) in b1.divisor_scales.iter().zip(&b2.divisor_scales) {
            let r = (*x + *y).to_i128().abs();
            assert!((one..2 * one).contains(&r));
        }
        let bound = 1i128 << (codec.int_bits + codec.frac_bits + OFFSET_MARGIN_BITS);
        for (x, y) in b1.offsets.iter().zip(&b2.offsets) {
            assert!((*x + *y).to_i128().abs() <= bound);
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a1, a2) = DealerGenerator::new(0).bundles(counts());
        let (b1, b2) = DealerGenerator::new(0).bundles(counts());
        assert_eq!(a1.to_bytes(), b1.to_bytes());
        assert_eq!(a2.to_bytes(), b2.to_bytes());
        let (c1, _) = DealerGenerator::new(1).bundles(counts());
        assert_ne!(a1.to_bytes(), c1.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let (b1, _) = DealerGenerator::new(2).bundles(counts());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p1.bin");
        b1.save(&path).unwrap();
        assert_eq!(DealerBundle::load(&path).unwrap(), b1);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (b1, _) = DealerGenerator::new(2).bundles(counts());
        let bytes = b1.to_bytes();
        assert!(DealerBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DealerBundle::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(DealerBundle::from_bytes(&long).is_err());
    }

    #[test]
    fn stream_matches_bundle() {
        let codec = FixedPointCodec::default();
        let (mut b1, mut b2) = DealerGenerator::new(8).bundles(counts());
        let mut s1 = DealerStream::new(8, PartyId::P1, codec);
        let mut s2 = DealerStream::new(8, PartyId::P2, codec);
        // Interleave kinds differently on each side; streams are per kind.
        assert_eq!(s1.bits(20).unwrap(), b1.bits(20).unwrap());
        assert_eq!(s1.triples(10).unwrap(), b1.triples(10).unwrap());
        assert_eq!(s2.triples(4).unwrap(), b2.triples(4).unwrap());
        assert_eq!(s2.divisor_scales(3).unwrap(), b2.divisor_scales(3).unwrap());
        assert_eq!(s2.triples(6).unwrap(), b2.triples(6).unwrap());
        assert_eq!(s1.consumed().triples, 10);
    }

    #[test]
    fn exhaustion_is_an_error() {
        let (mut b1, _) = DealerGenerator::new(3).bundles(DealerCounts::triples(2));
        b1.triples(2).unwrap();
        assert!(matches!(b1.triples(1), Err(Error::DealerExhausted { .. })));
        assert!(matches!(b1.bits(1), Err(Error::DealerExhausted { .. })));
    }

    #[test]
    fn triple_components_are_uniform() {
        let (b1, _) = DealerGenerator::new(0).bundles(DealerCounts::triples(10_000));
        for pick in [|t: &TripleShare| t.a, |t: &TripleShare| t.b, |t: &TripleShare| t.c] {
            let mut counts = vec![0u64; 32];
            for t in &b1.triples {
                counts[(pick(t).value() >> 122) as usize] += 1;
            }
            assert!(chi_square_uniform_p(&counts) > 0.01);
        }
    }
}
