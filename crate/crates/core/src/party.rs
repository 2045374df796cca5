//! One compute party's runtime: channel to the peer, dealer supply,
//! transcript, and the interactive primitives every protocol is built from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fixed::{trunc_share, FixedPointCodec};
use crate::ring::{decode_elements, encode_elements, RingElement};
use crate::sharing::{beaver_combine, beaver_masks, CorrelatedSource, PartyId, TripleLedger};
use crate::transport::{protocol_id, Frame, Transcript, Transport};

/// Default bound `C` of the masks used in the masked-real domain.
pub const DEFAULT_MASK_BOUND: f64 = 64.0;

#[derive(Debug, Clone, Copy)]
pub struct PartyOptions {
    pub session: u32,
    /// Seed of the party's private randomness (masked-real conversion).
    pub seed: u64,
    pub mask_bound: f64,
}

impl Default for PartyOptions {
    fn default() -> Self {
        PartyOptions {
            session: 1,
            seed: 0,
            mask_bound: DEFAULT_MASK_BOUND,
        }
    }
}

pub struct Party {
    id: PartyId,
    codec: FixedPointCodec,
    transport: Box<dyn Transport>,
    dealer: Box<dyn CorrelatedSource>,
    rng: ChaCha20Rng,
    session: u32,
    round: u64,
    scopes: Vec<&'static str>,
    transcript: Transcript,
    ledger: TripleLedger,
    mask_bound: f64,
}

impl Party {
    pub fn new(
        id: PartyId,
        codec: FixedPointCodec,
        transport: Box<dyn Transport>,
        dealer: Box<dyn CorrelatedSource>,
        options: PartyOptions,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
        rng.set_stream(100 + id.number() as u64);
        Party {
            id,
            codec,
            transport,
            dealer,
            rng,
            session: options.session,
            round: 0,
            scopes: Vec::new(),
            transcript: Transcript::new(id),
            ledger: TripleLedger::new(),
            mask_bound: options.mask_bound,
        }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn dealer(&mut self) -> &mut dyn CorrelatedSource {
        self.dealer.as_mut()
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    /// Runs `f` with `name` pushed on the scope stack.
    pub fn scoped<R>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.scopes.push(name);
        self.transcript.enter(name);
        let out = f(self);
        self.scopes.pop();
        out
    }

    pub fn add_steps(&mut self, n: u64) {
        self.transcript.add_steps(&self.scopes, n);
    }

    fn frame(&self, payload: Vec<u8>) -> Frame {
        let proto = self.scopes.last().copied().unwrap_or("session");
        Frame {
            session: self.session,
            protocol: protocol_id(proto),
            round: self.round,
            payload,
        }
    }

    fn check(&self, frame: &Frame) -> Result<()> {
        if frame.session != self.session {
            return Err(Error::Protocol(format!(
                "frame for session {} arrived in session {}",
                frame.session, self.session
            )));
        }
        if frame.round != self.round {
            return Err(Error::RoundOrder {
                expected: self.round,
                got: frame.round,
            });
        }
        Ok(())
    }

    fn decode_payload(frame: &Frame) -> Result<Vec<RingElement>> {
        decode_elements(&frame.payload)
            .ok_or_else(|| Error::Transport("payload is not a list of field elements".into()))
    }

    /// Sends `mine` and receives the peer's message of the same round.
    ///
    /// Party 1 writes first and party 2 reads first so large payloads cannot
    /// deadlock on bounded socket buffers; it still counts as one round.
    pub fn exchange(&mut self, label: &str, mine: &[RingElement]) -> Result<Vec<RingElement>> {
        self.round += 1;
        let out = self.frame(encode_elements(mine));
        let incoming = match self.id {
            PartyId::P1 => {
                self.transport.send(&out)?;
                self.transport.recv()?
            }
            PartyId::P2 => {
                let f = self.transport.recv()?;
                self.transport.send(&out)?;
                f
            }
        };
        self.check(&incoming)?;
        let theirs = Self::decode_payload(&incoming)?;
        self.transcript.record_round(
            &self.scopes,
            Some((mine.len() as u64, out.wire_len() as u64)),
            Some((theirs.len() as u64, incoming.wire_len() as u64)),
        );
        self.transcript.record_opening(label, theirs.len() as u64);
        Ok(theirs)
    }

    /// One flight from `sender` to the other party. The sender passes its
    /// payload and gets `None`; the receiver passes `None` and gets the payload.
    pub fn one_way(
        &mut self,
        label: &str,
        sender: PartyId,
        payload: Option<&[RingElement]>,
    ) -> Result<Option<Vec<RingElement>>> {
        self.round += 1;
        if self.id == sender {
            let data = payload.ok_or_else(|| Error::Protocol("sender has no payload".into()))?;
            let out = self.frame(encode_elements(data));
            self.transport.send(&out)?;
            self.transcript
                .record_round(&self.scopes, Some((data.len() as u64, out.wire_len() as u64)), None);
            Ok(None)
        } else {
            let incoming = self.transport.recv()?;
            self.check(&incoming)?;
            let theirs = Self::decode_payload(&incoming)?;
            self.transcript.record_round(
                &self.scopes,
                None,
                Some((theirs.len() as u64, incoming.wire_len() as u64)),
            );
            self.transcript.record_opening(label, theirs.len() as u64);
            Ok(Some(theirs))
        }
    }

    /// Reconstructs shared values for both parties.
    pub fn open(&mut self, label: &str, x: &[RingElement]) -> Result<Vec<RingElement>> {
        let theirs = self.exchange(label, x)?;
        if theirs.len() != x.len() {
            return Err(Error::Protocol(format!(
                "opened {} values but the peer sent {}",
                x.len(),
                theirs.len()
            )));
        }
        Ok(x.iter().zip(&theirs).map(|(&a, &b)| a + b).collect())
    }

    /// This party's share of a public constant.
    #[inline]
    pub fn constant(&self, c: RingElement) -> RingElement {
        match self.id {
            PartyId::P1 => c,
            PartyId::P2 => RingElement::ZERO,
        }
    }

    pub fn add_constant(&self, x: &[RingElement], c: RingElement) -> Vec<RingElement> {
        let k = self.constant(c);
        x.iter().map(|&v| v + k).collect()
    }

    pub fn trunc(&self, x: &[RingElement], shift: u32) -> Vec<RingElement> {
        x.iter().map(|&v| trunc_share(v, self.id, shift)).collect()
    }

    /// Multiplies by a public real at the weight scale and truncates back.
    pub fn scale_public(&self, x: &[RingElement], w: f64) -> Result<Vec<RingElement>> {
        let wbar = self.codec.encode_weight(w)?;
        let prod: Vec<RingElement> = x.iter().map(|&v| v * wbar).collect();
        Ok(self.trunc(&prod, self.codec.weight_frac_bits))
    }

    /// Beaver multiplication without truncation (scale adds up).
    pub fn mul_raw(&mut self, x: &[RingElement], y: &[RingElement]) -> Result<Vec<RingElement>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!(
                "cannot multiply {} by {} elements",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let triples = self.dealer.triples(n)?;
        for t in &triples {
            self.ledger.consume(t.id)?;
        }
        let mut masks = Vec::with_capacity(2 * n);
        let mut es = Vec::with_capacity(n);
        for ((&a, &b), t) in x.iter().zip(y).zip(&triples) {
            let (d, e) = beaver_masks(a, b, t);
            masks.push(d);
            es.push(e);
        }
        masks.extend(es);
        let opened = self.open("beaver.masks", &masks)?;
        let (d, e) = opened.split_at(n);
        Ok(triples
            .iter()
            .enumerate()
            .map(|(i, t)| beaver_combine(self.id, d[i], e[i], t))
            .collect())
    }

    /// Fixed-point product of two shared vectors.
    pub fn mul(&mut self, x: &[RingElement], y: &[RingElement]) -> Result<Vec<RingElement>> {
        let z = self.mul_raw(x, y)?;
        Ok(self.trunc(&z, self.codec.frac_bits))
    }

    /// Converts field shares at scale `2^f` to masked-real shares
    /// `u1 = u - r`, `u2 = r` with `r` uniform on the `2^-f` grid in `[-C, C]`.
    pub fn to_masked_real(&mut self, x: &[RingElement]) -> Result<Vec<f64>> {
        let scale = self.codec.scale();
        let bound = (self.mask_bound * scale) as i128;
        match self.id {
            PartyId::P2 => {
                let masks: Vec<i128> = (0..x.len()).map(|_| self.rng.gen_range(-bound..=bound)).collect();
                let diff: Vec<RingElement> = x
                    .iter()
                    .zip(&masks)
                    .map(|(&v, &r)| v - RingElement::from_i128(r))
                    .collect();
                self.one_way("masked_real.difference", PartyId::P2, Some(&diff))?;
                Ok(masks.into_iter().map(|r| r as f64 / scale).collect())
            }
            PartyId::P1 => {
                let diff = self
                    .one_way("masked_real.difference", PartyId::P2, None)?
                    .expect("receiver gets a payload");
                if diff.len() != x.len() {
                    return Err(Error::Protocol("masked-real conversion length mismatch".into()));
                }
                Ok(x.iter()
                    .zip(&diff)
                    .map(|(&a, &b)| (a + b).to_i128() as f64 / scale)
                    .collect())
            }
        }
    }

    /// Re-encodes masked-real shares into field shares (local).
    pub fn to_field(&self, u: &[f64]) -> Result<Vec<RingElement>> {
        let scale = self.codec.scale();
        u.iter()
            .map(|&v| {
                if !v.is_finite() {
                    return Err(Error::NonFinite(v));
                }
                Ok(RingElement::from_i128((v * scale).round() as i128))
            })
            .collect()
    }
}
