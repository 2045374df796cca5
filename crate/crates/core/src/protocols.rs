//! Interactive building blocks: comparison, selection, exponentiation and
//! division over additive shares.

use crate::error::{Error, Result};
use crate::fixed::trunc_share;
use crate::party::Party;
use crate::ring::RingElement;
use crate::sharing::PartyId;

/// Mantissa bits kept by each party in [`Party::sec_exp`].
pub const EXP_MANTISSA_BITS: u32 = 26;
/// Power-of-two offset that keeps the exponent of `e^u` non-negative for `u >= -16`.
pub const EXP_OFFSET_BITS: u32 = 24;
/// Precision of the public reciprocal in [`Party::sec_divi`].
pub const DIVI_RECIPROCAL_BITS: u32 = 35;
/// Semantic input bound of the exponential and of the activations built on it.
pub const ACTIVATION_BOUND: f64 = 16.0;

/// Splits `e^v` into `m * 2^k` with `m` rounded to `F` fractional bits.
fn exp_parts(v: f64) -> Result<(i128, i64)> {
    if !v.is_finite() || v.abs() > 700.0 {
        return Err(Error::Range { value: v, int_bits: 9 });
    }
    let k = (v / std::f64::consts::LN_2).floor() as i64 + 1;
    let m = (v - k as f64 * std::f64::consts::LN_2).exp();
    if !m.is_finite() {
        return Err(Error::Range { value: v, int_bits: 9 });
    }
    Ok(((m * (EXP_MANTISSA_BITS as f64).exp2()).round() as i128, k))
}

impl Party {
    /// Shares of `1{a < b}`; ties give 0.
    ///
    /// The parties open `m = r * (2(b - a) - 1) * (1 - 2s)` with a dealer
    /// scale `r` in `[1, 2)` and a dealer bit `s`; the public sign of `m`
    /// XOR `s` is the result, computed locally on the shares of `s`.
    pub fn sec_comp(&mut self, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("comparing {} with {} values", a.len(), b.len())));
        }
        self.scoped("sec_comp", |p| {
            let n = a.len();
            let s = p.dealer().bits(n)?;
            let r = p.dealer().positive_scales(n)?;
            let one = p.constant(RingElement::ONE);
            let two = RingElement::from(2u64);
            let delta: Vec<RingElement> = a.iter().zip(b).map(|(&x, &y)| two * (y - x) - one).collect();
            let flip: Vec<RingElement> = s.iter().map(|&si| one - two * si).collect();
            let t = p.mul_raw(&delta, &flip)?;
            let m = p.mul_raw(&t, &r)?;
            let opened = p.open("comp.masked_sign", &m)?;
            Ok(opened
                .iter()
                .zip(&s)
                .map(|(mo, &si)| {
                    let sigma = !mo.is_negative();
                    let sign = RingElement::from(sigma as u64);
                    p.constant(sign) + si * (RingElement::ONE - two * sign)
                })
                .collect())
        })
    }

    /// `a + bit * (b - a)`: picks `b` where the shared bit is 1.
    pub fn select(&mut self, bit: &[RingElement], a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        let diff: Vec<RingElement> = a.iter().zip(b).map(|(&x, &y)| y - x).collect();
        let prod = self.mul_raw(bit, &diff)?;
        Ok(a.iter().zip(&prod).map(|(&x, &d)| x + d).collect())
    }

    /// Element-wise maximum; ties keep `a`.
    pub fn max(&mut self, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        let f = self.sec_comp(a, b)?;
        self.select(&f, a, b)
    }

    /// Element-wise minimum; ties keep `a`.
    pub fn min(&mut self, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        let f = self.sec_comp(b, a)?;
        self.select(&f, a, b)
    }

    /// Shares of `e^u` for `|u| <= 16`.
    ///
    /// After converting to masked reals each party holds `u_i` and writes
    /// `e^(u_i)` as a 26-bit mantissa times a power of two; powers of two
    /// are exact in the field, so one multiplication of the two private
    /// field values gives `e^u` at a known scale.
    pub fn sec_exp(&mut self, u: &[RingElement]) -> Result<Vec<RingElement>> {
        self.scoped("sec_exp", |p| {
            let reals = p.to_masked_real(u)?;
            let offset = match p.id() {
                PartyId::P1 => EXP_OFFSET_BITS as i64,
                PartyId::P2 => 0,
            };
            let mut mine = Vec::with_capacity(reals.len());
            for &v in &reals {
                let (m, k) = exp_parts(v)?;
                mine.push(RingElement::from_i128(m) * RingElement::pow2(k + offset));
            }
            let zeros = vec![RingElement::ZERO; mine.len()];
            let z = match p.id() {
                PartyId::P1 => p.mul_raw(&mine, &zeros)?,
                PartyId::P2 => p.mul_raw(&zeros, &mine)?,
            };
            let shift = 2 * EXP_MANTISSA_BITS + EXP_OFFSET_BITS - p.codec().frac_bits;
            Ok(p.trunc(&z, shift))
        })
    }

    /// Shares of `v / u`. Fails if some opened masked denominator is zero.
    pub fn sec_divi(&mut self, v: &[RingElement], u: &[RingElement]) -> Result<Vec<RingElement>> {
        self.divide(v, u, false)
    }

    /// Like [`Party::sec_divi`] but yields 0 where the denominator is 0.
    pub fn sec_divi_or_zero(&mut self, v: &[RingElement], u: &[RingElement]) -> Result<Vec<RingElement>> {
        self.divide(v, u, true)
    }

    /// Both operands are multiplied by a dealer scale `r` with `|r|` in
    /// `[1, 2)` and random sign; `W = r u` is opened and each party scales
    /// its share of `r v` by a public rounded reciprocal of `W`.
    fn divide(&mut self, v: &[RingElement], u: &[RingElement], zero_ok: bool) -> Result<Vec<RingElement>> {
        if v.len() != u.len() {
            return Err(Error::Shape(format!("dividing {} by {} values", v.len(), u.len())));
        }
        self.scoped("sec_divi", |p| {
            let n = v.len();
            let r = p.dealer().divisor_scales(n)?;
            let mut lhs = v.to_vec();
            lhs.extend_from_slice(u);
            let mut rhs = r.clone();
            rhs.extend_from_slice(&r);
            let prod = p.mul_raw(&lhs, &rhs)?;
            let (rv, ru) = prod.split_at(n);
            let w = p.open("divi.masked_denominator", ru)?;
            let f = p.codec().frac_bits;
            let mut out = Vec::with_capacity(n);
            for (&num, wv) in rv.iter().zip(&w) {
                let wi = wv.to_i128();
                if wi == 0 {
                    if zero_ok {
                        out.push(RingElement::ZERO);
                        continue;
                    }
                    return Err(Error::DivisionByZero);
                }
                let s = (128 - wi.unsigned_abs().leading_zeros()) + DIVI_RECIPROCAL_BITS;
                if s > 126 {
                    return Err(Error::Range {
                        value: wi as f64,
                        int_bits: 126 - DIVI_RECIPROCAL_BITS,
                    });
                }
                let q = ((s as f64).exp2() / wi as f64).round() as i128;
                out.push(trunc_share(num * RingElement::from_i128(q), p.id(), s - f));
            }
            Ok(out)
        })
    }

    /// Clamps shared values to `[lo, hi]` (public bounds).
    pub fn clamp(&mut self, x: &[RingElement], lo: f64, hi: f64) -> Result<Vec<RingElement>> {
        let codec = *self.codec();
        let lo = codec.encode(lo)?;
        let hi = codec.encode(hi)?;
        let n = x.len();
        let lo_s = vec![self.constant(lo); n];
        let hi_s = vec![self.constant(hi); n];
        let mut a = x.to_vec();
        a.extend_from_slice(&lo_s);
        let mut b = hi_s.clone();
        b.extend_from_slice(x);
        // f[i] = x < hi, f[n + i] = lo < x
        let f = self.sec_comp(&a, &b)?;
        let one = self.constant(RingElement::ONE);
        let not_f: Vec<RingElement> = f.iter().map(|&v| one - v).collect();
        let mut gaps: Vec<RingElement> = x.iter().zip(&hi_s).map(|(&xv, &h)| h - xv).collect();
        gaps.extend(x.iter().zip(&lo_s).map(|(&xv, &l)| l - xv));
        let fix = self.mul_raw(&not_f, &gaps)?;
        Ok((0..n).map(|i| x[i] + fix[i] + fix[n + i]).collect())
    }
}
