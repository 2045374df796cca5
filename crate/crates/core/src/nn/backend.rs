//! One interface for the secure two-party path and the plaintext oracle.
//!
//! Everything above the protocol layer (block graphs, box decoding, anchor
//! clustering, suppression) is written against [`Backend`]. A [`Party`]
//! runs it on shares; [`Plain`] runs it on the encodings themselves.

use super::{bn_affine, conv_accumulate, pool_candidates, pool_pad, BNParams, ConvParams, Tensor, BN_GUARD_BITS};
use crate::error::{Error, Result};
use crate::fixed::{trunc_public, FixedPointCodec};
use crate::party::Party;
use crate::protocols::ACTIVATION_BOUND;
use crate::ring::RingElement;

type R = RingElement;

pub trait Backend {
    fn codec(&self) -> FixedPointCodec;

    /// This backend's portion of a public constant.
    fn constant(&self, c: R) -> R;

    fn scoped<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T>
    where
        Self: Sized;

    fn conv(&mut self, x: &Tensor, p: &ConvParams) -> Result<Tensor>;
    fn bn(&mut self, x: &Tensor, p: &BNParams) -> Result<Tensor>;
    /// Convolution and the batch norm applied to it.
    fn conv_bn(&mut self, x: &Tensor, conv: &ConvParams, bn: &BNParams) -> Result<(Tensor, Tensor)>;
    fn silu(&mut self, x: &[R]) -> Result<Vec<R>>;
    fn sigmoid(&mut self, x: &[R]) -> Result<Vec<R>>;
    fn maxpool(&mut self, x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Tensor>;

    /// Product without truncation.
    fn mul_raw(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>>;
    /// Fixed-point product.
    fn mul(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>>;
    /// `1{a < b}` as a raw 0/1 value.
    fn less_than(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>>;
    /// `a + bit * (b - a)`.
    fn select(&mut self, bit: &[R], a: &[R], b: &[R]) -> Result<Vec<R>>;
    /// `v / u`; with `zero_ok` a zero denominator yields 0.
    fn divide(&mut self, v: &[R], u: &[R], zero_ok: bool) -> Result<Vec<R>>;
    /// Makes values public to both sides.
    fn reveal(&mut self, label: &str, x: &[R]) -> Result<Vec<R>>;
    /// Descending order of the values, ties by index.
    fn argsort_desc(&mut self, x: &[R]) -> Result<Vec<usize>>;

    fn max(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        let f = self.less_than(a, b)?;
        self.select(&f, a, b)
    }

    fn min(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        let f = self.less_than(a, b)?;
        self.select(&f, b, a)
    }
}

impl Backend for Party {
    fn codec(&self) -> FixedPointCodec {
        *Party::codec(self)
    }

    fn constant(&self, c: R) -> R {
        Party::constant(self, c)
    }

    fn scoped<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        Party::scoped(self, name, f)
    }

    fn conv(&mut self, x: &Tensor, p: &ConvParams) -> Result<Tensor> {
        self.conv_tensor(x, p)
    }

    fn bn(&mut self, x: &Tensor, p: &BNParams) -> Result<Tensor> {
        self.bn_tensor(x, p)
    }

    fn conv_bn(&mut self, x: &Tensor, conv: &ConvParams, bn: &BNParams) -> Result<(Tensor, Tensor)> {
        self.conv_bn_tensor(x, conv, bn)
    }

    fn silu(&mut self, x: &[R]) -> Result<Vec<R>> {
        Party::silu(self, x)
    }

    fn sigmoid(&mut self, x: &[R]) -> Result<Vec<R>> {
        Party::sigmoid(self, x)
    }

    fn maxpool(&mut self, x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Tensor> {
        self.maxpool_tensor(x, size, stride, pad)
    }

    fn mul_raw(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>> {
        Party::mul_raw(self, x, y)
    }

    fn mul(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>> {
        Party::mul(self, x, y)
    }

    fn less_than(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        self.sec_comp(a, b)
    }

    fn select(&mut self, bit: &[R], a: &[R], b: &[R]) -> Result<Vec<R>> {
        Party::select(self, bit, a, b)
    }

    fn divide(&mut self, v: &[R], u: &[R], zero_ok: bool) -> Result<Vec<R>> {
        if zero_ok {
            self.sec_divi_or_zero(v, u)
        } else {
            self.sec_divi(v, u)
        }
    }

    fn reveal(&mut self, label: &str, x: &[R]) -> Result<Vec<R>> {
        self.open(label, x)
    }

    fn argsort_desc(&mut self, x: &[R]) -> Result<Vec<usize>> {
        self.sec_ds(x)
    }

    fn max(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        Party::max(self, a, b)
    }

    fn min(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        Party::min(self, a, b)
    }
}

fn trunc_all(x: &[R], shift: u32) -> Vec<R> {
    x.iter().map(|&v| trunc_public(v, shift)).collect()
}

/// Plaintext fixed-point evaluation: linear layers in exact integer
/// arithmetic with floor truncation, nonlinear ones in binary64.
#[derive(Debug, Clone, Copy, Default)]
pub struct Plain {
    pub codec: FixedPointCodec,
}

impl Plain {
    pub fn new(codec: FixedPointCodec) -> Self {
        Plain { codec }
    }

    fn map_real(&self, x: &[R], f: impl Fn(f64) -> f64) -> Vec<R> {
        x.iter()
            .map(|&v| self.codec.encode_saturating(f(self.codec.decode(v))))
            .collect()
    }
}

fn same_len(a: &[R], b: &[R]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("operands of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// `x / (1 + e^(-clamp(x)))` in binary64.
pub fn silu_f64(x: f64) -> f64 {
    x / (1.0 + (-x.clamp(-ACTIVATION_BOUND, ACTIVATION_BOUND)).exp())
}

pub fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-ACTIVATION_BOUND, ACTIVATION_BOUND)).exp())
}

impl Backend for Plain {
    fn codec(&self) -> FixedPointCodec {
        self.codec
    }

    fn constant(&self, c: R) -> R {
        c
    }

    fn scoped<T>(&mut self, _name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        f(self)
    }

    fn conv(&mut self, x: &Tensor, p: &ConvParams) -> Result<Tensor> {
        let (w, b) = p.encode(&self.codec)?;
        let acc = conv_accumulate(x, p, &w, &b, true)?;
        Ok(acc.with_data(trunc_all(&acc.data, self.codec.weight_frac_bits)))
    }

    fn bn(&mut self, x: &Tensor, p: &BNParams) -> Result<Tensor> {
        bn_affine(x, p, &self.codec, 0, None, trunc_all)
    }

    fn conv_bn(&mut self, x: &Tensor, conv: &ConvParams, bn: &BNParams) -> Result<(Tensor, Tensor)> {
        let (w, b) = conv.encode(&self.codec)?;
        let acc = conv_accumulate(x, conv, &w, &b, true)?;
        let fw = self.codec.weight_frac_bits;
        let out = acc.with_data(trunc_all(&acc.data, fw));
        let guarded = acc.with_data(trunc_all(&acc.data, fw - BN_GUARD_BITS));
        Ok((
            out,
            bn_affine(&guarded, bn, &self.codec, BN_GUARD_BITS, None, trunc_all)?,
        ))
    }

    fn silu(&mut self, x: &[R]) -> Result<Vec<R>> {
        Ok(self.map_real(x, silu_f64))
    }

    fn sigmoid(&mut self, x: &[R]) -> Result<Vec<R>> {
        Ok(self.map_real(x, sigmoid_f64))
    }

    fn maxpool(&mut self, x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Tensor> {
        let (steps, shape) = pool_candidates(x, size, stride, pad, pool_pad(&self.codec))?;
        let mut y = steps[0].clone();
        for cand in &steps[1..] {
            for (yv, &c) in y.iter_mut().zip(cand) {
                if yv.to_i128() < c.to_i128() {
                    *yv = c;
                }
            }
        }
        Tensor::new(shape, y)
    }

    fn mul_raw(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>> {
        same_len(x, y)?;
        Ok(x.iter().zip(y).map(|(&a, &b)| a * b).collect())
    }

    fn mul(&mut self, x: &[R], y: &[R]) -> Result<Vec<R>> {
        let f = self.codec.frac_bits;
        Ok(self.mul_raw(x, y)?.into_iter().map(|v| trunc_public(v, f)).collect())
    }

    fn less_than(&mut self, a: &[R], b: &[R]) -> Result<Vec<R>> {
        same_len(a, b)?;
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| R::from((x.to_i128() < y.to_i128()) as u64))
            .collect())
    }

    fn select(&mut self, bit: &[R], a: &[R], b: &[R]) -> Result<Vec<R>> {
        same_len(a, b)?;
        same_len(bit, a)?;
        Ok((0..a.len()).map(|i| a[i] + bit[i] * (b[i] - a[i])).collect())
    }

    fn divide(&mut self, v: &[R], u: &[R], zero_ok: bool) -> Result<Vec<R>> {
        same_len(v, u)?;
        v.iter()
            .zip(u)
            .map(|(&n, &d)| {
                if d == R::ZERO {
                    return if zero_ok {
                        Ok(R::ZERO)
                    } else {
                        Err(Error::DivisionByZero)
                    };
                }
                Ok(self
                    .codec
                    .encode_saturating(self.codec.decode(n) / self.codec.decode(d)))
            })
            .collect()
    }

    fn reveal(&mut self, _label: &str, x: &[R]) -> Result<Vec<R>> {
        Ok(x.to_vec())
    }

    fn argsort_desc(&mut self, x: &[R]) -> Result<Vec<usize>> {
        Ok(argsort_desc_public(x))
    }
}

/// Stable descending argsort of public signed values.
pub fn argsort_desc_public(x: &[R]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[j].to_i128().cmp(&x[i].to_i128()));
    idx
}
