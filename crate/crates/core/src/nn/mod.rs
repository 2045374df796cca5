//! Neural-network layers over field-encoded tensors.
//!
//! Weights, biases and normalization statistics are public to both
//! parties, so convolution and batch normalization are local. Activations
//! and pooling need interaction and live in [`layers`].

pub mod backend;
pub mod graph;
pub mod layers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::ring::RingElement;
use crate::sharing::{PartyId, SharedTensor};

pub use backend::{Backend, Plain};
pub use graph::{BlockGraph, GraphBuilder, NodeId, Op};

/// A `[C, H, W]` tensor of field elements: plaintext encodings in the
/// oracle, one party's shares in the secure path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 3],
    pub data: Vec<RingElement>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<RingElement>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Tensor {
            shape,
            data: vec![RingElement::ZERO; shape.iter().product()],
        }
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_data(&self, data: Vec<RingElement>) -> Tensor {
        Tensor {
            shape: self.shape,
            data,
        }
    }

    pub fn into_shared(self, party: PartyId) -> SharedTensor {
        SharedTensor::from_field(party, self.shape.to_vec(), self.data).expect("tensor shape is consistent")
    }

    pub fn from_shared(t: &SharedTensor) -> Result<Tensor> {
        let (c, h, w) = t.chw()?;
        Tensor::new([c, h, w], t.field()?.to_vec())
    }

    /// Concatenates along the channel axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let [_, h, w] = first.shape;
        let mut c = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1] != h || p.shape[2] != w {
                return Err(Error::Shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            c += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: [c, h, w], data })
    }
}

/// The three CBS variants: kernel and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CbsMode {
    /// 1x1, stride 1
    Cbs1,
    /// 3x3, stride 1
    Cbs2,
    /// 3x3, stride 2
    Cbs3,
}

impl CbsMode {
    pub fn kernel(self) -> usize {
        match self {
            CbsMode::Cbs1 => 1,
            CbsMode::Cbs2 | CbsMode::Cbs3 => 3,
        }
    }

    pub fn stride(self) -> usize {
        match self {
            CbsMode::Cbs3 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Row-major `[out][in][ky][kx]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let p = ConvParams {
            out_channels,
            in_channels,
            kernel,
            stride,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!((self.kernel, self.stride), (1, 1) | (3, 1) | (3, 2)) {
            return Err(Error::Shape(format!(
                "kernel {} with stride {} is not a CBS mode",
                self.kernel, self.stride
            )));
        }
        let expected = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "conv {}x{}x{k}x{k} needs {expected} weights and {} biases, got {} and {}",
                self.out_channels,
                self.in_channels,
                self.out_channels,
                self.weights.len(),
                self.bias.len(),
                k = self.kernel
            )));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let pad = self.padding();
        if h + 2 * pad < self.kernel || w + 2 * pad < self.kernel {
            return Err(Error::Shape(format!("input {h}x{w} is smaller than the kernel")));
        }
        Ok([
            self.out_channels,
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        ])
    }

    /// Weights at the weight scale and biases at scale `2^(f + fw)`.
    pub fn encode(&self, codec: &FixedPointCodec) -> Result<(Vec<RingElement>, Vec<RingElement>)> {
        let w = self
            .weights
            .iter()
            .map(|&v| codec.encode_weight(v))
            .collect::<Result<Vec<_>>>()?;
        let bias_scale = ((codec.frac_bits + codec.weight_frac_bits) as f64).exp2();
        let b = self
            .bias
            .iter()
            .map(|&v| {
                if !v.is_finite() {
                    return Err(Error::NonFinite(v));
                }
                Ok(RingElement::from_i128((v * bias_scale).round() as i128))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((w, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BNParams {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BNParams {
    pub fn identity(channels: usize) -> Self {
        BNParams {
            mean: vec![0.0; channels],
            var: vec![1.0 - 1e-5; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mean.len();
        if self.var.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::Shape("batch-norm parameter lengths differ".into()));
        }
        if self.var.iter().any(|&v| !(v + self.eps > 0.0)) {
            return Err(Error::Config(
                "batch-norm variance plus epsilon must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Per channel `(g, mu, beta)` with `g = gamma / sqrt(var + eps)`.
    pub fn affine(&self, codec: &FixedPointCodec) -> Result<Vec<(RingElement, RingElement, RingElement)>> {
        self.validate()?;
        (0..self.channels())
            .map(|c| {
                let g = self.gamma[c] / (self.var[c] + self.eps).sqrt();
                Ok((
                    codec.encode_weight(g)?,
                    codec.encode(self.mean[c])?,
                    codec.encode(self.beta[c])?,
                ))
            })
            .collect()
    }
}

/// Fractional bits a convolution keeps when a batch norm consumes it
/// directly, so the pair costs one full truncation instead of two.
pub const BN_GUARD_BITS: u32 = 12;

/// Batch norm on an input at scale `2^(f + guard)`: `g * (x - mu) + beta`
/// back at `2^f`, with the constants split by `party` and `trunc` applied once.
pub fn bn_affine(
    x: &Tensor,
    p: &BNParams,
    codec: &FixedPointCodec,
    guard: u32,
    party: Option<PartyId>,
    trunc: impl Fn(&[RingElement], u32) -> Vec<RingElement>,
) -> Result<Tensor> {
    let affine = p.affine(codec)?;
    if affine.len() != x.channels() {
        return Err(Error::Shape(format!(
            "batch norm has {} channels, input has {}",
            affine.len(),
            x.channels()
        )));
    }
    let plane = x.shape[1] * x.shape[2];
    let lift = RingElement::pow2(guard as i64);
    let mut data = Vec::with_capacity(x.len());
    for (c, &(g, mu, beta)) in affine.iter().enumerate() {
        let (mu_i, beta_i) = (half_split(mu, party) * lift, half_split(beta, party));
        let scaled: Vec<RingElement> = x.data[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| (v - mu_i) * g)
            .collect();
        data.extend(
            trunc(&scaled, codec.weight_frac_bits + guard)
                .into_iter()
                .map(|v| v + beta_i),
        );
    }
    Ok(x.with_data(data))
}

/// Splits a public constant between the parties: `floor(c / 2)` and the rest.
pub fn half_split(c: RingElement, party: Option<PartyId>) -> RingElement {
    let v = c.to_i128();
    let lo = v.div_euclid(2);
    match party {
        None => c,
        Some(PartyId::P1) => RingElement::from_i128(lo),
        Some(PartyId::P2) => RingElement::from_i128(v - lo),
    }
}

/// Convolution accumulation at scale `2^(f + fw)` with the bias added by
/// `bias_holder`. Padding is zero, which is also a valid share of zero.
pub fn conv_accumulate(
    x: &Tensor,
    p: &ConvParams,
    w: &[RingElement],
    b: &[RingElement],
    with_bias: bool,
) -> Result<Tensor> {
    p.validate()?;
    let out_shape = p.output_shape(x.shape)?;
    let [cin, h, wd] = x.shape;
    let [cout, oh, ow] = out_shape;
    let (k, s, pad) = (p.kernel, p.stride, p.padding() as isize);
    let mut out = vec![RingElement::ZERO; cout * oh * ow];
    for oc in 0..cout {
        let bias = if with_bias { b[oc] } else { RingElement::ZERO };
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias;
                for ic in 0..cin {
                    for ky in 0..k {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let wv = w[((oc * cin + ic) * k + ky) * k + kx];
                            acc += wv * x.data[(ic * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Pad value for pooling windows: the encoding of `-2^l`.
pub fn pool_pad(codec: &FixedPointCodec) -> RingElement {
    RingElement::from_i128(-(1i128 << (codec.int_bits + codec.frac_bits)))
}

/// Candidate values per pooling step: `out[j][window]` is the `j`-th
/// element of each window in row-major window order. `pad_value` fills
/// positions outside the input.
pub fn pool_candidates(
    x: &Tensor,
    size: usize,
    stride: usize,
    pad: usize,
    pad_value: RingElement,
) -> Result<(Vec<Vec<RingElement>>, [usize; 3])> {
    let [c, h, w] = x.shape;
    if size == 0 || stride == 0 || h + 2 * pad < size || w + 2 * pad < size {
        return Err(Error::Shape(format!(
            "pool window {size} stride {stride} does not fit {h}x{w}"
        )));
    }
    let oh = (h + 2 * pad - size) / stride + 1;
    let ow = (w + 2 * pad - size) / stride + 1;
    let mut steps = vec![Vec::with_capacity(c * oh * ow); size * size];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..size {
                    for dx in 0..size {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            pad_value
                        } else {
                            x.data[(ch * h + iy as usize) * w + ix as usize]
                        };
                        steps[dy * size + dx].push(v);
                    }
                }
            }
        }
    }
    Ok((steps, [c, oh, ow]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shapes() {
        let p = ConvParams::new(4, 2, 3, 2, vec![0.0; 72], vec![0.0; 4]).unwrap();
        assert_eq!(p.output_shape([2, 64, 64]).unwrap(), [4, 32, 32]);
        assert_eq!(p.output_shape([2, 7, 7]).unwrap(), [4, 4, 4]);
        assert!(p.output_shape([3, 8, 8]).is_err());
        assert!(ConvParams::new(4, 2, 5, 1, vec![0.0; 200], vec![0.0; 4]).is_err());
        assert!(ConvParams::new(4, 2, 1, 1, vec![0.0; 7], vec![0.0; 4]).is_err());
    }

    #[test]
    fn half_split_sums_back() {
        for v in [-7i128, -1, 0, 1, 8, 1 << 40] {
            let c = RingElement::from_i128(v);
            assert_eq!(half_split(c, Some(PartyId::P1)) + half_split(c, Some(PartyId::P2)), c);
        }
    }

    #[test]
    fn concat_and_mismatch() {
        let a = Tensor::zeros([2, 3, 3]);
        let b = Tensor::zeros([1, 3, 3]);
        assert_eq!(Tensor::concat(&[&a, &b]).unwrap().shape, [3, 3, 3]);
        assert!(Tensor::concat(&[&a, &Tensor::zeros([1, 2, 3])]).is_err());
    }

    #[test]
    fn pool_candidates_layout() {
        let x = Tensor::new([1, 2, 2], (1..=4u64).map(RingElement::from).collect()).unwrap();
        let (steps, shape) = pool_candidates(&x, 2, 2, 0, RingElement::ZERO).unwrap();
        assert_eq!(shape, [1, 1, 1]);
        let firsts: Vec<u128> = steps.iter().map(|s| s[0].value()).collect();
        assert_eq!(firsts, vec![1, 2, 3, 4]);
        let (steps, shape) = pool_candidates(&x, 3, 1, 1, RingElement::ZERO).unwrap();
        assert_eq!(shape, [1, 2, 2]);
        assert_eq!(steps.len(), 9);
    }
}
