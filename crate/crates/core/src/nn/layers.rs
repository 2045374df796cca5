//! Secure layers on one party's shares.

use super::{bn_affine, conv_accumulate, pool_candidates, pool_pad, BNParams, ConvParams, Tensor, BN_GUARD_BITS};
use crate::error::Result;
use crate::party::Party;
use crate::protocols::ACTIVATION_BOUND;
use crate::ring::RingElement;
use crate::sharing::{PartyId, SharedTensor};

impl Party {
    /// Local convolution of this party's share; party 1 adds the bias.
    pub fn conv_tensor(&mut self, x: &Tensor, p: &ConvParams) -> Result<Tensor> {
        self.scoped("sec_conv", |party| {
            let codec = *party.codec();
            let (w, b) = p.encode(&codec)?;
            let acc = conv_accumulate(x, p, &w, &b, party.id() == PartyId::P1)?;
            let data = party.trunc(&acc.data, codec.weight_frac_bits);
            Ok(acc.with_data(data))
        })
    }

    pub fn sec_conv(&mut self, x: &SharedTensor, p: &ConvParams) -> Result<SharedTensor> {
        let out = self.conv_tensor(&Tensor::from_shared(x)?, p)?;
        Ok(out.into_shared(self.id()))
    }

    /// Local normalization: party `i` computes `g * (x_i - mu_i) + beta_i`
    /// where `mu_1 + mu_2 = mu` and `beta_1 + beta_2 = beta`.
    pub fn bn_tensor(&mut self, x: &Tensor, p: &BNParams) -> Result<Tensor> {
        self.scoped("sec_bn", |party| {
            let codec = *party.codec();
            bn_affine(x, p, &codec, 0, Some(party.id()), |v, s| party.trunc(v, s))
        })
    }

    /// Convolution followed by batch norm. The convolution output handed to
    /// the normalization keeps guard bits; the first tensor is the
    /// convolution at the usual scale.
    pub fn conv_bn_tensor(&mut self, x: &Tensor, conv: &ConvParams, bn: &BNParams) -> Result<(Tensor, Tensor)> {
        let (out, guarded) = self.scoped("sec_conv", |party| {
            let codec = *party.codec();
            let (w, b) = conv.encode(&codec)?;
            let acc = conv_accumulate(x, conv, &w, &b, party.id() == PartyId::P1)?;
            let fw = codec.weight_frac_bits;
            Ok((
                acc.with_data(party.trunc(&acc.data, fw)),
                acc.with_data(party.trunc(&acc.data, fw - BN_GUARD_BITS)),
            ))
        })?;
        let normed = self.scoped("sec_bn", |party| {
            let codec = *party.codec();
            bn_affine(&guarded, bn, &codec, BN_GUARD_BITS, Some(party.id()), |v, s| {
                party.trunc(v, s)
            })
        })?;
        Ok((out, normed))
    }

    pub fn sec_conv_bn(&mut self, x: &SharedTensor, conv: &ConvParams, bn: &BNParams) -> Result<SharedTensor> {
        let (_, out) = self.conv_bn_tensor(&Tensor::from_shared(x)?, conv, bn)?;
        Ok(out.into_shared(self.id()))
    }

    pub fn sec_bn(&mut self, x: &SharedTensor, p: &BNParams) -> Result<SharedTensor> {
        let out = self.bn_tensor(&Tensor::from_shared(x)?, p)?;
        Ok(out.into_shared(self.id()))
    }

    /// `x / (1 + e^(-x))` with the exponent argument clamped to `[-16, 16]`.
    pub fn silu(&mut self, x: &[RingElement]) -> Result<Vec<RingElement>> {
        self.scoped("sec_silu", |p| {
            let den = p.logistic_denominator(x)?;
            p.sec_divi(x, &den)
        })
    }

    /// `1 / (1 + e^(-x))`: the SiLU pipeline with numerator shares `(1, 0)`.
    pub fn sigmoid(&mut self, x: &[RingElement]) -> Result<Vec<RingElement>> {
        self.scoped("sec_sigmoid", |p| {
            let den = p.logistic_denominator(x)?;
            let one = p.constant(p.codec().encode(1.0)?);
            p.sec_divi(&vec![one; x.len()], &den)
        })
    }

    fn logistic_denominator(&mut self, x: &[RingElement]) -> Result<Vec<RingElement>> {
        let xc = self.clamp(x, -ACTIVATION_BOUND, ACTIVATION_BOUND)?;
        let neg: Vec<RingElement> = xc.iter().map(|&v| -v).collect();
        let e = self.sec_exp(&neg)?;
        let one = self.codec().encode(1.0)?;
        Ok(self.add_constant(&e, one))
    }

    pub fn sec_silu(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let t = Tensor::from_shared(x)?;
        let y = self.silu(&t.data)?;
        Ok(t.with_data(y).into_shared(self.id()))
    }

    pub fn sec_sigmoid(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let t = Tensor::from_shared(x)?;
        let y = self.sigmoid(&t.data)?;
        Ok(t.with_data(y).into_shared(self.id()))
    }

    /// Max pooling by a sequential scan per window; every window advances
    /// in the same round. Ties keep the earlier element.
    pub fn maxpool_tensor(&mut self, x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Tensor> {
        self.scoped("sec_maxpool", |p| {
            let pad_value = p.constant(pool_pad(p.codec()));
            let (steps, shape) = pool_candidates(x, size, stride, pad, pad_value)?;
            let mut y = steps[0].clone();
            for cand in &steps[1..] {
                let f = p.sec_comp(&y, cand)?;
                y = p.select(&f, &y, cand)?;
                p.add_steps(1);
            }
            Tensor::new(shape, y)
        })
    }

    /// `n x n` pooling with stride `n`; ragged edges are padded with `-2^l`.
    pub fn sec_maxpool(&mut self, x: &SharedTensor, n: usize) -> Result<SharedTensor> {
        let t = pad_to_multiple(&Tensor::from_shared(x)?, n, self.constant(pool_pad(self.codec())));
        let out = self.maxpool_tensor(&t, n, n, 0)?;
        Ok(out.into_shared(self.id()))
    }
}

/// Pads height and width up to a multiple of `n` at the bottom and right.
pub fn pad_to_multiple(x: &Tensor, n: usize, value: RingElement) -> Tensor {
    let [c, h, w] = x.shape;
    let (nh, nw) = (h.div_ceil(n) * n, w.div_ceil(n) * n);
    if (nh, nw) == (h, w) {
        return x.clone();
    }
    let mut data = vec![value; c * nh * nw];
    for ch in 0..c {
        for y in 0..h {
            let src = (ch * h + y) * w;
            let dst = (ch * nh + y) * nw;
            data[dst..dst + w].copy_from_slice(&x.data[src..src + w]);
        }
    }
    Tensor {
        shape: [c, nh, nw],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedPointCodec;
    use crate::harness::{run_on_shares, DealerSource, SessionConfig};
    use crate::nn::{Backend, Plain};
    use crate::transport::SessionTranscript;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::default()
    }

    fn tensor(shape: [usize; 3], xs: &[f64]) -> Tensor {
        Tensor::new(shape, codec().encode_slice(xs).unwrap()).unwrap()
    }

    fn secure<F>(x: &Tensor, op: F) -> (Vec<f64>, SessionTranscript)
    where
        F: Fn(&mut Party, Tensor) -> Result<Tensor> + Sync,
    {
        let shape = x.shape;
        let (z, t) = run_on_shares(
            &SessionConfig::default(),
            DealerSource::Stream(9),
            4,
            &[x.data.clone()],
            |p, mut v| {
                let share = Tensor::new(shape, v.remove(0))?;
                Ok(op(p, share)?.data)
            },
        )
        .unwrap();
        (codec().decode_slice(&z), t)
    }

    fn random_values(n: usize, bound: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    }

    #[test]
    fn conv_identity_and_constant() {
        let xs = random_values(32, 4.0, 1);
        let x = tensor([2, 4, 4], &xs);
        let id = ConvParams::new(2, 2, 1, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let (y, t) = secure(&x, |p, s| p.conv_tensor(&s, &id));
        for (a, b) in y.iter().zip(codec().decode_slice(&x.data)) {
            assert!((a - b).abs() <= codec().ulp());
        }
        assert_eq!(t.messages("sec_conv"), 0);
        let constant = ConvParams::new(1, 2, 3, 1, vec![0.0; 18], vec![2.5]).unwrap();
        let (y, _) = secure(&x, |p, s| p.conv_tensor(&s, &constant));
        assert!(y.iter().all(|&v| (v - 2.5).abs() <= codec().ulp()));
    }

    #[test]
    fn conv_matches_plain_within_kernel_ulps() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = ConvParams::new(
            1,
            1,
            3,
            1,
            (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            vec![0.3],
        )
        .unwrap();
        let x = tensor([1, 8, 8], &random_values(64, 8.0, 3));
        let want = Plain::new(codec()).conv(&x, &p).unwrap();
        let (got, _) = secure(&x, |party, s| party.conv_tensor(&s, &p));
        for (g, w) in got.iter().zip(codec().decode_slice(&want.data)) {
            assert!((g - w).abs() <= 9.0 * codec().ulp(), "{g} vs {w}");
        }
    }

    #[test]
    fn bn_examples_without_messages() {
        let identity = BNParams {
            mean: vec![0.0],
            var: vec![1.0 - 1e-5],
            gamma: vec![1.0],
            beta: vec![0.0],
            eps: 1e-5,
        };
        let xs = random_values(16, 10.0, 4);
        let x = tensor([1, 4, 4], &xs);
        let (y, t) = secure(&x, |p, s| p.bn_tensor(&s, &identity));
        for (a, b) in y.iter().zip(codec().decode_slice(&x.data)) {
            assert!((a - b).abs() <= 2.0 * codec().ulp());
        }
        assert_eq!(t.messages("sec_bn"), 0);
        assert_eq!(t.total_rounds(), 0);

        let p = BNParams {
            mean: vec![1.25],
            var: vec![0.7],
            gamma: vec![1.3],
            beta: vec![-0.4],
            eps: 1e-5,
        };
        let centered = tensor([1, 2, 2], &[1.25; 4]);
        let (y, _) = secure(&centered, |party, s| party.bn_tensor(&s, &p));
        assert!(y.iter().all(|&v| (v + 0.4).abs() <= 2.0 * codec().ulp()));
    }

    #[test]
    fn bn_random_against_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let p = BNParams {
            mean: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            var: vec![rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
            gamma: vec![rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)],
            beta: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            eps: 1e-5,
        };
        let xs = random_values(10_000, 20.0, 6);
        let x = tensor([2, 50, 100], &xs);
        let xq = codec().decode_slice(&x.data);
        let (y, _) = secure(&x, |party, s| party.bn_tensor(&s, &p));
        for (i, (&g, &xv)) in y.iter().zip(&xq).enumerate() {
            let c = i / 5000;
            let want = p.gamma[c] * (xv - p.mean[c]) / (p.var[c] + p.eps).sqrt() + p.beta[c];
            assert!((g - want).abs() <= 1e-4, "{g} vs {want}");
        }
    }

    #[test]
    fn silu_and_sigmoid_examples() {
        let x = tensor([1, 1, 3], &[0.0, 1.0, -8.0]);
        let (y, t) = secure(&x, |p, s| Ok(s.with_data(p.silu(&s.data)?)));
        assert!(y[0].abs() <= 5e-4);
        assert!((y[1] - 0.731_058_578_6).abs() <= 5e-4);
        assert!((y[2] + 0.002_683_701_2).abs() <= 5e-4);
        assert!(t.rounds("sec_silu") > 0);
        let x = tensor([1, 1, 3], &[0.0, 16.0, 2.0]);
        let (y, _) = secure(&x, |p, s| Ok(s.with_data(p.sigmoid(&s.data)?)));
        assert!((y[0] - 0.5).abs() <= 5e-4);
        assert!((y[1] - 1.0).abs() <= 1e-3);
        assert!((y[2] - 0.880_797_077_9).abs() <= 5e-4);
    }

    #[test]
    fn maxpool_examples_and_ties() {
        let x = tensor([2, 2, 2], &[1.0, 5.0, 3.0, 2.0, 4.0, 4.0, 4.0, 4.0]);
        let (y, t) = secure(&x, |p, s| p.maxpool_tensor(&s, 2, 2, 0));
        assert_eq!(y, vec![5.0, 4.0]);
        assert_eq!(t.p1.protocol("sec_maxpool").steps, 3);
        assert_eq!(t.rounds("sec_maxpool"), 3 * 4);
    }

    #[test]
    fn maxpool_pads_ragged_edges() {
        let x = tensor([1, 3, 3], &[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0, -8.0, -9.0]);
        let (y, _) = secure(&x, |p, s| {
            let pad = p.constant(pool_pad(p.codec()));
            p.maxpool_tensor(&pad_to_multiple(&s, 2, pad), 2, 2, 0)
        });
        assert_eq!(y, vec![-1.0, -3.0, -7.0, -9.0]);
    }

    #[test]
    fn shared_tensor_wrappers() {
        let x = tensor([1, 2, 2], &[0.5, -0.5, 1.5, 3.0]);
        let (y, _) = secure(&x, |p, s| {
            let st = s.into_shared(p.id());
            let z = p.sec_maxpool(&st, 2)?;
            Tensor::from_shared(&z)
        });
        assert_eq!(y, vec![3.0]);
    }
}
