//! Shamir threshold sharing over the field and GRR degree-reduction
//! multiplication, simulated in-process for `n` parties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::RingElement;

/// The evaluation `f(index)` of a degree-`threshold` polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShamirShare {
    pub index: u64,
    pub value: RingElement,
    pub threshold: usize,
}

fn eval(coeffs: &[RingElement], x: RingElement) -> RingElement {
    coeffs.iter().rev().fold(RingElement::ZERO, |acc, &c| acc * x + c)
}

/// Shares `x` at indices `1..=n` with a random polynomial of degree `t`.
pub fn shamir_share<R: Rng + ?Sized>(x: RingElement, t: usize, n: usize, rng: &mut R) -> Result<Vec<ShamirShare>> {
    if n < t + 1 {
        return Err(Error::InsufficientShares { needed: t + 1, got: n });
    }
    let mut coeffs = Vec::with_capacity(t + 1);
    coeffs.push(x);
    coeffs.extend((0..t).map(|_| RingElement::random(rng)));
    Ok((1..=n as u64)
        .map(|i| ShamirShare {
            index: i,
            value: eval(&coeffs, RingElement::from(i)),
            threshold: t,
        })
        .collect())
}

/// Lagrange coefficients at zero for the given distinct indices.
pub fn lagrange_at_zero(indices: &[u64]) -> Result<Vec<RingElement>> {
    indices
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut num = RingElement::ONE;
            let mut den = RingElement::ONE;
            for (j, &xj) in indices.iter().enumerate() {
                if i == j {
                    continue;
                }
                if xi == xj {
                    return Err(Error::Protocol(format!("duplicate share index {xi}")));
                }
                num *= RingElement::from(xj);
                den *= RingElement::from(xj) - RingElement::from(xi);
            }
            Ok(num * den.inverse().expect("distinct indices give a nonzero denominator"))
        })
        .collect()
}

/// Interpolates `f(0)` from the first `t + 1` shares.
pub fn shamir_reconstruct(shares: &[ShamirShare]) -> Result<RingElement> {
    let t = shares.first().map(|s| s.threshold).unwrap_or(0);
    if shares.len() < t + 1 {
        return Err(Error::InsufficientShares {
            needed: t + 1,
            got: shares.len(),
        });
    }
    let used = &shares[..t + 1];
    let indices: Vec<u64> = used.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(&indices)?;
    Ok(used.iter().zip(lambdas).map(|(s, l)| s.value * l).sum())
}

/// GRR multiplication: each party multiplies its shares locally (degree
/// `2t`), re-shares the product with degree `t`, and every party combines
/// the sub-shares it received with the Lagrange coefficients at zero.
pub fn mul_grr<R: Rng + ?Sized>(
    x: &[ShamirShare],
    y: &[ShamirShare],
    t: usize,
    rng: &mut R,
) -> Result<Vec<ShamirShare>> {
    let n = x.len();
    if n < 2 * t + 1 {
        return Err(Error::InsufficientParties {
            threshold: t,
            parties: n,
        });
    }
    if y.len() != n || x.iter().zip(y).any(|(a, b)| a.index != b.index) {
        return Err(Error::Protocol("operands are shared at different indices".into()));
    }
    let indices: Vec<u64> = x.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(&indices)?;
    // resharing[i][j]: sub-share from party i to party j.
    let mut resharing = Vec::with_capacity(n);
    for (a, b) in x.iter().zip(y) {
        let sub = shamir_share(a.value * b.value, t, n, rng)?;
        resharing.push(sub);
    }
    Ok((0..n)
        .map(|j| ShamirShare {
            index: indices[j],
            value: (0..n).map(|i| lambdas[i] * resharing[i][j].value).sum(),
            threshold: t,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_uniform_p;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(21)
    }

    #[test]
    fn any_two_of_three() {
        let mut rng = rng();
        let x = RingElement::from(7u64);
        let shares = shamir_share(x, 1, 3, &mut rng).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2), (2, 0)] {
            assert_eq!(shamir_reconstruct(&[shares[i], shares[j]]).unwrap(), x);
        }
    }

    #[test]
    fn constant_polynomial() {
        let mut rng = rng();
        let x = RingElement::from(99u64);
        let shares = shamir_share(x, 0, 4, &mut rng).unwrap();
        assert!(shares.iter().all(|s| s.value == x));
    }

    #[test]
    fn too_few_shares() {
        let mut rng = rng();
        let shares = shamir_share(RingElement::ONE, 2, 5, &mut rng).unwrap();
        assert!(matches!(
            shamir_reconstruct(&shares[..2]),
            Err(Error::InsufficientShares { needed: 3, got: 2 })
        ));
        assert!(shamir_share(RingElement::ONE, 3, 2, &mut rng).is_err());
    }

    #[test]
    fn single_share_is_uniform() {
        let mut rng = rng();
        let mut counts = vec![0u64; 16];
        let x = RingElement::from(5u64);
        for _ in 0..10_000 {
            let s = shamir_share(x, 1, 3, &mut rng).unwrap();
            counts[(s[1].value.value() >> 123) as usize] += 1;
        }
        assert!(chi_square_uniform_p(&counts) > 0.01);
    }

    #[test]
    fn grr_examples() {
        let mut rng = rng();
        let share = |v: u64, rng: &mut ChaCha20Rng| shamir_share(RingElement::from(v), 1, 3, rng).unwrap();
        let (x, y) = (share(5, &mut rng), share(6, &mut rng));
        let z = mul_grr(&x, &y, 1, &mut rng).unwrap();
        assert_eq!(shamir_reconstruct(&z).unwrap().value(), 30);
        assert_eq!(shamir_reconstruct(&[z[1], z[2]]).unwrap().value(), 30);

        let x = share(1234, &mut rng);
        let one = share(1, &mut rng);
        let z = mul_grr(&x, &one, 1, &mut rng).unwrap();
        assert_eq!(shamir_reconstruct(&z).unwrap().value(), 1234);
    }

    #[test]
    fn grr_output_has_degree_t() {
        let mut rng = rng();
        let x = shamir_share(RingElement::from(3u64), 1, 3, &mut rng).unwrap();
        let y = shamir_share(RingElement::from(4u64), 1, 3, &mut rng).unwrap();
        let z = mul_grr(&x, &y, 1, &mut rng).unwrap();
        // All three points lie on one line: every pair interpolates to the same f(0).
        let a = shamir_reconstruct(&[z[0], z[1]]).unwrap();
        let b = shamir_reconstruct(&[z[0], z[2]]).unwrap();
        let c = shamir_reconstruct(&[z[1], z[2]]).unwrap();
        assert_eq!((a, b), (c, c));
    }

    #[test]
    fn grr_needs_honest_majority_size() {
        let mut rng = rng();
        let x = shamir_share(RingElement::ONE, 1, 2, &mut rng).unwrap();
        assert!(matches!(
            mul_grr(&x, &x, 1, &mut rng),
            Err(Error::InsufficientParties {
                threshold: 1,
                parties: 2
            })
        ));
    }
}
