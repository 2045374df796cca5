//! Cost and wall-time rows for single protocols, multiplication engines and
//! the stages of a full inference.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::{account, run_on_shares, run_protocol, DealerSource, ProtocolKind, SessionConfig};
use crate::ring::{RingElement, ELEMENT_BYTES};
use crate::sharing::{mul_grr, shamir_reconstruct, shamir_share};
use crate::transport::SessionTranscript;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub protocol: String,
    pub n: u64,
    pub wall_ms: f64,
    pub rounds: u64,
    pub messages: u64,
    pub elements: u64,
    pub bytes: u64,
    pub model_rounds: Option<f64>,
    pub model_overhead: Option<f64>,
}

pub fn bench_protocol(kind: ProtocolKind, n: usize, cfg: &SessionConfig, seed: u64) -> Result<BenchRow> {
    let run = run_protocol(kind, n, cfg, seed)?;
    let size = if kind == ProtocolKind::MaxPool { 3 } else { n as u64 };
    let row = account(kind, size, &run.transcript);
    Ok(BenchRow {
        protocol: row.protocol,
        n: n as u64,
        wall_ms: run.elapsed.as_secs_f64() * 1e3,
        rounds: row.rounds,
        messages: row.messages,
        elements: row.elements,
        bytes: row.bytes,
        model_rounds: row.model_rounds,
        model_overhead: row.model_overhead,
    })
}

fn random_pairs(n: usize, seed: u64) -> (Vec<RingElement>, Vec<RingElement>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (RingElement::random(&mut rng), RingElement::random(&mut rng)))
        .unzip()
}

/// `n` two-party Beaver multiplications; returns the products too.
pub fn bench_beaver_mul(n: usize, cfg: &SessionConfig, seed: u64) -> Result<(BenchRow, Vec<RingElement>)> {
    let (x, y) = random_pairs(n, seed);
    let start = Instant::now();
    let (out, t) = run_on_shares(cfg, DealerSource::Stream(seed), seed ^ 1, &[x, y], |p, v| {
        p.mul_raw(&v[0], &v[1])
    })?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((
        BenchRow {
            protocol: "mul_beaver".into(),
            n: n as u64,
            wall_ms,
            rounds: t.total_rounds(),
            messages: t.p1.total.messages_sent + t.p2.total.messages_sent,
            elements: t.p1.total.elements_sent + t.p2.total.elements_sent,
            bytes: t.total_bytes(),
            model_rounds: None,
            model_overhead: None,
        },
        out,
    ))
}

/// `n` three-party GRR multiplications (threshold 1), simulated in process.
/// Each party sends one sub-share to each of the other two in one round.
pub fn bench_grr_mul(n: usize, seed: u64) -> Result<(BenchRow, Vec<RingElement>)> {
    let (x, y) = random_pairs(n, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 2);
    let start = Instant::now();
    let mut out = Vec::with_capacity(n);
    for (a, b) in x.iter().zip(&y) {
        let sa = shamir_share(*a, 1, 3, &mut rng)?;
        let sb = shamir_share(*b, 1, 3, &mut rng)?;
        out.push(shamir_reconstruct(&mul_grr(&sa, &sb, 1, &mut rng)?)?);
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let elements = 6 * n as u64;
    Ok((
        BenchRow {
            protocol: "mul_grr".into(),
            n: n as u64,
            wall_ms,
            rounds: 1,
            messages: 6,
            elements,
            bytes: elements * ELEMENT_BYTES as u64,
            model_rounds: None,
            model_overhead: None,
        },
        out,
    ))
}

/// One row per transcript scope of an inference, with the stage wall times
/// attached to the matching coarse scopes.
pub fn stage_rows(t: &SessionTranscript, timings: &[(String, f64)]) -> Vec<BenchRow> {
    t.p1.protocols
        .keys()
        .map(|s| {
            let wall_ms = timings
                .iter()
                .find(|(n, _)| s == n || *s == format!("sec_{n}"))
                .map_or(0.0, |x| x.1);
            BenchRow {
                protocol: s.to_string(),
                n: 1,
                wall_ms,
                rounds: t.rounds(s),
                messages: t.messages(s),
                elements: t.elements(s),
                bytes: t.bytes(s),
                model_rounds: None,
                model_overhead: None,
            }
        })
        .collect()
}

/// Log-spaced sizes from `lo` to `hi` inclusive, `per_decade` per factor ten.
pub fn sizes(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (a, b) = ((lo as f64).log10(), (hi as f64).log10());
    let steps = ((b - a) * per_decade as f64).round() as usize;
    for i in 0..=steps {
        let v = 10f64.powf(a + (b - a) * i as f64 / steps.max(1) as f64).round() as usize;
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Random seed for ad hoc runs.
pub fn fresh_seed() -> u64 {
    rand::thread_rng().gen()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engines_agree_on_products() {
        let (bv, a) = bench_beaver_mul(200, &SessionConfig::default(), 3).unwrap();
        let (gr, b) = bench_grr_mul(200, 3).unwrap();
        let (x, y) = random_pairs(200, 3);
        let expected: Vec<_> = x.iter().zip(&y).map(|(a, b)| *a * *b).collect();
        assert_eq!(a, expected);
        assert_eq!(b, expected);
        assert_eq!(bv.rounds, 1);
        assert_eq!(bv.elements, 4 * 200);
        assert_eq!(gr.elements, 6 * 200);
    }

    #[test]
    fn protocol_rows() {
        let row = bench_protocol(ProtocolKind::Ds, 50, &SessionConfig::default(), 1).unwrap();
        assert_eq!((row.rounds, row.elements), (1, 100));
        assert_eq!(row.model_overhead, Some(100.0));
    }

    #[test]
    fn size_ladder() {
        assert_eq!(sizes(1000, 100_000, 1), vec![1000, 10_000, 100_000]);
        assert_eq!(sizes(10, 10, 3), vec![10]);
    }
}
