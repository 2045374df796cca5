//! Named single-protocol programs for benchmarks, transport checks and
//! accounting against closed-form round and overhead formulas.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{run_on_shares, DealerSource, SessionConfig};
use crate::detect::{sec_bbpred, sec_nms, AnchorConfig, BoxSet, HeadParams};
use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::nn::{BNParams, ConvParams, Tensor};
use crate::party::Party;
use crate::ring::RingElement;
use crate::transport::SessionTranscript;

type R = RingElement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Reconstruct,
    Exp,
    Divi,
    Comp,
    Silu,
    Sigmoid,
    MaxPool,
    Conv,
    Bn,
    Ds,
    Nms,
    BBPred,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 12] = [
        ProtocolKind::Reconstruct,
        ProtocolKind::Exp,
        ProtocolKind::Divi,
        ProtocolKind::Comp,
        ProtocolKind::Silu,
        ProtocolKind::Sigmoid,
        ProtocolKind::MaxPool,
        ProtocolKind::Conv,
        ProtocolKind::Bn,
        ProtocolKind::Ds,
        ProtocolKind::Nms,
        ProtocolKind::BBPred,
    ];

    /// Element-wise protocols whose traffic is linear in the input length.
    pub const ELEMENTWISE: [ProtocolKind; 4] = [
        ProtocolKind::Exp,
        ProtocolKind::Comp,
        ProtocolKind::Silu,
        ProtocolKind::Sigmoid,
    ];

    /// Transcript scope the protocol is charged to.
    pub fn scope(self) -> &'static str {
        match self {
            ProtocolKind::Reconstruct => "reconstruct",
            ProtocolKind::Exp => "sec_exp",
            ProtocolKind::Divi => "sec_divi",
            ProtocolKind::Comp => "sec_comp",
            ProtocolKind::Silu => "sec_silu",
            ProtocolKind::Sigmoid => "sec_sigmoid",
            ProtocolKind::MaxPool => "sec_maxpool",
            ProtocolKind::Conv => "sec_conv",
            ProtocolKind::Bn => "sec_bn",
            ProtocolKind::Ds => "sec_ds",
            ProtocolKind::Nms => "sec_nms",
            ProtocolKind::BBPred => "sec_bbpred",
        }
    }

    pub fn parse(name: &str) -> Result<ProtocolKind> {
        let key = name.trim().to_ascii_lowercase();
        let key = key.strip_prefix("sec_").unwrap_or(&key);
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.scope().trim_start_matches("sec_") == key)
            .ok_or_else(|| Error::Config(format!("unknown protocol `{name}`")))
    }

    /// Expected `(rounds, overhead)` for input size `n`. Max pooling takes
    /// the window side as `n`.
    pub fn cost_formula(self, n: u64) -> Option<(f64, f64)> {
        let n = n as f64;
        Some(match self {
            ProtocolKind::Exp => (4.0, 6.0),
            ProtocolKind::Divi => (4.0, (7.0 * n - 7.0) / 2.0),
            ProtocolKind::Comp => (8.0, 16.0),
            ProtocolKind::Conv => ((n - 1.0) / 2.0, (2.0 * n - 1.0) / 2.0),
            ProtocolKind::Bn => (0.0, 0.0),
            ProtocolKind::Silu | ProtocolKind::Sigmoid => (10.0, 16.0 * n - 8.0),
            ProtocolKind::MaxPool => (n * n - 1.0, 4.0 * n * n - 4.0),
            ProtocolKind::BBPred => (10.0, 6.0 * n + 18.0),
            ProtocolKind::Ds => (1.0, 2.0 * n),
            ProtocolKind::Nms => (5.0, 3.0 * n - 1.0),
            ProtocolKind::Reconstruct => return None,
        })
    }

    /// Seeded plaintext inputs of size `n`, already encoded.
    pub fn inputs(self, n: usize, codec: &FixedPointCodec, seed: u64) -> Result<Vec<Vec<R>>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut uniform = |lo: f64, hi: f64, m: usize| -> Result<Vec<R>> {
            (0..m).map(|_| codec.encode(rng.gen_range(lo..hi))).collect()
        };
        Ok(match self {
            ProtocolKind::Reconstruct | ProtocolKind::Ds => vec![uniform(-100.0, 100.0, n)?],
            ProtocolKind::Exp | ProtocolKind::Silu | ProtocolKind::Sigmoid => {
                vec![uniform(-8.0, 8.0, n)?]
            }
            ProtocolKind::Divi => vec![uniform(-10.0, 10.0, n)?, uniform(0.5, 10.0, n)?],
            ProtocolKind::Comp => vec![uniform(-100.0, 100.0, n)?, uniform(-100.0, 100.0, n)?],
            ProtocolKind::MaxPool => vec![uniform(-100.0, 100.0, 4 * n)?],
            ProtocolKind::Conv | ProtocolKind::Bn => vec![uniform(-10.0, 10.0, n)?],
            ProtocolKind::Nms => {
                let (boxes, scores) = clustered_scene(n, 4, seed);
                let mut cols: Vec<Vec<R>> = (0..4)
                    .map(|c| codec.encode_slice(&boxes.iter().map(|b| b[c]).collect::<Vec<_>>()))
                    .collect::<Result<_>>()?;
                cols.push(codec.encode_slice(&scores)?);
                cols
            }
            ProtocolKind::BBPred => vec![
                uniform(-2.0, 2.0, 4 * 4 * 4)?,
                uniform(4.0, 48.0, n)?,
                uniform(4.0, 48.0, n)?,
            ],
        })
    }

    /// The protocol on one party's shares of [`ProtocolKind::inputs`].
    pub fn run(self, p: &mut Party, mut x: Vec<Vec<R>>) -> Result<Vec<R>> {
        let n = x[0].len();
        match self {
            ProtocolKind::Reconstruct => {
                let opened = p.scoped("reconstruct", |p| p.open("reconstruct", &x[0]))?;
                Ok(opened.into_iter().map(|v| p.constant(v)).collect())
            }
            ProtocolKind::Exp => p.sec_exp(&x[0]),
            ProtocolKind::Divi => p.sec_divi(&x[0], &x[1]),
            ProtocolKind::Comp => p.sec_comp(&x[0], &x[1]),
            ProtocolKind::Silu => p.silu(&x[0]),
            ProtocolKind::Sigmoid => p.sigmoid(&x[0]),
            ProtocolKind::MaxPool => {
                let t = Tensor::new([1, 2, 2 * (n / 4)], x.remove(0))?;
                Ok(p.maxpool_tensor(&t, 2, 2, 0)?.data)
            }
            ProtocolKind::Conv => {
                let t = Tensor::new([1, 1, n], x.remove(0))?;
                Ok(p.conv_tensor(&t, &bench_conv())?.data)
            }
            ProtocolKind::Bn => {
                let t = Tensor::new([1, 1, n], x.remove(0))?;
                Ok(p.bn_tensor(&t, &bench_bn())?.data)
            }
            ProtocolKind::Ds => {
                let order = p.sec_ds(&x[0])?;
                Ok(order.into_iter().map(|i| p.constant(R::from(i as u64))).collect())
            }
            ProtocolKind::Nms => {
                let set = BoxSet::from_columns(&x[0], &x[1], &x[2], &x[3], &x[4])?;
                let out = sec_nms(p, &set, 0.5)?;
                Ok(out.kept.into_iter().map(|i| p.constant(R::from(i as u64))).collect())
            }
            ProtocolKind::BBPred => {
                let feats = Tensor::new([4, 4, 4], x[0].clone())?;
                let cfg = AnchorConfig {
                    clusters: 3,
                    iterations: 3,
                };
                let k = cfg.clusters.min(x[1].len());
                let cfg = AnchorConfig { clusters: k, ..cfg };
                let head = bench_head(k);
                let init = (x[1][..k].to_vec(), x[2][..k].to_vec());
                let out = sec_bbpred(p, &feats, &head, (&x[1], &x[2]), (&init.0, &init.1), &cfg)?;
                Ok(out.boxes.columns().concat())
            }
        }
    }
}

fn bench_conv() -> ConvParams {
    ConvParams::new(1, 1, 1, 1, vec![0.75], vec![0.125]).expect("valid 1x1 kernel")
}

fn bench_bn() -> BNParams {
    BNParams {
        mean: vec![0.25],
        var: vec![1.5],
        gamma: vec![0.9],
        beta: vec![-0.1],
        eps: 1e-5,
    }
}

fn bench_head(anchors: usize) -> HeadParams {
    let out = anchors * 7;
    HeadParams {
        conv: ConvParams::new(
            out,
            4,
            1,
            1,
            (0..out * 4).map(|i| ((i % 9) as f64 - 4.0) / 8.0).collect(),
            vec![0.0; out],
        )
        .expect("valid head"),
        bn: BNParams::identity(out),
        anchors,
        classes: 2,
        stride: 8,
    }
}

/// `n` boxes in `clusters` well-separated groups of near-identical boxes.
/// Suppression keeps exactly one box per group.
pub fn clustered_scene(n: usize, clusters: usize, seed: u64) -> (Vec<[f64; 4]>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let q = |v: f64| (v * 1024.0).round() / 1024.0;
    let boxes = (0..n)
        .map(|i| {
            let g = (i % clusters.max(1)) as f64;
            let (cx, cy) = (
                100.0 + 200.0 * g + rng.gen_range(-1.0..1.0),
                100.0 + rng.gen_range(-1.0..1.0),
            );
            let (w, h) = (40.0 + rng.gen_range(-1.0..1.0), 40.0 + rng.gen_range(-1.0..1.0));
            [q(cx - w / 2.0), q(cy - h / 2.0), q(cx + w / 2.0), q(cy + h / 2.0)]
        })
        .collect();
    let scores = (0..n).map(|_| q(rng.gen_range(0.0..1.0))).collect();
    (boxes, scores)
}

/// Output, transcript and wall time of one protocol run.
pub struct ProtocolRun {
    pub output: Vec<R>,
    pub transcript: SessionTranscript,
    pub elapsed: Duration,
}

pub fn run_protocol(kind: ProtocolKind, n: usize, cfg: &SessionConfig, seed: u64) -> Result<ProtocolRun> {
    let inputs = kind.inputs(n, &cfg.codec, seed)?;
    let start = Instant::now();
    let (output, transcript) = run_on_shares(cfg, DealerSource::Stream(seed), seed ^ 0x5eed, &inputs, |p, x| {
        kind.run(p, x)
    })?;
    Ok(ProtocolRun {
        output,
        transcript,
        elapsed: start.elapsed(),
    })
}

/// Measured cost of one run beside its closed-form cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRow {
    pub protocol: String,
    pub n: u64,
    /// Rounds as the cost model counts them: network rounds, except comparison
    /// steps for max pooling.
    pub rounds: u64,
    pub network_rounds: u64,
    pub messages: u64,
    pub elements: u64,
    pub bytes: u64,
    pub model_rounds: Option<f64>,
    pub model_overhead: Option<f64>,
    /// Measured rounds differ from the cost model.
    pub deviation: bool,
}

/// Compares a transcript against the cost formula for `kind`.
/// `n` is the input length, or the window side for max pooling.
pub fn account(kind: ProtocolKind, n: u64, t: &SessionTranscript) -> AccountRow {
    let scope = kind.scope();
    let network_rounds = t.rounds(scope);
    let rounds = if kind == ProtocolKind::MaxPool {
        t.p1.protocol(scope).steps
    } else {
        network_rounds
    };
    let formula = kind.cost_formula(n);
    AccountRow {
        protocol: scope.to_string(),
        n,
        rounds,
        network_rounds,
        messages: t.messages(scope),
        elements: t.elements(scope),
        bytes: t.bytes(scope),
        model_rounds: formula.map(|f| f.0),
        model_overhead: formula.map(|f| f.1),
        deviation: formula.is_some_and(|(r, _)| (rounds as f64 - r).abs() > 1e-9),
    }
}
