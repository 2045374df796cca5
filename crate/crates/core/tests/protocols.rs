use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ppdet_core::detect::{sec_nms, BoxSet};
use ppdet_core::harness::{run_on_shares, run_protocol, DealerSource, ProtocolKind, SessionConfig, TransportKind};
use ppdet_core::nn::{BNParams, Backend, ConvParams, Plain, Tensor};
use ppdet_core::{FixedPointCodec, RingElement as R};

fn codec() -> FixedPointCodec {
    FixedPointCodec::default()
}

fn secure(
    inputs: &[Vec<R>],
    seed: u64,
    f: impl Fn(&mut ppdet_core::Party, Vec<Vec<R>>) -> ppdet_core::Result<Vec<R>> + Sync,
) -> Vec<R> {
    run_on_shares(&SessionConfig::default(), DealerSource::Stream(seed), seed, inputs, f)
        .unwrap()
        .0
}

#[test]
fn tcp_matches_inproc() {
    let tcp = SessionConfig {
        transport: TransportKind::Tcp,
        ..SessionConfig::default()
    };
    for kind in ProtocolKind::ALL {
        let a = run_protocol(kind, 16, &SessionConfig::default(), 5).unwrap();
        let b = run_protocol(kind, 16, &tcp, 5).unwrap();
        assert_eq!(a.output, b.output, "{}", kind.scope());
        assert_eq!(
            a.transcript.total_bytes(),
            b.transcript.total_bytes(),
            "{}",
            kind.scope()
        );
        assert_eq!(
            a.transcript.total_rounds(),
            b.transcript.total_rounds(),
            "{}",
            kind.scope()
        );
    }
}

#[test]
fn runs_repeat_under_one_seed() {
    for kind in [ProtocolKind::Divi, ProtocolKind::Silu, ProtocolKind::Nms] {
        let a = run_protocol(kind, 32, &SessionConfig::default(), 9).unwrap();
        let b = run_protocol(kind, 32, &SessionConfig::default(), 9).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.transcript.total_bytes(), b.transcript.total_bytes());
    }
}

#[test]
fn fused_conv_bn_stays_within_one_ulp_of_plain() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let c = codec();
    let conv = ConvParams::new(
        2,
        2,
        3,
        1,
        (0..36).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        vec![0.1, -0.2],
    )
    .unwrap();
    let bn = BNParams {
        mean: vec![0.3, -0.1],
        var: vec![0.5, 1.7],
        gamma: vec![1.4, 0.6],
        beta: vec![-0.2, 0.05],
        eps: 1e-5,
    };
    let x: Vec<R> = (0..2 * 6 * 6)
        .map(|_| c.encode(rng.gen_range(-3.0..3.0)).unwrap())
        .collect();
    let t = Tensor::new([2, 6, 6], x.clone()).unwrap();
    let (_, want) = Plain::new(c).conv_bn(&t, &conv, &bn).unwrap();
    let got = secure(&[x], 3, |p, v| {
        let t = Tensor::new([2, 6, 6], v.into_iter().next().unwrap())?;
        Ok(p.conv_bn_tensor(&t, &conv, &bn)?.1.data)
    });
    for (a, b) in got.iter().zip(&want.data) {
        assert!((a.to_i128() - b.to_i128()).abs() <= 1);
    }
}

fn boxes_strategy() -> impl Strategy<Value = Vec<([f64; 4], f64)>> {
    prop::collection::vec(
        (0.0..40.0f64, 0.0..40.0f64, 1.0..20.0f64, 1.0..20.0f64, 0.0..1.0f64)
            .prop_map(|(x, y, w, h, s)| ([x, y, x + w, y + h], s)),
        1..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_linear_in_its_input(seed in 0u64..1000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = codec();
        let conv = ConvParams::new(1, 1, 3, 1, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect(), vec![0.0]).unwrap();
        let x: Vec<R> = (0..25).map(|_| c.encode(rng.gen_range(-2.0..2.0)).unwrap()).collect();
        let y: Vec<R> = (0..25).map(|_| c.encode(rng.gen_range(-2.0..2.0)).unwrap()).collect();
        let sum: Vec<R> = x.iter().zip(&y).map(|(&a, &b)| a + b).collect();
        let out = secure(&[x, y, sum], seed, |p, v| {
            let mut all = Vec::new();
            for d in v {
                all.extend(p.conv_tensor(&Tensor::new([1, 5, 5], d)?, &conv)?.data);
            }
            Ok(all)
        });
        for i in 0..25 {
            let diff = (out[i] + out[25 + i] - out[50 + i]).to_i128().abs();
            prop_assert!(diff <= 3, "element {i}: {diff} ulps");
        }
    }

    #[test]
    fn sort_ignores_a_common_offset(seed in 0u64..1000, offset in -50.0..50.0f64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = codec();
        let xs: Vec<f64> = (0..12).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let a = c.encode_slice(&xs).unwrap();
        let shift = c.encode(offset).unwrap();
        let b: Vec<R> = a.iter().map(|&v| v + shift).collect();
        let out = secure(&[a, b], seed, |p, v| {
            let i = p.sec_ds(&v[0])?;
            let j = p.sec_ds(&v[1])?;
            Ok(i.into_iter().chain(j).map(|k| p.constant(R::from(k as u64))).collect())
        });
        prop_assert_eq!(&out[..12], &out[12..]);
    }

    #[test]
    fn suppression_keeps_a_subset_led_by_the_best(scene in boxes_strategy(), eta in 0.2..0.8f64) {
        let c = codec();
        let col = |i: usize| c.encode_slice(&scene.iter().map(|(b, _)| b[i]).collect::<Vec<_>>()).unwrap();
        let scores = c.encode_slice(&scene.iter().map(|(_, s)| *s).collect::<Vec<_>>()).unwrap();
        let set = BoxSet::from_columns(&col(0), &col(1), &col(2), &col(3), &scores).unwrap();
        let out = sec_nms(&mut Plain::new(c), &set, eta).unwrap();
        let best = (0..scores.len())
            .max_by(|&i, &j| scores[i].to_i128().cmp(&scores[j].to_i128()).then(j.cmp(&i)))
            .unwrap();
        prop_assert_eq!(out.kept[0], best);
        let mut seen = out.kept.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), out.kept.len());
        prop_assert!(out.kept.iter().all(|&k| k < scene.len()));
    }

    #[test]
    fn sigmoid_is_monotone(seed in 0u64..1000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut xs: Vec<f64> = (0..16).map(|_| rng.gen_range(-8.0..8.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        let out = secure(&[codec().encode_slice(&xs).unwrap()], seed, |p, v| p.sigmoid(&v[0]));
        let ys = codec().decode_slice(&out);
        for w in ys.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-5, "{} then {}", w[0], w[1]);
        }
    }
}
