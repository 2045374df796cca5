//! Runs both parties of a session, in one process, over an in-process or a
//! loopback TCP channel.

pub mod registry;

use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::party::{Party, PartyOptions, DEFAULT_MASK_BOUND};
use crate::ring::RingElement;
use crate::sharing::{reconstruct_vec, split_vec, CorrelatedSource, DealerBundle, DealerStream, PartyId};
pub use registry::{account, run_protocol, AccountRow, ProtocolKind};

use crate::transport::{inproc_pair, tcp_loopback_pair, SessionTranscript, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

/// Where the parties' correlated randomness comes from.
pub enum DealerSource {
    /// Both halves regenerated from the seed on demand.
    Stream(u64),
    Bundles(Box<DealerBundle>, Box<DealerBundle>),
}

#[derive(Debug, Clone, Copy)]
pub struct SessionConfig {
    pub codec: FixedPointCodec,
    pub transport: TransportKind,
    pub session: u32,
    pub party_seed: u64,
    pub mask_bound: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            codec: FixedPointCodec::default(),
            transport: TransportKind::Inproc,
            session: 1,
            party_seed: 0,
            mask_bound: DEFAULT_MASK_BOUND,
        }
    }
}

/// Runs `program` on both parties, each with its own input, and returns
/// both outputs with the session transcript.
pub fn run_two_party<I, O, F>(
    cfg: &SessionConfig,
    dealer: DealerSource,
    inputs: (I, I),
    program: F,
) -> Result<(O, O, SessionTranscript)>
where
    I: Send,
    O: Send,
    F: Fn(&mut Party, I) -> Result<O> + Sync,
{
    let (t1, t2): (Box<dyn Transport>, Box<dyn Transport>) = match cfg.transport {
        TransportKind::Inproc => {
            let (a, b) = inproc_pair();
            (Box::new(a), Box::new(b))
        }
        TransportKind::Tcp => {
            let (a, b) = tcp_loopback_pair()?;
            (Box::new(a), Box::new(b))
        }
    };
    let (d1, d2): (Box<dyn CorrelatedSource>, Box<dyn CorrelatedSource>) = match dealer {
        DealerSource::Stream(seed) => (
            Box::new(DealerStream::new(seed, PartyId::P1, cfg.codec)),
            Box::new(DealerStream::new(seed, PartyId::P2, cfg.codec)),
        ),
        DealerSource::Bundles(b1, b2) => {
            if b1.party != PartyId::P1 || b2.party != PartyId::P2 {
                return Err(Error::Config("dealer bundles are assigned to the wrong parties".into()));
            }
            (b1, b2)
        }
    };
    let options = PartyOptions {
        session: cfg.session,
        seed: cfg.party_seed,
        mask_bound: cfg.mask_bound,
    };
    let program = &program;
    let (in1, in2) = inputs;
    let (r1, r2) = thread::scope(|s| {
        let h1 = s.spawn(move || {
            let mut p = Party::new(PartyId::P1, cfg.codec, t1, d1, options);
            let out = program(&mut p, in1);
            out.map(|o| (o, p.into_transcript()))
        });
        let h2 = s.spawn(move || {
            let mut p = Party::new(PartyId::P2, cfg.codec, t2, d2, options);
            let out = program(&mut p, in2);
            out.map(|o| (o, p.into_transcript()))
        });
        (join(h1), join(h2))
    });
    match (r1, r2) {
        (Ok((o1, p1)), Ok((o2, p2))) => Ok((o1, o2, SessionTranscript { p1, p2 })),
        // The peer of a failing party usually sees a hang-up; report the cause.
        (Err(a), Err(b)) if a.is_transport() && !b.is_transport() => Err(b),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn join<T>(h: thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join()
        .unwrap_or_else(|_| Err(Error::Protocol("party thread panicked".into())))
}

/// Shares each plaintext input vector, runs `program` on both parties and
/// reconstructs the output. Sharing randomness comes from `share_seed`.
pub fn run_on_shares<F>(
    cfg: &SessionConfig,
    dealer: DealerSource,
    share_seed: u64,
    inputs: &[Vec<RingElement>],
    program: F,
) -> Result<(Vec<RingElement>, SessionTranscript)>
where
    F: Fn(&mut Party, Vec<Vec<RingElement>>) -> Result<Vec<RingElement>> + Sync,
{
    let mut rng = ChaCha20Rng::seed_from_u64(share_seed);
    let (s1, s2): (Vec<_>, Vec<_>) = inputs.iter().map(|x| split_vec(x, &mut rng)).unzip();
    let (o1, o2, t) = run_two_party(cfg, dealer, (s1, s2), program)?;
    if o1.len() != o2.len() {
        return Err(Error::Protocol("parties returned outputs of different lengths".into()));
    }
    Ok((reconstruct_vec(&o1, &o2), t))
}
