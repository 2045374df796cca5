//! Per-protocol accounting of rounds, messages, elements and bytes, plus the
//! leakage ledger of values each party saw opened.
//!
//! Scopes nest: a round inside `sec_silu > sec_exp` is charged to both
//! names. A simultaneous exchange counts as one round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharing::PartyId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub invocations: u64,
    pub rounds: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub elements_sent: u64,
    pub elements_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Protocol-specific sequential steps (comparison steps in max-pooling).
    pub steps: u64,
}

/// Traffic in one direction of one round: `(elements, bytes)`.
pub type Flow = Option<(u64, u64)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub party: PartyId,
    pub total: ProtocolStats,
    pub protocols: BTreeMap<String, ProtocolStats>,
    /// Opened-value label to number of elements revealed under it.
    pub openings: BTreeMap<String, u64>,
}

impl Transcript {
    pub fn new(party: PartyId) -> Self {
        Transcript {
            party,
            total: ProtocolStats::default(),
            protocols: BTreeMap::new(),
            openings: BTreeMap::new(),
        }
    }

    fn for_each_scope(&mut self, scopes: &[&'static str], mut f: impl FnMut(&mut ProtocolStats)) {
        f(&mut self.total);
        for (i, s) in scopes.iter().enumerate() {
            if scopes[..i].contains(s) {
                continue;
            }
            f(self.protocols.entry((*s).to_string()).or_default());
        }
    }

    pub fn enter(&mut self, name: &'static str) {
        self.protocols.entry(name.to_string()).or_default().invocations += 1;
    }

    pub fn record_round(&mut self, scopes: &[&'static str], sent: Flow, received: Flow) {
        self.for_each_scope(scopes, |s| {
            s.rounds += 1;
            if let Some((e, b)) = sent {
                s.messages_sent += 1;
                s.elements_sent += e;
                s.bytes_sent += b;
            }
            if let Some((e, b)) = received {
                s.messages_received += 1;
                s.elements_received += e;
                s.bytes_received += b;
            }
        });
    }

    pub fn add_steps(&mut self, scopes: &[&'static str], n: u64) {
        self.for_each_scope(scopes, |s| s.steps += n);
    }

    pub fn record_opening(&mut self, label: &str, elements: u64) {
        *self.openings.entry(label.to_string()).or_default() += elements;
    }

    pub fn protocol(&self, name: &str) -> ProtocolStats {
        self.protocols.get(name).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

/// Both parties' transcripts of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub p1: Transcript,
    pub p2: Transcript,
}

impl SessionTranscript {
    pub fn stats(&self, name: &str) -> (ProtocolStats, ProtocolStats) {
        (self.p1.protocol(name), self.p2.protocol(name))
    }

    /// Rounds of a protocol; both parties count the same flights.
    pub fn rounds(&self, name: &str) -> u64 {
        self.p1.protocol(name).rounds
    }

    /// Field elements sent by both parties together.
    pub fn elements(&self, name: &str) -> u64 {
        let (a, b) = self.stats(name);
        a.elements_sent + b.elements_sent
    }

    pub fn bytes(&self, name: &str) -> u64 {
        let (a, b) = self.stats(name);
        a.bytes_sent + b.bytes_sent
    }

    pub fn messages(&self, name: &str) -> u64 {
        let (a, b) = self.stats(name);
        a.messages_sent + b.messages_sent
    }

    pub fn total_bytes(&self) -> u64 {
        self.p1.total.bytes_sent + self.p2.total.bytes_sent
    }

    pub fn total_rounds(&self) -> u64 {
        self.p1.total.rounds
    }

    /// Checks that what one party sent is exactly what the other received.
    pub fn check_conservation(&self) -> Result<()> {
        let mut names: Vec<&String> = self.p1.protocols.keys().collect();
        names.extend(self.p2.protocols.keys());
        let pairs = std::iter::once((self.p1.total, self.p2.total))
            .chain(names.into_iter().map(|n| (self.p1.protocol(n), self.p2.protocol(n))));
        for (a, b) in pairs {
            if a.bytes_sent != b.bytes_received
                || b.bytes_sent != a.bytes_received
                || a.elements_sent != b.elements_received
                || b.elements_sent != a.elements_received
                || a.rounds != b.rounds
            {
                return Err(Error::Protocol(format!("transcripts disagree: P1 {a:?} vs P2 {b:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}
