//! Admission logic of the ingestion gateway: range checks, per-stream
//! sequence ordering and duplicate suppression.

use alloc::collections::BTreeMap;

use crate::protocol::PubFrame;
use crate::reading::{RawReading, StreamKey};

/// Outcome of offering one publish frame to the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    /// `seq` is not newer than the last accepted one for the stream.
    Duplicate,
    OutOfRange,
    Malformed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Counters {
    /// Publish-type frames seen, including ones that failed to parse.
    pub received: u64,
    pub accepted: u64,
    pub duplicate: u64,
    pub out_of_range: u64,
    pub malformed: u64,
}

impl Counters {
    pub fn is_conserved(&self) -> bool {
        self.accepted + self.duplicate + self.out_of_range + self.malformed == self.received
    }
}

#[derive(Debug, Clone, Default)]
pub struct GatewayState {
    last_seen: BTreeMap<StreamKey, u64>,
    latest: BTreeMap<StreamKey, RawReading>,
    counters: Counters,
}

impl GatewayState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn last_seen(&self, key: &StreamKey) -> Option<u64> {
        self.last_seen.get(key).copied()
    }

    /// Most recent accepted reading per stream.
    pub fn latest(&self) -> impl Iterator<Item = &RawReading> {
        self.latest.values()
    }

    /// Restores ordering state from persisted rows, e.g. after a restart.
    /// Counters are left untouched.
    pub fn restore(&mut self, reading: &RawReading) {
        let key = reading.stream_key();
        match self.last_seen.get(&key) {
            Some(&seen) if seen >= reading.seq => {}
            _ => {
                self.last_seen.insert(key.clone(), reading.seq);
                self.latest.insert(key, reading.clone());
            }
        }
    }

    /// Verdict for `reading` without changing any state.
    pub fn classify(&self, reading: &RawReading) -> Verdict {
        if reading.depth_cm == 0 {
            return Verdict::Malformed;
        }
        if let Some(&seen) = self.last_seen.get(&reading.stream_key()) {
            if reading.seq <= seen {
                return Verdict::Duplicate;
            }
        }
        if !reading.channel.in_range(reading.value) {
            return Verdict::OutOfRange;
        }
        Verdict::Accept
    }

    /// Counts `verdict` once and, on accept, advances the stream.
    pub fn record(&mut self, reading: &RawReading, verdict: Verdict) {
        self.counters.received += 1;
        match verdict {
            Verdict::Accept => {
                self.counters.accepted += 1;
                let key = reading.stream_key();
                self.last_seen.insert(key.clone(), reading.seq);
                self.latest.insert(key, reading.clone());
            }
            Verdict::Duplicate => self.counters.duplicate += 1,
            Verdict::OutOfRange => self.counters.out_of_range += 1,
            Verdict::Malformed => self.counters.malformed += 1,
        }
    }

    /// A publish-type line that could not be parsed.
    pub fn record_malformed(&mut self) {
        self.counters.received += 1;
        self.counters.malformed += 1;
    }

    pub fn validate_and_order(&mut self, frame: &PubFrame) -> Verdict {
        let reading = frame.to_reading();
        let verdict = self.classify(&reading);
        self.record(&reading, verdict);
        verdict
    }
}
