//! Frame handling of the ingestion gateway, independent of the transport.

use std::sync::{Arc, Mutex, MutexGuard};

use soilnet_core::gateway::{Counters, GatewayState, Verdict};
use soilnet_core::protocol::{parse_frame, ErrorCode, Malformed, WireFrame, PROTO_VERSION};
use soilnet_core::{CalibrationModel, Channel, Ident, RawReading, StoredRow};

use crate::store::{Store, StoreError};

/// Node id the gateway announces in its `HELLO` reply.
pub const GATEWAY_ID: &str = "gateway";

/// Default tolerance for node clocks running ahead of the gateway, seconds.
pub const DEFAULT_ALLOWED_SKEW_S: i64 = 300;

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| chrono::Utc::now().timestamp())
}

/// Per-connection protocol state.
#[derive(Debug, Default)]
pub struct Session {
    node: Option<Ident>,
}

impl Session {
    pub fn node(&self) -> Option<&Ident> {
        self.node.as_ref()
    }
}

pub struct Gateway {
    state: Mutex<GatewayState>,
    store: Arc<Store>,
    calibration: Option<CalibrationModel>,
    clock: Clock,
    allowed_skew_s: i64,
}

impl Gateway {
    /// Rebuilds per-stream ordering from the rows already in `store`.
    pub fn new(store: Arc<Store>, calibration: Option<CalibrationModel>) -> Result<Self, StoreError> {
        let mut state = GatewayState::new();
        let rows = store.scan()?;
        for row in &rows {
            state.restore(&row.reading);
        }
        if !rows.is_empty() {
            log::info!("restored {} streams from {} stored rows", state.latest().count(), rows.len());
        }
        Ok(Self {
            state: Mutex::new(state),
            store,
            calibration,
            clock: system_clock(),
            allowed_skew_s: DEFAULT_ALLOWED_SKEW_S,
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_allowed_skew(mut self, seconds: i64) -> Self {
        self.allowed_skew_s = seconds;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    fn state(&self) -> MutexGuard<'_, GatewayState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn counters(&self) -> Counters {
        self.state().counters()
    }

    /// Most recent accepted reading of every stream.
    pub fn latest(&self) -> Vec<RawReading> {
        self.state().latest().cloned().collect()
    }

    /// Classifies `reading` and persists it on accept. A failed append
    /// leaves the counters and the stream untouched so the sender can retry.
    pub fn ingest(&self, reading: &RawReading, recv_timestamp: i64) -> Result<Verdict, StoreError> {
        let mut state = self.state();
        let verdict = state.classify(reading);
        if verdict == Verdict::Accept {
            let row = StoredRow {
                reading: reading.clone(),
                recv_timestamp,
                vwc_percent: self.vwc_for(reading),
            };
            if row.is_skewed(self.allowed_skew_s) {
                log::warn!(
                    "{}/{}/{} seq {}: node clock ahead of gateway by {} s",
                    reading.profile_id,
                    reading.depth_cm,
                    reading.channel,
                    reading.seq,
                    reading.timestamp - recv_timestamp
                );
            }
            self.store.append(&row)?;
        }
        state.record(reading, verdict);
        Ok(verdict)
    }

    fn vwc_for(&self, reading: &RawReading) -> Option<f64> {
        match (&self.calibration, reading.channel) {
            (Some(model), Channel::MoistureVoltage) => model.apply(reading.value).ok().filter(|v| v.is_finite()),
            _ => None,
        }
    }

    /// Reply to one received line (with or without its LF).
    pub fn handle_line(&self, session: &mut Session, line: &[u8]) -> WireFrame {
        let frame = match parse_frame(line) {
            Ok(f) => f,
            Err(reason) => return self.malformed(line, reason),
        };
        match frame {
            WireFrame::Hello { version, .. } if version != PROTO_VERSION => WireFrame::error(
                ErrorCode::Version,
                &format!("unsupported version {version}, expected {PROTO_VERSION}"),
            ),
            WireFrame::Hello { node_id, .. } => {
                log::debug!("hello from {node_id}");
                session.node = Some(node_id);
                WireFrame::Hello {
                    node_id: Ident::new(GATEWAY_ID).expect("valid id"),
                    version: PROTO_VERSION,
                }
            }
            WireFrame::Pub(_) if session.node.is_none() => {
                self.state().record_malformed();
                WireFrame::error(ErrorCode::Protocol, "HELLO required before PUB")
            }
            WireFrame::Pub(p) => {
                let reading = p.to_reading();
                match self.ingest(&reading, (self.clock)()) {
                    Ok(Verdict::Accept | Verdict::Duplicate) => WireFrame::Ack { seq: p.seq },
                    Ok(Verdict::OutOfRange) => {
                        let (lo, hi) = reading.channel.range();
                        WireFrame::error(
                            ErrorCode::OutOfRange,
                            &format!("seq {} value {} outside [{lo}, {hi}]", p.seq, reading.value),
                        )
                    }
                    Ok(Verdict::Malformed) => WireFrame::error(ErrorCode::Malformed, &format!("seq {}", p.seq)),
                    Err(e) => {
                        log::error!("append failed: {e}");
                        WireFrame::error(ErrorCode::Storage, "store unavailable, retry later")
                    }
                }
            }
            WireFrame::Ack { .. } | WireFrame::Err { .. } => {
                WireFrame::error(ErrorCode::Protocol, "gateway accepts HELLO and PUB only")
            }
        }
    }

    /// Reply to a line longer than the frame limit, given its first bytes.
    pub fn handle_oversized(&self, prefix: &[u8]) -> WireFrame {
        self.malformed(prefix, Malformed::TooLong)
    }

    fn malformed(&self, line: &[u8], reason: Malformed) -> WireFrame {
        if WireFrame::verb_of(line) == Some("PUB") {
            self.state().record_malformed();
        }
        WireFrame::error(ErrorCode::Malformed, reason.as_str())
    }
}
