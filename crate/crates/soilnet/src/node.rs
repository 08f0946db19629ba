//! Simulated sensor node publishing to a gateway over TCP.
//!
//! Readings go into a bounded buffer first and leave it only when the gateway
//! acknowledges them, so an outage costs at most the oldest readings beyond
//! the buffer capacity. Transport failures reconnect with exponential
//! backoff; the node gives up after `retry_budget` consecutive failures.

use std::io;
use std::time::Duration;

use serde::Serialize;
use soilnet_core::protocol::{ErrorCode, WireFrame, PROTO_VERSION};
use soilnet_core::sim::{BackoffPolicy, ReadingBuffer, Simulator, VirtualClock, DEFAULT_BUFFER_CAPACITY};
use soilnet_core::{Ident, RawReading};
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::time::Instant;

use crate::server::{read_frame, FrameRead};

pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RETRY_BUDGET: u32 = 10;

#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub addr: String,
    /// Site segment of published topics.
    pub site: Ident,
    pub backoff: BackoffPolicy,
    /// Consecutive failed attempts tolerated before the node gives up.
    pub retry_budget: u32,
    pub ack_timeout: Duration,
    pub buffer_capacity: usize,
}

impl NodeOptions {
    pub fn new(addr: impl Into<String>, site: Ident) -> Self {
        Self {
            addr: addr.into(),
            site,
            backoff: BackoffPolicy::default(),
            retry_budget: DEFAULT_RETRY_BUDGET,
            ack_timeout: DEFAULT_ACK_TIMEOUT,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeReport {
    pub profile_id: String,
    pub generated: u64,
    /// Acknowledged by the gateway, including replays it already had.
    pub acknowledged: u64,
    /// Refused by the gateway as out of range or malformed.
    pub rejected: u64,
    /// Lost to buffer overflow.
    pub dropped: u64,
    pub retries: u64,
    pub connections: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("gateway {addr} unreachable after {attempts} attempts: {last}")]
    Unreachable {
        addr: String,
        attempts: u32,
        last: String,
        report: NodeReport,
    },
    #[error("gateway refused protocol version {PROTO_VERSION}: {0}")]
    Version(String),
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("connect: {0}")]
    Connect(io::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("connection closed by gateway")]
    Closed,
    #[error("gateway storage unavailable: {0}")]
    Storage(String),
    #[error("unexpected reply {0:?}")]
    Unexpected(String),
    #[error("version refused: {0}")]
    Version(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PublishOutcome {
    Acknowledged,
    Rejected { code: ErrorCode, message: String },
}

/// One HELLO-established connection to a gateway.
pub struct Client {
    rd: BufReader<OwnedReadHalf>,
    wr: OwnedWriteHalf,
    buf: Vec<u8>,
    timeout: Duration,
}

impl Client {
    pub async fn connect(addr: &str, node_id: &Ident, timeout: Duration) -> Result<Self, TransportError> {
        let stream = tokio::time::timeout(timeout, TcpStream::connect(addr))
            .await
            .map_err(|_| TransportError::Timeout(timeout))?
            .map_err(TransportError::Connect)?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        let mut client = Self {
            rd: BufReader::new(rd),
            wr,
            buf: Vec::new(),
            timeout,
        };
        let hello = WireFrame::Hello {
            node_id: node_id.clone(),
            version: PROTO_VERSION,
        };
        client.send(&hello).await?;
        match client.reply().await? {
            WireFrame::Hello { .. } => Ok(client),
            WireFrame::Err { code: ErrorCode::Version, message } => Err(TransportError::Version(message)),
            other => Err(TransportError::Unexpected(other.render())),
        }
    }

    async fn send(&mut self, frame: &WireFrame) -> Result<(), TransportError> {
        self.wr.write_all(frame.render().as_bytes()).await?;
        Ok(())
    }

    async fn reply(&mut self) -> Result<WireFrame, TransportError> {
        let read = tokio::time::timeout(self.timeout, read_frame(&mut self.rd, &mut self.buf))
            .await
            .map_err(|_| TransportError::Timeout(self.timeout))??;
        match read {
            FrameRead::Line => soilnet_core::protocol::parse_frame(&self.buf)
                .map_err(|e| TransportError::Unexpected(format!("{}: {e}", String::from_utf8_lossy(&self.buf)))),
            FrameRead::TooLong => Err(TransportError::Unexpected("oversized reply".into())),
            FrameRead::Eof => Err(TransportError::Closed),
        }
    }

    /// Sends one reading and waits for the gateway's verdict on it.
    pub async fn publish(&mut self, site: &Ident, reading: &RawReading) -> Result<PublishOutcome, TransportError> {
        let frame = WireFrame::Pub(soilnet_core::protocol::PubFrame::from_reading(site, reading));
        self.send(&frame).await?;
        loop {
            match self.reply().await? {
                WireFrame::Ack { seq } if seq == reading.seq => return Ok(PublishOutcome::Acknowledged),
                // Late ACK for an earlier attempt.
                WireFrame::Ack { .. } => continue,
                WireFrame::Err { code: ErrorCode::Storage, message } => return Err(TransportError::Storage(message)),
                WireFrame::Err {
                    code: code @ (ErrorCode::OutOfRange | ErrorCode::Malformed),
                    message,
                } => return Ok(PublishOutcome::Rejected { code, message }),
                other => return Err(TransportError::Unexpected(other.render())),
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.wr.shutdown().await;
    }
}

/// Runs `sim` over `[start, start + duration_s]` and publishes every reading.
/// Ticks are paced by the profile's clock scale; an infinite scale runs as
/// fast as the gateway acknowledges.
pub async fn run_node(sim: &Simulator, start: i64, duration_s: u64, opts: &NodeOptions) -> Result<NodeReport, NodeError> {
    let profile = sim.profile();
    let node_id = profile.profile_id.clone();
    let scale = profile.clock_scale;
    let wall_start = Instant::now();
    let due = |t: i64| {
        if scale.is_finite() {
            wall_start + Duration::from_secs_f64((t - start).max(0) as f64 / scale)
        } else {
            wall_start
        }
    };

    let mut report = NodeReport {
        profile_id: node_id.to_string(),
        ..NodeReport::default()
    };
    let mut ticks = VirtualClock::new(start, duration_s, profile.cadence_s).peekable();
    let mut buffer = ReadingBuffer::new(opts.buffer_capacity);
    let mut client: Option<Client> = None;
    let mut failures = 0u32;

    loop {
        while let Some(&t) = ticks.peek() {
            if due(t) > Instant::now() {
                break;
            }
            ticks.next();
            for r in sim.step(t) {
                report.generated += 1;
                buffer.push(r);
            }
        }
        report.dropped = buffer.dropped();

        let Some(reading) = buffer.front().cloned() else {
            match ticks.peek() {
                Some(&t) => {
                    tokio::time::sleep_until(due(t)).await;
                    continue;
                }
                None => break,
            }
        };

        let attempt = async {
            if client.is_none() {
                client = Some(Client::connect(&opts.addr, &node_id, opts.ack_timeout).await?);
                report.connections += 1;
            }
            client.as_mut().expect("connected").publish(&opts.site, &reading).await
        };
        match attempt.await {
            Ok(outcome) => {
                failures = 0;
                buffer.pop_front();
                match outcome {
                    PublishOutcome::Acknowledged => report.acknowledged += 1,
                    PublishOutcome::Rejected { code, message } => {
                        log::warn!("{node_id}: seq {} rejected ({}): {message}", reading.seq, code.as_str());
                        report.rejected += 1;
                    }
                }
            }
            Err(TransportError::Version(msg)) => return Err(NodeError::Version(msg)),
            Err(e) => {
                client = None;
                failures += 1;
                if failures > opts.retry_budget {
                    return Err(NodeError::Unreachable {
                        addr: opts.addr.clone(),
                        attempts: failures,
                        last: e.to_string(),
                        report,
                    });
                }
                report.retries += 1;
                let delay = Duration::from_secs_f64(opts.backoff.delay_s(failures - 1));
                log::info!("{node_id}: {e}; retry {failures}/{} in {delay:?}", opts.retry_budget);
                let mut wake = Instant::now() + delay;
                if let Some(&t) = ticks.peek() {
                    wake = wake.min(due(t).max(Instant::now()));
                }
                tokio::time::sleep_until(wake).await;
            }
        }
    }
    if let Some(c) = client {
        c.close().await;
    }
    report.dropped = buffer.dropped();
    Ok(report)
}
