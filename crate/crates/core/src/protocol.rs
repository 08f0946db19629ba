//! Line-oriented publish protocol.
//!
//! Every frame is one line of printable ASCII terminated by LF, at most
//! [`MAX_FRAME_BYTES`] long including the terminator, with single spaces
//! between fields:
//!
//! ```text
//! PUB <topic> <seq> <unix_ts_seconds> <value>
//! HELLO <node_id> <proto_version>
//! ACK <seq>
//! ERR <code> <message>
//! ```
//!
//! Topics mirror MQTT addressing:
//! `site/{site}/profile/{profile}/depth/{cm}/{moisture|temperature}`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::reading::{Channel, Ident, RawReading};

pub const MAX_FRAME_BYTES: usize = 512;
pub const PROTO_VERSION: u32 = 1;
/// Accepted node timestamps, UNIX seconds: 1970 through the end of year 9999,
/// so every stamp has a four-digit ISO-8601 year.
pub const TIMESTAMP_RANGE: (i64, i64) = (0, 253_402_300_799);

/// Why a line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Malformed {
    #[error("frame exceeds {MAX_FRAME_BYTES} bytes")]
    TooLong,
    #[error("frame contains a non-ASCII or control byte")]
    Encoding,
    #[error("empty frame")]
    Empty,
    #[error("fields must be separated by exactly one space")]
    Separator,
    #[error("unknown verb")]
    Verb,
    #[error("wrong number of fields")]
    Arity,
    #[error("bad topic")]
    Topic,
    #[error("bad sequence number")]
    Seq,
    #[error("bad timestamp")]
    Timestamp,
    #[error("bad value")]
    Value,
    #[error("bad node id")]
    NodeId,
    #[error("bad protocol version")]
    Version,
    #[error("unknown error code")]
    Code,
}

impl Malformed {
    pub fn as_str(self) -> &'static str {
        match self {
            Malformed::TooLong => "too_long",
            Malformed::Encoding => "encoding",
            Malformed::Empty => "empty",
            Malformed::Separator => "separator",
            Malformed::Verb => "verb",
            Malformed::Arity => "arity",
            Malformed::Topic => "topic",
            Malformed::Seq => "seq",
            Malformed::Timestamp => "timestamp",
            Malformed::Value => "value",
            Malformed::NodeId => "node_id",
            Malformed::Version => "version",
            Malformed::Code => "code",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic {
    pub site: Ident,
    pub profile_id: Ident,
    pub depth_cm: u32,
    pub channel: Channel,
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "site/{}/profile/{}/depth/{}/{}",
            self.site, self.profile_id, self.depth_cm, self.channel
        )
    }
}

impl FromStr for Topic {
    type Err = Malformed;

    fn from_str(s: &str) -> Result<Self, Malformed> {
        let mut it = s.split('/');
        let mut next = || it.next().ok_or(Malformed::Topic);
        let (k0, site, k1, profile, k2, depth, channel) = (next()?, next()?, next()?, next()?, next()?, next()?, next()?);
        if next().is_ok() || k0 != "site" || k1 != "profile" || k2 != "depth" {
            return Err(Malformed::Topic);
        }
        let depth_cm = parse_canonical_u64(depth)
            .and_then(|d| u32::try_from(d).ok())
            .filter(|&d| d > 0)
            .ok_or(Malformed::Topic)?;
        Ok(Topic {
            site: Ident::new(site).map_err(|_| Malformed::Topic)?,
            profile_id: Ident::new(profile).map_err(|_| Malformed::Topic)?,
            depth_cm,
            channel: channel.parse().map_err(|_| Malformed::Topic)?,
        })
    }
}

/// Error codes carried by `ERR` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Malformed,
    OutOfRange,
    /// Frame is well formed but not allowed in the session's state.
    Protocol,
    Version,
    /// The gateway could not persist the reading; retry later.
    Storage,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "malformed",
            ErrorCode::OutOfRange => "out_of_range",
            ErrorCode::Protocol => "protocol",
            ErrorCode::Version => "version",
            ErrorCode::Storage => "storage",
        }
    }
}

impl FromStr for ErrorCode {
    type Err = Malformed;

    fn from_str(s: &str) -> Result<Self, Malformed> {
        Ok(match s {
            "malformed" => ErrorCode::Malformed,
            "out_of_range" => ErrorCode::OutOfRange,
            "protocol" => ErrorCode::Protocol,
            "version" => ErrorCode::Version,
            "storage" => ErrorCode::Storage,
            _ => return Err(Malformed::Code),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PubFrame {
    pub topic: Topic,
    pub seq: u64,
    pub timestamp: i64,
    pub value: f64,
}

impl PubFrame {
    pub fn from_reading(site: &Ident, reading: &RawReading) -> Self {
        Self {
            topic: Topic {
                site: site.clone(),
                profile_id: reading.profile_id.clone(),
                depth_cm: reading.depth_cm,
                channel: reading.channel,
            },
            seq: reading.seq,
            timestamp: reading.timestamp,
            value: reading.value,
        }
    }

    pub fn to_reading(&self) -> RawReading {
        RawReading {
            profile_id: self.topic.profile_id.clone(),
            depth_cm: self.topic.depth_cm,
            channel: self.topic.channel,
            value: self.value,
            timestamp: self.timestamp,
            seq: self.seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireFrame {
    Pub(PubFrame),
    Hello { node_id: Ident, version: u32 },
    Ack { seq: u64 },
    Err { code: ErrorCode, message: String },
}

impl WireFrame {
    /// `ERR` frame with `message` reduced to what the grammar allows: printable
    /// ASCII, single spaces, non-empty, and short enough to fit one frame.
    pub fn error(code: ErrorCode, message: &str) -> Self {
        let mut clean = String::new();
        for word in message.split(|c: char| c == ' ' || !c.is_ascii_graphic()) {
            if word.is_empty() {
                continue;
            }
            if !clean.is_empty() {
                clean.push(' ');
            }
            clean.push_str(word);
        }
        // "ERR " + code + " " + message + "\n"
        let budget = MAX_FRAME_BYTES - 6 - code.as_str().len();
        if clean.len() > budget {
            clean.truncate(budget);
            clean = clean.trim_end().to_string();
        }
        if clean.is_empty() {
            clean.push('-');
        }
        WireFrame::Err { code, message: clean }
    }

    /// The frame as a LF-terminated line.
    pub fn render(&self) -> String {
        match self {
            WireFrame::Pub(p) => alloc::format!(
                "PUB {} {} {} {}\n",
                p.topic,
                p.seq,
                p.timestamp,
                crate::fmt_f64(p.value)
            ),
            WireFrame::Hello { node_id, version } => alloc::format!("HELLO {node_id} {version}\n"),
            WireFrame::Ack { seq } => alloc::format!("ACK {seq}\n"),
            WireFrame::Err { code, message } => alloc::format!("ERR {} {}\n", code.as_str(), message),
        }
    }

    /// Classifies a line's verb without validating the rest; used for
    /// counting frames that fail to parse.
    pub fn verb_of(line: &[u8]) -> Option<&'static str> {
        let verb = line.split(|&b| b == b' ' || b == b'\n').next()?;
        ["PUB", "HELLO", "ACK", "ERR"].into_iter().find(|v| v.as_bytes() == verb)
    }
}

/// Decimal digits without sign or redundant leading zeros.
fn parse_canonical_u64(s: &str) -> Option<u64> {
    let canonical = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    if canonical {
        s.parse().ok()
    } else {
        None
    }
}

fn parse_canonical_i64(s: &str) -> Option<i64> {
    match s.strip_prefix('-') {
        Some("0") => None,
        Some(digits) => parse_canonical_u64(digits)
            .and_then(|_| s.parse().ok()),
        None => parse_canonical_u64(s).and_then(|v| i64::try_from(v).ok()),
    }
}

fn parse_value(s: &str) -> Option<f64> {
    // Rust's float grammar also accepts "inf", "NaN" and friends.
    let numeric = s
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if !numeric {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses one line, with or without its trailing LF.
pub fn parse_frame(line: impl AsRef<[u8]>) -> Result<WireFrame, Malformed> {
    let line = line.as_ref();
    if line.len() > MAX_FRAME_BYTES {
        return Err(Malformed::TooLong);
    }
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    if body.len() + 1 > MAX_FRAME_BYTES {
        return Err(Malformed::TooLong);
    }
    if body.iter().any(|&b| !(b == b' ' || b.is_ascii_graphic())) {
        return Err(Malformed::Encoding);
    }
    let text = core::str::from_utf8(body).map_err(|_| Malformed::Encoding)?;
    if text.is_empty() {
        return Err(Malformed::Empty);
    }
    if text.starts_with(' ') || text.ends_with(' ') || text.contains("  ") {
        return Err(Malformed::Separator);
    }

    let (verb, rest) = text.split_once(' ').unwrap_or((text, ""));
    let limit = match verb {
        "PUB" => 4,
        "HELLO" => 2,
        "ACK" => 1,
        "ERR" => 2,
        "" => return Err(Malformed::Separator),
        _ => return Err(Malformed::Verb),
    };
    let f: Vec<&str> = if text.len() > verb.len() {
        rest.splitn(limit, ' ').collect()
    } else {
        Vec::new()
    };
    if f.iter().any(|field| field.is_empty()) {
        return Err(Malformed::Separator);
    }

    match verb {
        "PUB" => {
            let topic: Topic = f.first().ok_or(Malformed::Arity)?.parse()?;
            if f.len() != 4 || f[3].contains(' ') {
                return Err(Malformed::Arity);
            }
            let seq = parse_canonical_u64(f[1]).ok_or(Malformed::Seq)?;
            let timestamp = parse_canonical_i64(f[2])
                .filter(|t| (TIMESTAMP_RANGE.0..=TIMESTAMP_RANGE.1).contains(t))
                .ok_or(Malformed::Timestamp)?;
            let value = parse_value(f[3]).ok_or(Malformed::Value)?;
            Ok(WireFrame::Pub(PubFrame { topic, seq, timestamp, value }))
        }
        "HELLO" => {
            if f.len() != 2 || f[1].contains(' ') {
                return Err(Malformed::Arity);
            }
            let node_id = Ident::new(f[0]).map_err(|_| Malformed::NodeId)?;
            let version = parse_canonical_u64(f[1])
                .and_then(|v| u32::try_from(v).ok())
                .ok_or(Malformed::Version)?;
            Ok(WireFrame::Hello { node_id, version })
        }
        "ACK" => {
            if f.len() != 1 || f[0].contains(' ') {
                return Err(Malformed::Arity);
            }
            Ok(WireFrame::Ack {
                seq: parse_canonical_u64(f[0]).ok_or(Malformed::Seq)?,
            })
        }
        _ => {
            if f.len() != 2 {
                return Err(Malformed::Arity);
            }
            let code: ErrorCode = f[0].parse()?;
            if f[1].ends_with(' ') || f[1].contains("  ") {
                return Err(Malformed::Separator);
            }
            Ok(WireFrame::Err {
                code,
                message: f[1].to_string(),
            })
        }
    }
}
