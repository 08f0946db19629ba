//! CSV, JSON and XML encodings of stored rows.
//!
//! All three carry the same eight fields under the same names. Timestamps are
//! UTC with a `Z` suffix, numbers use the shortest representation that reads
//! back to the same `f64`, and an absent water content is an empty CSV field,
//! JSON `null` or an empty XML attribute.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};
use soilnet_core::{Channel, Ident, RawReading, StoredRow};

use crate::timefmt::{iso8601, parse_iso8601};

pub const CSV_HEADER: &str = "timestamp,recv_timestamp,profile,depth_cm,channel,seq,value,vwc_percent";

const FIELDS: [&str; 8] = [
    "timestamp",
    "recv_timestamp",
    "profile",
    "depth_cm",
    "channel",
    "seq",
    "value",
    "vwc_percent",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Xml,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Xml => "xml",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "xml" => Ok(Format::Xml),
            other => Err(format!("unknown format {other:?} (expected csv, json or xml)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("xml: {0}")]
    Xml(String),
    #[error("unexpected header {0:?}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Field-for-field image of a [`StoredRow`] shared by every format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Record {
    timestamp: String,
    recv_timestamp: String,
    profile: String,
    depth_cm: u32,
    channel: Channel,
    seq: u64,
    value: f64,
    vwc_percent: Option<f64>,
}

impl From<&StoredRow> for Record {
    fn from(row: &StoredRow) -> Self {
        let r = &row.reading;
        Record {
            timestamp: iso8601(r.timestamp),
            recv_timestamp: iso8601(row.recv_timestamp),
            profile: r.profile_id.to_string(),
            depth_cm: r.depth_cm,
            channel: r.channel,
            seq: r.seq,
            value: r.value,
            vwc_percent: row.vwc_percent,
        }
    }
}

impl Record {
    pub(crate) fn into_row(self) -> Result<StoredRow, String> {
        let profile_id = Ident::new(&self.profile).map_err(|e| format!("profile: {e}"))?;
        if self.depth_cm == 0 {
            return Err("depth_cm must be positive".into());
        }
        if !self.value.is_finite() || self.vwc_percent.is_some_and(|v| !v.is_finite()) {
            return Err("non-finite number".into());
        }
        Ok(StoredRow {
            reading: RawReading {
                profile_id,
                depth_cm: self.depth_cm,
                channel: self.channel,
                value: self.value,
                timestamp: parse_iso8601(&self.timestamp).map_err(|e| e.to_string())?,
                seq: self.seq,
            },
            recv_timestamp: parse_iso8601(&self.recv_timestamp).map_err(|e| e.to_string())?,
            vwc_percent: self.vwc_percent,
        })
    }
}

/// Shortest round-trip decimal, identical to the JSON number text.
fn number(v: f64) -> String {
    serde_json::to_string(&v).expect("finite")
}

fn csv_writer<W: Write>(w: W, header: bool) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(header)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// One CSV data line, LF-terminated, without the header.
pub(crate) fn csv_line(row: &StoredRow) -> Vec<u8> {
    let mut w = csv_writer(Vec::new(), false);
    w.serialize(Record::from(row)).expect("in-memory csv write");
    w.into_inner().expect("in-memory csv flush")
}

pub fn write_rows<W: Write>(rows: &[StoredRow], format: Format, mut out: W) -> io::Result<()> {
    match format {
        Format::Csv => {
            out.write_all(CSV_HEADER.as_bytes())?;
            out.write_all(b"\n")?;
            let mut w = csv_writer(out, false);
            for row in rows {
                w.serialize(Record::from(row)).map_err(io::Error::other)?;
            }
            w.flush()
        }
        Format::Json => {
            let records: Vec<Record> = rows.iter().map(Record::from).collect();
            serde_json::to_writer_pretty(&mut out, &records)?;
            out.write_all(b"\n")
        }
        Format::Xml => write_xml(rows, out),
    }
}

pub fn to_bytes(rows: &[StoredRow], format: Format) -> Vec<u8> {
    let mut out = Vec::new();
    write_rows(rows, format, &mut out).expect("in-memory export");
    out
}

fn write_xml<W: Write>(rows: &[StoredRow], out: W) -> io::Result<()> {
    let mut w = Writer::new_with_indent(out, b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))?;
    w.write_event(Event::Start(BytesStart::new("readings")))?;
    for row in rows {
        let r = Record::from(row);
        let (depth, seq, value) = (r.depth_cm.to_string(), r.seq.to_string(), number(r.value));
        let vwc = r.vwc_percent.map(number).unwrap_or_default();
        let attrs = [
            r.timestamp.as_str(),
            &r.recv_timestamp,
            &r.profile,
            &depth,
            r.channel.as_str(),
            &seq,
            &value,
            &vwc,
        ];
        let el = BytesStart::new("reading").with_attributes(FIELDS.into_iter().zip(attrs));
        w.write_event(Event::Empty(el))?;
    }
    w.write_event(Event::End(BytesEnd::new("readings")))?;
    w.into_inner().write_all(b"\n")
}

pub fn read_rows(bytes: &[u8], format: Format) -> Result<Vec<StoredRow>, DecodeError> {
    let records = match format {
        Format::Csv => read_csv(bytes)?,
        Format::Json => serde_json::from_slice(bytes)?,
        Format::Xml => read_xml(bytes)?,
    };
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_row().map_err(|message| DecodeError::Row { row: i + 1, message }))
        .collect()
}

fn read_csv(bytes: &[u8]) -> Result<Vec<Record>, DecodeError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<&str> = rdr.headers()?.iter().collect();
    if header.join(",") != CSV_HEADER {
        return Err(DecodeError::Header(header.join(",")));
    }
    rdr.deserialize().map(|r| r.map_err(DecodeError::from)).collect()
}

fn read_xml(bytes: &[u8]) -> Result<Vec<Record>, DecodeError> {
    let xml_err = |e: &dyn fmt::Display| DecodeError::Xml(e.to_string());
    let mut reader = Reader::from_reader(bytes);
    let mut buf = Vec::new();
    let mut out = Vec::new();
    loop {
        match reader.read_event_into(&mut buf).map_err(|e| xml_err(&e))? {
            Event::Eof => break,
            Event::Empty(e) | Event::Start(e) if e.name().as_ref() == b"reading" => {
                let mut values: [Option<String>; 8] = Default::default();
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| xml_err(&e))?;
                    let key = std::str::from_utf8(attr.key.as_ref()).map_err(|e| xml_err(&e))?;
                    let idx = FIELDS
                        .iter()
                        .position(|f| *f == key)
                        .ok_or_else(|| DecodeError::Xml(format!("unknown attribute {key:?}")))?;
                    let value = attr.unescape_value().map_err(|e| xml_err(&e))?;
                    values[idx] = Some(value.into_owned());
                }
                let row = out.len() + 1;
                let mut take = |i: usize| {
                    values[i]
                        .take()
                        .ok_or_else(|| DecodeError::Row { row, message: format!("missing {}", FIELDS[i]) })
                };
                let parse_err = |what: &str| DecodeError::Row { row, message: format!("bad {what}") };
                out.push(Record {
                    timestamp: take(0)?,
                    recv_timestamp: take(1)?,
                    profile: take(2)?,
                    depth_cm: take(3)?.parse().map_err(|_| parse_err("depth_cm"))?,
                    channel: take(4)?.parse().map_err(|_| parse_err("channel"))?,
                    seq: take(5)?.parse().map_err(|_| parse_err("seq"))?,
                    value: take(6)?.parse().map_err(|_| parse_err("value"))?,
                    vwc_percent: match take(7)?.as_str() {
                        "" => None,
                        s => Some(s.parse().map_err(|_| parse_err("vwc_percent"))?),
                    },
                });
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(out)
}
