//! `timestamp,depth_cm,value` files: reference series in, plot series out.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use soilnet_core::report::ReferencePoint;
use soilnet_core::stats::Measure;
use soilnet_core::StoredRow;

use crate::timefmt::{iso8601, parse_time};

pub const SERIES_HEADER: &str = "timestamp,depth_cm,value";

#[derive(Debug, Deserialize)]
struct InRecord {
    timestamp: String,
    depth_cm: u32,
    value: f64,
}

#[derive(Debug, Serialize)]
struct OutRecord {
    timestamp: String,
    depth_cm: u32,
    value: f64,
}

/// Reference points; timestamps may be RFC 3339 or UNIX seconds.
pub fn read_reference(reader: impl Read) -> anyhow::Result<Vec<ReferencePoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<InRecord>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| anyhow::anyhow!("line {line}: {e}"))?;
        anyhow::ensure!(rec.value.is_finite(), "line {line}: value must be finite");
        out.push(ReferencePoint {
            timestamp: parse_time(&rec.timestamp).map_err(|e| anyhow::anyhow!("line {line}: {e}"))?,
            depth_cm: rec.depth_cm,
            value: rec.value,
        });
    }
    Ok(out)
}

/// Per-depth time series of `measure` in row order, ready for plotting.
pub fn write_plot_series(rows: &[StoredRow], measure: Measure, out: impl Write) -> anyhow::Result<()> {
    let mut by_depth: BTreeMap<u32, Vec<(i64, f64)>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = measure.of_row(row) {
            by_depth.entry(row.reading.depth_cm).or_default().push((row.reading.timestamp, v));
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if by_depth.is_empty() {
        w.write_record(SERIES_HEADER.split(','))?;
    }
    for (depth_cm, points) in by_depth {
        for (ts, value) in points {
            w.serialize(OutRecord {
                timestamp: iso8601(ts),
                depth_cm,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
