//! UTC timestamp formatting and parsing.

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};

#[derive(Debug, thiserror::Error)]
#[error("not a UTC timestamp (expected RFC 3339 like 2024-06-01T00:00:00Z or UNIX seconds): {0:?}")]
pub struct TimeParseError(pub String);

fn datetime(ts: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(ts, 0).unwrap_or_else(|| panic!("timestamp {ts} outside the representable range"))
}

/// `2024-06-01T00:00:00Z`.
pub fn iso8601(ts: i64) -> String {
    datetime(ts).to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// UTC calendar date containing `ts`.
pub fn utc_date(ts: i64) -> NaiveDate {
    datetime(ts).date_naive()
}

/// First second of `date`.
pub fn date_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
}

/// Accepts RFC 3339 (any offset, normalised to UTC) or integer UNIX seconds.
pub fn parse_time(s: &str) -> Result<i64, TimeParseError> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        if DateTime::from_timestamp(secs, 0).is_some() {
            return Ok(secs);
        }
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|_| TimeParseError(s.to_string()))
}

/// Exact inverse of [`iso8601`]: only the `Z`-suffixed whole-second form.
pub fn parse_iso8601(s: &str) -> Result<i64, TimeParseError> {
    let t = DateTime::parse_from_rfc3339(s).map_err(|_| TimeParseError(s.to_string()))?;
    if iso8601(t.timestamp()) != s {
        return Err(TimeParseError(s.to_string()));
    }
    Ok(t.timestamp())
}
