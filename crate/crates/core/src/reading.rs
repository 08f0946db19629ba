use alloc::string::String;
use core::fmt;
use core::str::FromStr;

/// Maximum identifier length in bytes.
pub const IDENT_MAX_LEN: usize = 64;

/// Physical output window of the capacitive moisture probe, volts.
pub const VOLTAGE_RANGE: (f64, f64) = (0.0, 3.3);

/// Measurement range of the DS18B20 probe, degrees Celsius.
pub const TEMPERATURE_RANGE: (f64, f64) = (-55.0, 125.0);

/// Default installation depths of one profile, centimetres below the surface.
pub const DEFAULT_DEPTHS_CM: [u32; 4] = [5, 15, 50, 100];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentError {
    #[error("identifier is empty")]
    Empty,
    #[error("identifier longer than {IDENT_MAX_LEN} bytes")]
    TooLong,
    #[error("identifier contains {0:?}; allowed are ASCII letters, digits, '_', '-', '.'")]
    BadChar(char),
    #[error("identifier may not be '.' or '..'")]
    Dots,
}

/// A site, profile or node identifier.
///
/// Restricted to `[A-Za-z0-9_.-]` so it can be used verbatim as a topic
/// segment and as a directory name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct Ident(String);

impl Ident {
    pub fn new(s: &str) -> Result<Self, IdentError> {
        if s.is_empty() {
            return Err(IdentError::Empty);
        }
        if s.len() > IDENT_MAX_LEN {
            return Err(IdentError::TooLong);
        }
        if s == "." || s == ".." {
            return Err(IdentError::Dots);
        }
        if let Some(c) = s
            .chars()
            .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')))
        {
            return Err(IdentError::BadChar(c));
        }
        Ok(Self(String::from(s)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Ident {
    type Err = IdentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for Ident {
    type Error = IdentError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(&s)
    }
}

impl From<Ident> for String {
    fn from(id: Ident) -> Self {
        id.0
    }
}

/// What a reading measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Channel {
    /// Capacitive probe output in volts.
    #[cfg_attr(feature = "serde", serde(rename = "moisture"))]
    MoistureVoltage,
    /// DS18B20 temperature in degrees Celsius.
    #[cfg_attr(feature = "serde", serde(rename = "temperature"))]
    TemperatureC,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::MoistureVoltage, Channel::TemperatureC];

    /// Name used in topics and export files.
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::MoistureVoltage => "moisture",
            Channel::TemperatureC => "temperature",
        }
    }

    /// Inclusive physical range of the channel's sensor.
    pub fn range(self) -> (f64, f64) {
        match self {
            Channel::MoistureVoltage => VOLTAGE_RANGE,
            Channel::TemperatureC => TEMPERATURE_RANGE,
        }
    }

    pub fn in_range(self, value: f64) -> bool {
        let (lo, hi) = self.range();
        value.is_finite() && value >= lo && value <= hi
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moisture" => Ok(Channel::MoistureVoltage),
            "temperature" => Ok(Channel::TemperatureC),
            _ => Err(()),
        }
    }
}

/// Identity of one sensor stream. Sequence numbers are ordered per key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub profile_id: Ident,
    pub depth_cm: u32,
    pub channel: Channel,
}

/// One timestamped sample from a sensor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawReading {
    pub profile_id: Ident,
    pub depth_cm: u32,
    pub channel: Channel,
    /// Volts for moisture, degrees Celsius for temperature.
    pub value: f64,
    /// Node clock, UNIX seconds.
    pub timestamp: i64,
    pub seq: u64,
}

impl RawReading {
    pub fn stream_key(&self) -> StreamKey {
        StreamKey {
            profile_id: self.profile_id.clone(),
            depth_cm: self.depth_cm,
            channel: self.channel,
        }
    }

    /// Depth is positive and the value lies inside the sensor's range.
    pub fn is_valid(&self) -> bool {
        self.depth_cm > 0 && self.channel.in_range(self.value)
    }
}

/// A reading as persisted by the gateway.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StoredRow {
    pub reading: RawReading,
    /// Gateway clock at receipt, UNIX seconds.
    pub recv_timestamp: i64,
    /// Calibrated water content, moisture rows only.
    pub vwc_percent: Option<f64>,
}

impl StoredRow {
    /// True when the node clock runs ahead of the gateway by more than
    /// `allowed_skew_s`. Skewed rows are kept, only flagged.
    pub fn is_skewed(&self, allowed_skew_s: i64) -> bool {
        self.recv_timestamp < self.reading.timestamp.saturating_sub(allowed_skew_s)
    }
}
