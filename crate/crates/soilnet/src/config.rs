//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! start = "2024-06-01T00:00:00Z"
//! site = "lab"
//!
//! [gateway]
//! listen = "127.0.0.1:1884"
//!
//! [calibration]
//! a = -71.789
//! b = 158.04
//! c = -37.711
//! transform = "reciprocal"
//!
//! [field]
//! rain_event_rate_per_day = 0.5
//!
//! [[profiles]]
//! id = "p1"
//! depths_cm = [5, 15, 50, 100]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use soilnet_core::calibration::{Transform, PUBLISHED_COEFFICIENTS};
use soilnet_core::field::SoilFieldModel;
use soilnet_core::reading::DEFAULT_DEPTHS_CM;
use soilnet_core::sim::{BackoffPolicy, ProfileConfig, DEFAULT_BUFFER_CAPACITY, DEFAULT_CADENCE_S};
use soilnet_core::{CalibrationModel, Ident};

use crate::gateway::DEFAULT_ALLOWED_SKEW_S;
use crate::node::{DEFAULT_ACK_TIMEOUT, DEFAULT_RETRY_BUDGET};
use crate::timefmt::parse_time;

pub const DEFAULT_ADDR: &str = "127.0.0.1:1884";
pub const DEFAULT_START: &str = "2024-06-01T00:00:00Z";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// First simulated instant, RFC 3339 or UNIX seconds.
    pub start: String,
    pub site: String,
    pub data_root: PathBuf,
    pub gateway: GatewaySection,
    pub node: NodeSection,
    pub calibration: CalibrationSection,
    pub field: SoilFieldModel,
    pub profiles: Vec<ProfileSection>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            start: DEFAULT_START.into(),
            site: "lab".into(),
            data_root: PathBuf::from("data"),
            gateway: GatewaySection::default(),
            node: NodeSection::default(),
            calibration: CalibrationSection::default(),
            field: SoilFieldModel::default(),
            profiles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
    /// Address nodes publish to.
    pub connect: String,
    pub allowed_skew_s: i64,
    pub fsync: bool,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            listen: DEFAULT_ADDR.into(),
            connect: DEFAULT_ADDR.into(),
            allowed_skew_s: DEFAULT_ALLOWED_SKEW_S,
            fsync: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSection {
    pub cadence_s: u32,
    /// Virtual seconds per wall second; `inf` for batch runs.
    pub clock_scale: f64,
    pub retry_budget: u32,
    pub ack_timeout_s: f64,
    pub backoff_base_s: f64,
    pub backoff_cap_s: f64,
    pub buffer_capacity: usize,
}

impl Default for NodeSection {
    fn default() -> Self {
        let backoff = BackoffPolicy::default();
        Self {
            cadence_s: DEFAULT_CADENCE_S,
            clock_scale: f64::INFINITY,
            retry_budget: DEFAULT_RETRY_BUDGET,
            ack_timeout_s: DEFAULT_ACK_TIMEOUT.as_secs_f64(),
            backoff_base_s: backoff.base_s,
            backoff_cap_s: backoff.cap_s,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

/// Model the gateway uses to fill `vwc_percent`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub enabled: bool,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub transform: Transform,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let (a, b, c) = PUBLISHED_COEFFICIENTS;
        Self {
            enabled: true,
            a,
            b,
            c,
            transform: Transform::ReciprocalVoltage,
        }
    }
}

impl CalibrationSection {
    pub fn model(&self) -> Option<CalibrationModel> {
        self.enabled.then(|| CalibrationModel::new(self.a, self.b, self.c, self.transform))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub id: String,
    #[serde(default)]
    pub depths_cm: Option<Vec<u32>>,
    #[serde(default)]
    pub cadence_s: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            source,
        })?;
        config.start_timestamp()?;
        config.field.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ident::new(&config.site).map_err(|e| ConfigError::Invalid(format!("site: {e}")))?;
        Ok(config)
    }

    pub fn start_timestamp(&self) -> Result<i64, ConfigError> {
        parse_time(&self.start).map_err(|e| ConfigError::Invalid(format!("start: {e}")))
    }

    pub fn site_id(&self) -> Ident {
        Ident::new(&self.site).expect("validated on load")
    }

    pub fn backoff(&self) -> BackoffPolicy {
        BackoffPolicy {
            base_s: self.node.backoff_base_s,
            cap_s: self.node.backoff_cap_s,
        }
    }

    /// Profiles to simulate. With `nodes` set, the configured list is cut or
    /// padded with `p{i}` profiles to that length. Profile `i` (0-based)
    /// without an explicit seed gets `seed + i`.
    pub fn profile_configs(&self, nodes: Option<usize>, seed: u64, cadence_s: Option<u32>) -> Result<Vec<ProfileConfig>, ConfigError> {
        let n = nodes.unwrap_or(self.profiles.len().max(1));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let section = self.profiles.get(i);
            let id = section.map_or_else(|| format!("p{}", i + 1), |s| s.id.clone());
            let profile_id = Ident::new(&id).map_err(|e| ConfigError::Invalid(format!("profile {id:?}: {e}")))?;
            let mut p = ProfileConfig::new(profile_id, seed.wrapping_add(i as u64));
            if let Some(s) = section {
                if let Some(d) = &s.depths_cm {
                    p.depths_cm = d.clone();
                }
                if let Some(seed) = s.seed {
                    p.seed = seed;
                }
                p.cadence_s = s.cadence_s.unwrap_or(self.node.cadence_s);
            } else {
                p.depths_cm = DEFAULT_DEPTHS_CM.to_vec();
                p.cadence_s = self.node.cadence_s;
            }
            if let Some(c) = cadence_s {
                p.cadence_s = c;
            }
            p.clock_scale = self.node.clock_scale;
            p.validate().map_err(|e| ConfigError::Invalid(format!("profile {id}: {e}")))?;
            out.push(p);
        }
        let mut ids: Vec<_> = out.iter().map(|p| &p.profile_id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("profile ids must be unique".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.start_timestamp().unwrap(), 1_717_200_000);
        assert_eq!(c.calibration.model(), Some(CalibrationModel::published()));
        let ps = c.profile_configs(Some(4), 10, None).unwrap();
        assert_eq!(ps.len(), 4);
        assert_eq!(ps[3].profile_id.as_str(), "p4");
        assert_eq!(ps[3].seed, 13);
        assert_eq!(ps[0].depths_cm, DEFAULT_DEPTHS_CM);
        assert!(ps[0].clock_scale.is_infinite());
    }

    #[test]
    fn sections() {
        let c = Config::parse(
            r#"
            seed = 3
            site = "iitm"
            [node]
            clock_scale = 3600.0
            [calibration]
            enabled = false
            [field]
            rain_event_rate_per_day = 0.0
            [[profiles]]
            id = "north"
            depths_cm = [10, 40]
            seed = 99
            "#,
        )
        .unwrap();
        assert_eq!(c.calibration.model(), None);
        assert_eq!(c.field.rain_event_rate_per_day, 0.0);
        let ps = c.profile_configs(None, c.seed, Some(60)).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!((ps[0].profile_id.as_str(), ps[0].seed, ps[0].cadence_s), ("north", 99, 60));
        assert_eq!(ps[0].depths_cm, [10, 40]);
        assert_eq!(ps[0].clock_scale, 3600.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("bogus = 1"), Err(ConfigError::Parse { .. })));
        assert!(matches!(Config::parse("start = \"noon\""), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("[field]\ntemp_range = [30.0, 10.0]"), Err(ConfigError::Invalid(_))));
        let dup = Config::parse("[[profiles]]\nid = \"a\"\n[[profiles]]\nid = \"a\"").unwrap();
        assert!(dup.profile_configs(None, 1, None).is_err());
        let bad_depths = Config::parse("[[profiles]]\nid = \"a\"\ndepths_cm = [50, 5]").unwrap();
        assert!(bad_depths.profile_configs(None, 1, None).is_err());
    }
}
