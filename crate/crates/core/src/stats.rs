//! Validation statistics: RMSE, Pearson correlation, extrema, per-depth
//! variability and the surface/subsurface contrast.
//!
//! Standard deviations use the sample (n − 1) convention throughout.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::reading::{Channel, StoredRow};

/// Depth separating the surface from the subsurface layer.
pub const LAYER_BOUNDARY_CM: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("series is empty")]
    EmptySeries,
    #[error("need data on both sides of the {LAYER_BOUNDARY_CM} cm layer boundary")]
    MissingLayer,
    #[error("reference {0:?} overlaps the sensor series in fewer than 2 points")]
    NoOverlap(alloc::string::String),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Root of the mean squared difference.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check_pair(a, b)?;
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(libm::sqrt(sq / a.len() as f64))
}

/// Sample Pearson correlation. `None` when either series has zero variance
/// or fewer than two points.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>, StatsError> {
    check_pair(a, b)?;
    if a.len() < 2 {
        return Ok(None);
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (libm::sqrt(saa) * libm::sqrt(sbb))).clamp(-1.0, 1.0)))
}

/// Descriptive statistics of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Stats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Undefined for fewer than two values.
    pub std: Option<f64>,
    /// `std / mean`; undefined when the mean is zero.
    pub cv: Option<f64>,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Result<Self, StatsError> {
        if xs.is_empty() {
            return Err(StatsError::EmptySeries);
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in xs {
            min = min.min(x);
            max = max.max(x);
        }
        let m = mean(xs);
        let std = (xs.len() >= 2).then(|| {
            let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
            libm::sqrt(ss / (xs.len() - 1) as f64)
        });
        let cv = std.filter(|_| m != 0.0).map(|s| s / m);
        Ok(Self { n: xs.len(), min, max, mean: m, std, cv })
    }
}

/// A quantity derived from stored rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Measure {
    /// Calibrated water content, percent.
    Vwc,
    /// Raw moisture probe voltage.
    Voltage,
    Temperature,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Vwc => "vwc",
            Measure::Voltage => "voltage",
            Measure::Temperature => "temperature",
        }
    }

    /// Value of this measure carried by `row`, if any.
    pub fn of_row(self, row: &StoredRow) -> Option<f64> {
        match (self, row.reading.channel) {
            (Measure::Vwc, Channel::MoistureVoltage) => row.vwc_percent,
            (Measure::Voltage, Channel::MoistureVoltage) => Some(row.reading.value),
            (Measure::Temperature, Channel::TemperatureC) => Some(row.reading.value),
            _ => None,
        }
    }

    pub const ALL: [Measure; 3] = [Measure::Vwc, Measure::Voltage, Measure::Temperature];
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Measure {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Measure::ALL.into_iter().find(|m| m.as_str() == s).ok_or(())
    }
}

/// Values of `measure` grouped by depth, in row order.
pub fn values_by_depth(rows: &[StoredRow], measure: Measure) -> BTreeMap<u32, Vec<f64>> {
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = measure.of_row(row) {
            out.entry(row.reading.depth_cm).or_default().push(v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MeasureSummary {
    pub overall: Stats,
    pub by_depth: BTreeMap<u32, Stats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Summary {
    pub measures: BTreeMap<Measure, MeasureSummary>,
}

impl Summary {
    pub fn get(&self, measure: Measure) -> Option<&MeasureSummary> {
        self.measures.get(&measure)
    }
}

/// Extrema, mean, std and CV per measure, overall and per depth.
pub fn summarize(rows: &[StoredRow]) -> Result<Summary, StatsError> {
    if rows.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    let mut summary = Summary::default();
    for measure in Measure::ALL {
        let by_depth = values_by_depth(rows, measure);
        if by_depth.is_empty() {
            continue;
        }
        let all: Vec<f64> = by_depth.values().flatten().copied().collect();
        let per_depth = by_depth
            .iter()
            .map(|(d, xs)| Stats::of(xs).map(|s| (*d, s)))
            .collect::<Result<_, _>>()?;
        summary.measures.insert(
            measure,
            MeasureSummary {
                overall: Stats::of(&all)?,
                by_depth: per_depth,
            },
        );
    }
    Ok(summary)
}

/// Within-depth standard deviation pooled over a set of depths. `None` if no
/// depth has two or more values.
pub fn pooled_std<'a>(groups: impl IntoIterator<Item = &'a [f64]>) -> Option<f64> {
    let (mut ss, mut dof) = (0.0, 0usize);
    for xs in groups {
        if xs.len() < 2 {
            continue;
        }
        let m = mean(xs);
        ss += xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        dof += xs.len() - 1;
    }
    (dof > 0).then(|| libm::sqrt(ss / dof as f64))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LayerComparison {
    pub measure: Measure,
    pub surface_depths: Vec<u32>,
    pub subsurface_depths: Vec<u32>,
    pub surface_std: Option<f64>,
    pub subsurface_std: Option<f64>,
    /// Strictly greater pooled std at the surface.
    pub surface_more_variable: bool,
    pub surface_mean: f64,
    pub subsurface_mean: f64,
}

/// Compares pooled temporal variability above and below `boundary_cm`
/// (surface is `< boundary_cm`) for every measure with data on both sides.
pub fn layer_contrast(rows: &[StoredRow], boundary_cm: u32) -> Result<Vec<LayerComparison>, StatsError> {
    let mut out = Vec::new();
    for measure in Measure::ALL {
        let by_depth = values_by_depth(rows, measure);
        let (surface, subsurface): (Vec<_>, Vec<_>) = by_depth.iter().partition(|(d, _)| **d < boundary_cm);
        if surface.is_empty() || subsurface.is_empty() {
            continue;
        }
        let layer_mean = |layer: &[(&u32, &Vec<f64>)]| {
            let all: Vec<f64> = layer.iter().flat_map(|(_, xs)| xs.iter().copied()).collect();
            mean(&all)
        };
        let surface_std = pooled_std(surface.iter().map(|(_, xs)| xs.as_slice()));
        let subsurface_std = pooled_std(subsurface.iter().map(|(_, xs)| xs.as_slice()));
        out.push(LayerComparison {
            measure,
            surface_depths: surface.iter().map(|(d, _)| **d).collect(),
            subsurface_depths: subsurface.iter().map(|(d, _)| **d).collect(),
            surface_std,
            subsurface_std,
            surface_more_variable: matches!((surface_std, subsurface_std), (Some(s), Some(d)) if s > d),
            surface_mean: layer_mean(&surface),
            subsurface_mean: layer_mean(&subsurface),
        });
    }
    if out.is_empty() {
        return Err(StatsError::MissingLayer);
    }
    Ok(out)
}
