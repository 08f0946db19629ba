//! Validation report against external reference series (gravimetric
//! samples, a reference sensor, reanalysis products, ...).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::reading::StoredRow;
use crate::stats::{self, LayerComparison, Measure, StatsError, Summary, LAYER_BOUNDARY_CM};

/// One reference observation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferencePoint {
    pub timestamp: i64,
    pub depth_cm: u32,
    /// Same units as the sensor measure: percent VWC or °C.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSeries {
    pub label: String,
    pub measure: Measure,
    pub points: Vec<ReferencePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Largest timestamp gap for pairing a reference point with a sensor
    /// sample, seconds. Defaults to half the 15 minute cadence.
    pub tolerance_s: i64,
    pub layer_boundary_cm: u32,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            tolerance_s: 450,
            layer_boundary_cm: LAYER_BOUNDARY_CM,
        }
    }
}

/// Sensor and reference values paired by depth and nearest timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesPair {
    pub name: String,
    pub timestamps: Vec<i64>,
    pub sensor: Vec<f64>,
    pub reference: Vec<f64>,
}

impl SeriesPair {
    pub fn len(&self) -> usize {
        self.sensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor.is_empty()
    }
}

/// Pairs each reference point with the sensor sample at the same depth whose
/// timestamp is nearest, if it lies within `tolerance_s`. Equidistant
/// candidates resolve to the earlier sample.
pub fn align(rows: &[StoredRow], reference: &ReferenceSeries, tolerance_s: i64) -> SeriesPair {
    let mut by_depth: BTreeMap<u32, Vec<(i64, f64)>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = reference.measure.of_row(row) {
            by_depth.entry(row.reading.depth_cm).or_default().push((row.reading.timestamp, v));
        }
    }
    for series in by_depth.values_mut() {
        series.sort_by_key(|(t, _)| *t);
        series.dedup_by_key(|(t, _)| *t);
    }

    let mut refs = reference.points.clone();
    refs.sort_by_key(|p| (p.timestamp, p.depth_cm));
    let mut pair = SeriesPair {
        name: reference.label.clone(),
        ..SeriesPair::default()
    };
    for p in refs {
        let Some(series) = by_depth.get(&p.depth_cm) else { continue };
        let idx = series.partition_point(|(t, _)| *t < p.timestamp);
        let before = idx.checked_sub(1).map(|i| series[i]);
        let after = series.get(idx).copied();
        let nearest = match (before, after) {
            (Some(b), Some(a)) => {
                if p.timestamp - b.0 <= a.0 - p.timestamp {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => continue,
        };
        if (nearest.0 - p.timestamp).abs() <= tolerance_s {
            pair.timestamps.push(p.timestamp);
            pair.sensor.push(nearest.1);
            pair.reference.push(p.value);
        }
    }
    pair
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ReferenceRow {
    pub label: String,
    pub measure: Measure,
    pub n_pairs: usize,
    /// In the measure's unit (%VWC or °C).
    pub rmse: f64,
    /// RMSE as a volumetric fraction; VWC references only.
    pub rmse_fraction: Option<f64>,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ValidationReport {
    pub references: Vec<ReferenceRow>,
    pub summary: Summary,
    /// Absent when the rows do not cover both layers.
    pub layers: Option<Vec<LayerComparison>>,
    pub layer_boundary_cm: u32,
    pub std_convention: &'static str,
}

pub fn validation_report(
    rows: &[StoredRow],
    references: &[ReferenceSeries],
    options: &ReportOptions,
) -> Result<ValidationReport, StatsError> {
    let summary = stats::summarize(rows)?;
    let mut out = Vec::with_capacity(references.len());
    for reference in references {
        let pair = align(rows, reference, options.tolerance_s);
        if pair.len() < 2 {
            return Err(StatsError::NoOverlap(reference.label.clone()));
        }
        let rmse = stats::rmse(&pair.sensor, &pair.reference)?;
        out.push(ReferenceRow {
            label: reference.label.clone(),
            measure: reference.measure,
            n_pairs: pair.len(),
            rmse,
            rmse_fraction: (reference.measure == Measure::Vwc).then_some(rmse / 100.0),
            correlation: stats::pearson(&pair.sensor, &pair.reference)?,
        });
    }
    let layers = match stats::layer_contrast(rows, options.layer_boundary_cm) {
        Ok(l) => Some(l),
        Err(StatsError::MissingLayer) => None,
        Err(e) => return Err(e),
    };
    Ok(ValidationReport {
        references: out,
        summary,
        layers,
        layer_boundary_cm: options.layer_boundary_cm,
        std_convention: "sample (n-1)",
    })
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => alloc::format!("{v:.decimals$}"),
        None => String::from("undefined"),
    }
}

impl ValidationReport {
    /// Plain-text tables: reference comparison, study-period extrema,
    /// per-depth variability and the layer contrast.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        // Writing to a String cannot fail.
        let _ = self.write_text(&mut s);
        s
    }

    fn write_text(&self, s: &mut String) -> core::fmt::Result {
        let vwc_rows: Vec<_> = self.references.iter().filter(|r| r.measure != Measure::Temperature).collect();
        let temp_rows: Vec<_> = self.references.iter().filter(|r| r.measure == Measure::Temperature).collect();
        if !vwc_rows.is_empty() {
            writeln!(s, "RMSE AND CORRELATION WITH RESPECT TO REFERENCE OBSERVATIONS (MOISTURE)")?;
            writeln!(s, "{:<24}{:>6}{:>18}{:>14}{:>14}", "DATA SET", "N", "RMSE (FRACTION)", "RMSE (%VWC)", "CORRELATION")?;
            for r in vwc_rows {
                let (frac, pct) = match r.measure {
                    Measure::Vwc => (opt(r.rmse_fraction, 4), alloc::format!("{:.2}", r.rmse)),
                    _ => (String::from("-"), alloc::format!("{:.4} V", r.rmse)),
                };
                writeln!(s, "{:<24}{:>6}{:>18}{:>14}{:>14}", r.label, r.n_pairs, frac, pct, opt(r.correlation, 2))?;
            }
            writeln!(s)?;
        }
        if !temp_rows.is_empty() {
            writeln!(s, "RMSE AND CORRELATION WITH RESPECT TO REFERENCE OBSERVATIONS (TEMPERATURE)")?;
            writeln!(s, "{:<24}{:>6}{:>18}{:>14}", "DATA SET", "N", "RMSE (DEG C)", "CORRELATION")?;
            for r in temp_rows {
                writeln!(s, "{:<24}{:>6}{:>18.2}{:>14}", r.label, r.n_pairs, r.rmse, opt(r.correlation, 2))?;
            }
            writeln!(s)?;
        }

        writeln!(s, "MIN AND MAX VALUES OVER THE STUDY PERIOD")?;
        let extrema = [
            (Measure::Vwc, "VWC (%)"),
            (Measure::Voltage, "VOLTAGE (V)"),
            (Measure::Temperature, "TEMP (DEG C)"),
        ];
        let has_vwc = self.summary.get(Measure::Vwc).is_some();
        for (measure, name) in extrema {
            if measure == Measure::Voltage && has_vwc {
                continue;
            }
            if let Some(m) = self.summary.get(measure) {
                writeln!(s, "{:<24}{:>10.2}", alloc::format!("MINIMUM {name}"), m.overall.min)?;
                writeln!(s, "{:<24}{:>10.2}", alloc::format!("MAXIMUM {name}"), m.overall.max)?;
            }
        }
        writeln!(s)?;

        writeln!(s, "PER-DEPTH VARIABILITY (STD: {})", self.std_convention)?;
        writeln!(s, "{:<14}{:>8}{:>8}{:>10}{:>10}{:>10}", "MEASURE", "DEPTH", "N", "MEAN", "STD", "CV")?;
        for (measure, m) in &self.summary.measures {
            for (depth, st) in &m.by_depth {
                writeln!(
                    s,
                    "{:<14}{:>8}{:>8}{:>10.3}{:>10}{:>10}",
                    measure.as_str(),
                    depth,
                    st.n,
                    st.mean,
                    opt(st.std, 3),
                    opt(st.cv, 4)
                )?;
            }
        }

        if let Some(layers) = &self.layers {
            writeln!(s)?;
            writeln!(
                s,
                "SURFACE (< {b} CM) VS SUBSURFACE (>= {b} CM) VARIABILITY",
                b = self.layer_boundary_cm
            )?;
            writeln!(
                s,
                "{:<14}{:>14}{:>16}{:>14}{:>16}{:>10}",
                "MEASURE", "SURFACE STD", "SUBSURFACE STD", "SURFACE MEAN", "SUBSURFACE MEAN", "SURFACE>"
            )?;
            for l in layers {
                writeln!(
                    s,
                    "{:<14}{:>14}{:>16}{:>14.3}{:>16.3}{:>10}",
                    l.measure.as_str(),
                    opt(l.surface_std, 3),
                    opt(l.subsurface_std, 3),
                    l.surface_mean,
                    l.subsurface_mean,
                    if l.surface_more_variable { "yes" } else { "no" }
                )?;
            }
        }
        Ok(())
    }
}
