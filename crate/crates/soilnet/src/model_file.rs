//! Calibration model interchange document and calibration pair files.

use std::io::Read;

use serde::{Deserialize, Serialize};
use soilnet_core::{CalibrationModel, FitStats, Transform};

/// `{"a":..,"b":..,"c":..,"transform":"reciprocal","fit_rmse":..,"fit_r2":..,"n_points":..}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub transform: Transform,
    #[serde(default)]
    pub fit_rmse: Option<f64>,
    #[serde(default)]
    pub fit_r2: Option<f64>,
    #[serde(default)]
    pub n_points: Option<usize>,
}

impl From<&CalibrationModel> for ModelDocument {
    fn from(m: &CalibrationModel) -> Self {
        Self {
            a: m.a,
            b: m.b,
            c: m.c,
            transform: m.transform,
            fit_rmse: m.fit.map(|f| f.rmse),
            fit_r2: m.fit.map(|f| f.r2),
            n_points: m.fit.map(|f| f.n_points),
        }
    }
}

impl ModelDocument {
    pub fn into_model(self) -> anyhow::Result<CalibrationModel> {
        anyhow::ensure!(
            [self.a, self.b, self.c].iter().all(|v| v.is_finite()),
            "model coefficients must be finite"
        );
        let fit = match (self.fit_rmse, self.fit_r2, self.n_points) {
            (Some(rmse), Some(r2), Some(n_points)) => Some(FitStats { rmse, r2, n_points }),
            (None, None, None) => None,
            _ => anyhow::bail!("fit_rmse, fit_r2 and n_points must be given together"),
        };
        Ok(CalibrationModel {
            fit,
            ..CalibrationModel::new(self.a, self.b, self.c, self.transform)
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct");
        s.push('\n');
        s
    }
}

pub fn read_model(reader: impl Read) -> anyhow::Result<CalibrationModel> {
    let doc: ModelDocument = serde_json::from_reader(reader)?;
    doc.into_model()
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    voltage: f64,
    vwc_percent: f64,
}

/// `voltage,vwc_percent` rows with a header.
pub fn read_pairs(reader: impl Read) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<PairRecord>()
        .enumerate()
        .map(|(i, r)| {
            r.map(|p| (p.voltage, p.vwc_percent))
                .map_err(|e| anyhow::anyhow!("pairs line {}: {e}", i + 2))
        })
        .collect()
}
