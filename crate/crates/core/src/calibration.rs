//! Quadratic calibration from capacitive probe voltage to volumetric water
//! content (VWC, percent).
//!
//! A model is `θ = a·x² + b·x + c` where `x` is either the reciprocal of the
//! probe voltage (the default, which matches the published calibration
//! table) or the raw voltage.

use alloc::vec::Vec;

use crate::linalg::solve3;
use crate::reading::{Channel, Ident, RawReading};

/// Published field calibration, quadratic in reciprocal voltage.
pub const PUBLISHED_COEFFICIENTS: (f64, f64, f64) = (-71.789, 158.04, -37.711);

/// Voltage window searched when inverting a model.
pub const INVERSION_WINDOW_V: (f64, f64) = (0.5, 3.3);

/// Physically meaningful VWC band. Values outside are kept but flagged.
pub const VALID_VWC_PERCENT: (f64, f64) = (0.0, 100.0);

const SINGULAR_REL_TOL: f64 = 1e-12;
/// Smallest abscissa spread, relative to the abscissa mean, that still
/// determines three coefficients in double precision.
const MIN_RELATIVE_SPREAD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CalibrationError {
    #[error("voltage must be positive for a reciprocal-voltage model")]
    ZeroVoltage,
    #[error("need at least 3 points with distinct transformed voltages")]
    InsufficientPoints,
    #[error("least-squares design matrix is singular")]
    SingularSystem,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("no voltage in the physical window maps to the requested water content")]
    NotInvertible,
    #[error("reading is not a moisture reading")]
    WrongChannel,
}

/// How the probe voltage enters the polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Transform {
    /// `x = 1 / V`
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "reciprocal"))]
    ReciprocalVoltage,
    /// `x = V`
    #[cfg_attr(feature = "serde", serde(rename = "identity"))]
    IdentityVoltage,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::ReciprocalVoltage => "reciprocal",
            Transform::IdentityVoltage => "identity",
        }
    }

    pub fn apply(self, voltage: f64) -> Result<f64, CalibrationError> {
        if !voltage.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        match self {
            Transform::ReciprocalVoltage if voltage <= 0.0 => Err(CalibrationError::ZeroVoltage),
            Transform::ReciprocalVoltage => Ok(1.0 / voltage),
            Transform::IdentityVoltage => Ok(voltage),
        }
    }

    fn invert(self, x: f64) -> Option<f64> {
        match self {
            Transform::ReciprocalVoltage => (x > 0.0).then(|| 1.0 / x),
            Transform::IdentityVoltage => Some(x),
        }
    }
}

impl core::str::FromStr for Transform {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reciprocal" => Ok(Transform::ReciprocalVoltage),
            "identity" => Ok(Transform::IdentityVoltage),
            _ => Err(()),
        }
    }
}

/// Goodness of fit on the calibration points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    /// Root-mean-square residual, %VWC.
    pub rmse: f64,
    pub r2: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub transform: Transform,
    /// Present for models produced by [`CalibrationModel::fit`].
    pub fit: Option<FitStats>,
}

impl Default for CalibrationModel {
    fn default() -> Self {
        Self::published()
    }
}

impl CalibrationModel {
    pub fn new(a: f64, b: f64, c: f64, transform: Transform) -> Self {
        Self { a, b, c, transform, fit: None }
    }

    /// The field calibration of the reference deployment.
    pub fn published() -> Self {
        let (a, b, c) = PUBLISHED_COEFFICIENTS;
        Self::new(a, b, c, Transform::ReciprocalVoltage)
    }

    fn poly(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    /// Water content in percent for a probe voltage. The polynomial value is
    /// returned unclamped; see [`vwc_in_valid_range`].
    pub fn apply(&self, voltage: f64) -> Result<f64, CalibrationError> {
        Ok(self.poly(self.transform.apply(voltage)?))
    }

    /// dθ/dV at `voltage`.
    pub fn slope(&self, voltage: f64) -> Result<f64, CalibrationError> {
        let x = self.transform.apply(voltage)?;
        let dtheta_dx = 2.0 * self.a * x + self.b;
        Ok(match self.transform {
            Transform::ReciprocalVoltage => -dtheta_dx * x * x,
            Transform::IdentityVoltage => dtheta_dx,
        })
    }

    /// Ordinary least-squares quadratic fit of VWC (percent) on the
    /// transformed voltage.
    ///
    /// The abscissae are centred and scaled before the normal equations are
    /// formed, then the coefficients are mapped back.
    pub fn fit(points: &[(f64, f64)], transform: Transform) -> Result<Self, CalibrationError> {
        let mut xs = Vec::with_capacity(points.len());
        for &(v, y) in points {
            if !y.is_finite() {
                return Err(CalibrationError::NonFinite);
            }
            xs.push(transform.apply(v)?);
        }
        let mut distinct = xs.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(CalibrationError::InsufficientPoints);
        }

        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let spread = xs.iter().fold(0.0f64, |acc, x| acc.max((x - mean).abs()));
        if !(spread > MIN_RELATIVE_SPREAD * mean.abs()) || !spread.is_finite() {
            return Err(CalibrationError::SingularSystem);
        }

        // Gram matrix of the columns [u², u, 1] with u = (x - mean) / spread.
        let mut gram = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for (x, &(_, y)) in xs.iter().zip(points) {
            let u = (x - mean) / spread;
            let cols = [u * u, u, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    gram[i][j] += cols[i] * cols[j];
                }
                rhs[i] += cols[i] * y;
            }
        }
        let [p2, p1, p0] = solve3(gram, rhs, SINGULAR_REL_TOL).ok_or(CalibrationError::SingularSystem)?;

        let s2 = spread * spread;
        let a = p2 / s2;
        let b = p1 / spread - 2.0 * mean * p2 / s2;
        let c = p2 * mean * mean / s2 - p1 * mean / spread + p0;
        let mut model = Self::new(a, b, c, transform);

        let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for (x, &(_, y)) in xs.iter().zip(points) {
            let r = y - model.poly(*x);
            ss_res += r * r;
            ss_tot += (y - y_mean) * (y - y_mean);
        }
        let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        model.fit = Some(FitStats {
            rmse: libm::sqrt(ss_res / n),
            r2,
            n_points: points.len(),
        });
        Ok(model)
    }

    /// Probe voltage that this model maps to `vwc_percent`.
    ///
    /// Only roots inside [`INVERSION_WINDOW_V`] (lower bound exclusive) are
    /// considered. When two roots qualify, the one on the branch where water
    /// content falls as voltage rises wins, then the higher voltage.
    pub fn voltage_for(&self, vwc_percent: f64) -> Result<f64, CalibrationError> {
        if !vwc_percent.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        let (a, b, c) = (self.a, self.b, self.c - vwc_percent);
        let mut roots = [f64::NAN; 2];
        if a == 0.0 {
            if b != 0.0 {
                roots[0] = -c / b;
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return Err(CalibrationError::NotInvertible);
            }
            let q = -0.5 * (b + libm::copysign(libm::sqrt(disc), b));
            if q != 0.0 {
                roots = [q / a, c / q];
            } else {
                roots[0] = 0.0;
            }
        }

        let (lo, hi) = INVERSION_WINDOW_V;
        let mut best: Option<(bool, f64)> = None;
        for x in roots.into_iter().filter(|x| x.is_finite()) {
            let Some(v) = self.transform.invert(x) else { continue };
            if !(v > lo && v <= hi) {
                continue;
            }
            let falling = self.slope(v).map(|s| s < 0.0).unwrap_or(false);
            let candidate = (falling, v);
            best = match best {
                Some(cur) if (cur.0, cur.1) >= (candidate.0, candidate.1) => Some(cur),
                _ => Some(candidate),
            };
        }
        let (_, mut v) = best.ok_or(CalibrationError::NotInvertible)?;

        // Newton polish; keep a step only if it reduces the error.
        for _ in 0..3 {
            let err = self.apply(v)? - vwc_percent;
            let slope = self.slope(v)?;
            if err == 0.0 || slope == 0.0 {
                break;
            }
            let next = v - err / slope;
            if next > lo && next <= hi && (self.apply(next)? - vwc_percent).abs() < err.abs() {
                v = next;
            } else {
                break;
            }
        }
        Ok(v)
    }
}

pub fn vwc_in_valid_range(vwc_percent: f64) -> bool {
    let (lo, hi) = VALID_VWC_PERCENT;
    vwc_percent >= lo && vwc_percent <= hi
}

/// A moisture reading converted to water content.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSample {
    pub vwc_percent: f64,
    pub temperature_c: Option<f64>,
    pub profile_id: Ident,
    pub depth_cm: u32,
    pub timestamp: i64,
    /// False when `vwc_percent` lies outside 0–100 %.
    pub in_valid_range: bool,
}

impl CalibratedSample {
    pub fn from_reading(
        model: &CalibrationModel,
        moisture: &RawReading,
        temperature_c: Option<f64>,
    ) -> Result<Self, CalibrationError> {
        if moisture.channel != Channel::MoistureVoltage {
            return Err(CalibrationError::WrongChannel);
        }
        let vwc_percent = model.apply(moisture.value)?;
        Ok(Self {
            vwc_percent,
            temperature_c,
            profile_id: moisture.profile_id.clone(),
            depth_cm: moisture.depth_cm,
            timestamp: moisture.timestamp,
            in_valid_range: vwc_in_valid_range(vwc_percent),
        })
    }
}
