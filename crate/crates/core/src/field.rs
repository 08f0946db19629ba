//! Synthetic ground truth for a soil profile.
//!
//! Temperature is a damped diurnal sinusoid: amplitude decays and phase lags
//! with depth, and the daily mean cools toward depth. Moisture is a saturating
//! function of a "wetness" state that jumps at seeded rain events and decays
//! exponentially between them. Rain reaches deeper sensors later, weaker, and
//! drains more slowly, and deeper layers sit on a wetter floor.

use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::sim::{ProfileConfig, SimError};

const DAY_S: f64 = 86_400.0;
const HOUR_S: f64 = 3_600.0;
/// Contributions older than this many drying time constants are ignored.
const LOOKBACK_TAUS: f64 = 8.0;
const RAIN_DOMAIN: u64 = 0x5241_494E_5F45_5654;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SoilFieldModel {
    /// Water content band at the surface, percent.
    pub vwc_surface_range: (f64, f64),
    /// Temperature band over all depths, °C.
    pub temp_range: (f64, f64),
    /// Diurnal half-amplitude extrapolated to the surface, °C.
    pub diurnal_temp_amplitude_c: f64,
    /// e-folding depth of the diurnal wave. Amplitude scales by
    /// `exp(-d / D)` and phase lags by `d / D` radians.
    pub temp_damping_depth_cm: f64,
    /// Hour of day (UTC) of the surface temperature maximum.
    pub diurnal_peak_hour_utc: f64,
    /// How much cooler the deep daily mean is than the band midpoint, °C.
    pub subsurface_cooling_c: f64,
    /// Drying time constant at the surface, hours.
    pub drying_time_constant_h: f64,
    /// Relative growth of the drying time constant per centimetre of depth.
    pub drying_growth_per_cm: f64,
    pub rain_event_rate_per_day: f64,
    /// Wetness added at the surface by an average rain event.
    pub rain_wetting: f64,
    /// e-folding depth of rain response and of the wet-floor rise.
    pub moisture_damping_depth_cm: f64,
    /// Infiltration delay, hours per centimetre.
    pub infiltration_lag_h_per_cm: f64,
    /// Fraction of the surface band by which the deep floor is raised.
    pub subsurface_floor_rise: f64,
    pub noise_sigma_voltage: f64,
    pub noise_sigma_temp_c: f64,
}

impl Default for SoilFieldModel {
    fn default() -> Self {
        Self {
            vwc_surface_range: (29.46, 43.31),
            temp_range: (14.98, 23.79),
            diurnal_temp_amplitude_c: 4.4,
            temp_damping_depth_cm: 12.0,
            diurnal_peak_hour_utc: 9.0,
            subsurface_cooling_c: 2.0,
            drying_time_constant_h: 36.0,
            drying_growth_per_cm: 0.08,
            rain_event_rate_per_day: 0.3,
            rain_wetting: 1.5,
            moisture_damping_depth_cm: 60.0,
            infiltration_lag_h_per_cm: 0.5,
            subsurface_floor_rise: 0.55,
            noise_sigma_voltage: 0.005,
            noise_sigma_temp_c: 0.05,
        }
    }
}

/// Noiseless state of one depth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub vwc_percent: f64,
    pub temperature_c: f64,
}

/// A rain event, UNIX seconds, with its relative intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainEvent {
    pub at: f64,
    pub intensity: f64,
}

impl SoilFieldModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what| Err(SimError::InvalidModel(what));
        let (vlo, vhi) = self.vwc_surface_range;
        if !(vlo.is_finite() && vhi.is_finite() && vlo < vhi) {
            return bad("vwc_surface_range must be ordered");
        }
        let (tlo, thi) = self.temp_range;
        if !(tlo.is_finite() && thi.is_finite() && tlo < thi) {
            return bad("temp_range must be ordered");
        }
        let half = (thi - tlo) / 2.0;
        if !(self.diurnal_temp_amplitude_c >= 0.0 && self.diurnal_temp_amplitude_c <= half) {
            return bad("diurnal_temp_amplitude_c must lie in [0, half the temperature band]");
        }
        if !(self.subsurface_cooling_c >= 0.0 && self.subsurface_cooling_c <= half) {
            return bad("subsurface_cooling_c must lie in [0, half the temperature band]");
        }
        let positive = [
            (self.temp_damping_depth_cm, "temp_damping_depth_cm must be positive"),
            (self.drying_time_constant_h, "drying_time_constant_h must be positive"),
            (self.moisture_damping_depth_cm, "moisture_damping_depth_cm must be positive"),
        ];
        for (v, what) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(what);
            }
        }
        let non_negative = [
            (self.drying_growth_per_cm, "drying_growth_per_cm must be non-negative"),
            (self.rain_event_rate_per_day, "rain_event_rate_per_day must be non-negative"),
            (self.rain_wetting, "rain_wetting must be non-negative"),
            (self.infiltration_lag_h_per_cm, "infiltration_lag_h_per_cm must be non-negative"),
            (self.noise_sigma_voltage, "noise_sigma_voltage must be non-negative"),
            (self.noise_sigma_temp_c, "noise_sigma_temp_c must be non-negative"),
        ];
        for (v, what) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(what);
            }
        }
        if !(self.subsurface_floor_rise >= 0.0 && self.subsurface_floor_rise < 1.0) {
            return bad("subsurface_floor_rise must lie in [0, 1)");
        }
        if !self.diurnal_peak_hour_utc.is_finite() {
            return bad("diurnal_peak_hour_utc must be finite");
        }
        Ok(())
    }

    /// Diurnal temperature half-amplitude at `depth_cm`. Strictly decreasing.
    pub fn temp_amplitude_c(&self, depth_cm: u32) -> f64 {
        self.diurnal_temp_amplitude_c * self.temp_attenuation(depth_cm)
    }

    /// Phase lag of the diurnal wave at `depth_cm`, radians. Strictly increasing.
    pub fn temp_phase_lag(&self, depth_cm: u32) -> f64 {
        f64::from(depth_cm) / self.temp_damping_depth_cm
    }

    fn temp_attenuation(&self, depth_cm: u32) -> f64 {
        libm::exp(-f64::from(depth_cm) / self.temp_damping_depth_cm)
    }

    fn moisture_attenuation(&self, depth_cm: u32) -> f64 {
        libm::exp(-f64::from(depth_cm) / self.moisture_damping_depth_cm)
    }

    /// Daily mean temperature at `depth_cm`.
    pub fn temp_mean_c(&self, depth_cm: u32) -> f64 {
        let (lo, hi) = self.temp_range;
        (lo + hi) / 2.0 - self.subsurface_cooling_c * (1.0 - self.temp_attenuation(depth_cm))
    }

    pub fn drying_time_constant_at_h(&self, depth_cm: u32) -> f64 {
        self.drying_time_constant_h * (1.0 + self.drying_growth_per_cm * f64::from(depth_cm))
    }

    /// Range the noiseless water content can take at `depth_cm`, percent.
    /// Nested: deeper bands lie inside shallower ones.
    pub fn vwc_band(&self, depth_cm: u32) -> (f64, f64) {
        let (lo, hi) = self.vwc_surface_range;
        let rise = self.subsurface_floor_rise * (1.0 - self.moisture_attenuation(depth_cm));
        (lo + (hi - lo) * rise, hi)
    }

    /// Rain events whose day index falls in `[first_day, last_day]`.
    pub fn rain_events(&self, seed: u64, first_day: i64, last_day: i64) -> impl Iterator<Item = RainEvent> + '_ {
        (first_day..=last_day).flat_map(move |day| self.rain_on_day(seed, day))
    }

    fn rain_on_day(&self, seed: u64, day: i64) -> impl Iterator<Item = RainEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RAIN_DOMAIN);
        rng.set_stream(day as u64);
        let count = if self.rain_event_rate_per_day > 0.0 {
            Poisson::new(self.rain_event_rate_per_day)
                .map(|p| p.sample(&mut rng) as u32)
                .unwrap_or(0)
        } else {
            0
        };
        let start = day as f64 * DAY_S;
        (0..count).map(move |_| RainEvent {
            at: start + rng.random::<f64>() * DAY_S,
            intensity: rng.random_range(0.5..1.5),
        })
    }

    fn wetness(&self, seed: u64, t: f64, depth_cm: u32) -> f64 {
        let tau_s = self.drying_time_constant_at_h(depth_cm) * HOUR_S;
        let lag_s = self.infiltration_lag_h_per_cm * f64::from(depth_cm) * HOUR_S;
        let gain = self.rain_wetting * self.moisture_attenuation(depth_cm);
        let arrival_horizon = t - lag_s;
        let first_day = libm::floor((arrival_horizon - LOOKBACK_TAUS * tau_s) / DAY_S) as i64;
        let last_day = libm::floor(arrival_horizon / DAY_S) as i64;
        self.rain_events(seed, first_day, last_day)
            .filter(|e| e.at <= arrival_horizon)
            .map(|e| gain * e.intensity * libm::exp(-(arrival_horizon - e.at) / tau_s))
            .sum()
    }

    /// Noiseless water content and temperature at UNIX second `t`.
    pub fn ground_truth(&self, profile: &ProfileConfig, t: i64, depth_cm: u32) -> Result<Truth, SimError> {
        if !profile.depths_cm.contains(&depth_cm) {
            return Err(SimError::UnknownDepth(depth_cm));
        }
        Ok(self.truth_unchecked(profile.seed, t, depth_cm))
    }

    pub(crate) fn truth_unchecked(&self, seed: u64, t: i64, depth_cm: u32) -> Truth {
        let t = t as f64;
        let phase = TAU * (t - self.diurnal_peak_hour_utc * HOUR_S) / DAY_S + core::f64::consts::FRAC_PI_2
            - self.temp_phase_lag(depth_cm);
        let temperature_c = self.temp_mean_c(depth_cm) + self.temp_amplitude_c(depth_cm) * libm::sin(phase);

        let (floor, ceil) = self.vwc_band(depth_cm);
        let wet = self.wetness(seed, t, depth_cm);
        let vwc_percent = floor + (ceil - floor) * (1.0 - libm::exp(-wet));
        Truth { vwc_percent, temperature_c }
    }
}
