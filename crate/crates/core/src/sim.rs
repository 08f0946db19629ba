//! Simulated sensor profiles.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::{CalibrationError, CalibrationModel};
use crate::field::SoilFieldModel;
use crate::reading::{Channel, Ident, RawReading, DEFAULT_DEPTHS_CM, TEMPERATURE_RANGE, VOLTAGE_RANGE};

/// Reporting interval of a deployed profile, seconds.
pub const DEFAULT_CADENCE_S: u32 = 900;

const NOISE_DOMAIN: u64 = 0x4E4F_4953_455F_5244;
/// Smallest voltage a node will emit.
const MIN_EMITTED_V: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("depth {0} cm is not configured for this profile")]
    UnknownDepth(u32),
    #[error("invalid field model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
    #[error("calibration cannot produce {vwc_percent} % at {depth_cm} cm: {source}")]
    NotInvertible {
        depth_cm: u32,
        vwc_percent: f64,
        source: CalibrationError,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProfileConfig {
    pub profile_id: Ident,
    /// Strictly increasing, positive.
    pub depths_cm: Vec<u32>,
    pub cadence_s: u32,
    pub seed: u64,
    /// Virtual seconds per wall-clock second; infinite runs as fast as possible.
    pub clock_scale: f64,
}

impl ProfileConfig {
    /// Four depths at a 15 minute cadence in batch mode.
    pub fn new(profile_id: Ident, seed: u64) -> Self {
        Self {
            profile_id,
            depths_cm: DEFAULT_DEPTHS_CM.to_vec(),
            cadence_s: DEFAULT_CADENCE_S,
            seed,
            clock_scale: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.depths_cm.is_empty() {
            return Err(SimError::InvalidProfile("depths_cm is empty"));
        }
        if self.depths_cm[0] == 0 || self.depths_cm.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::InvalidProfile("depths_cm must be positive and strictly increasing"));
        }
        if self.cadence_s == 0 {
            return Err(SimError::InvalidProfile("cadence_s must be positive"));
        }
        if !(self.clock_scale >= 1.0) {
            return Err(SimError::InvalidProfile("clock_scale must be at least 1"));
        }
        Ok(())
    }

    /// Sequence number of the tick at `t`; identical for every stream of the
    /// profile and stable across node restarts.
    pub fn seq_at(&self, t: i64) -> u64 {
        t.max(0).div_euclid(i64::from(self.cadence_s)) as u64
    }

    pub fn is_aligned(&self, t: i64) -> bool {
        t >= 0 && t % i64::from(self.cadence_s) == 0
    }
}

/// Number of cadence grid points in `[start, start + duration_s]`.
pub fn tick_count(duration_s: u64, cadence_s: u32) -> u64 {
    duration_s / u64::from(cadence_s) + 1
}

/// Virtual clock advancing in whole cadence steps.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    next: i64,
    cadence_s: i64,
    remaining: u64,
}

impl VirtualClock {
    /// Covers `[start, start + duration_s]`, both ends included. `start` is
    /// rounded up onto the cadence grid.
    pub fn new(start: i64, duration_s: u64, cadence_s: u32) -> Self {
        let cadence = i64::from(cadence_s.max(1));
        let aligned = start.max(0).div_euclid(cadence) * cadence;
        let aligned = if aligned < start { aligned + cadence } else { aligned };
        let end = start.saturating_add(duration_s as i64);
        let remaining = if end < aligned { 0 } else { ((end - aligned) / cadence) as u64 + 1 };
        Self { next: aligned, cadence_s: cadence, remaining }
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }
}

impl Iterator for VirtualClock {
    type Item = i64;

    fn next(&mut self) -> Option<i64> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let t = self.next;
        self.next += self.cadence_s;
        Some(t)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

/// A validated profile, field model and calibration ready to generate
/// readings.
#[derive(Debug, Clone)]
pub struct Simulator {
    profile: ProfileConfig,
    field: SoilFieldModel,
    cal: CalibrationModel,
}

impl Simulator {
    /// Fails if the calibration cannot map the field's water content band
    /// back to a probe voltage at every depth.
    pub fn new(profile: ProfileConfig, field: SoilFieldModel, cal: CalibrationModel) -> Result<Self, SimError> {
        profile.validate()?;
        field.validate()?;
        for &depth_cm in &profile.depths_cm {
            let (lo, hi) = field.vwc_band(depth_cm);
            for vwc_percent in [lo, hi] {
                cal.voltage_for(vwc_percent).map_err(|source| SimError::NotInvertible {
                    depth_cm,
                    vwc_percent,
                    source,
                })?;
            }
        }
        Ok(Self { profile, field, cal })
    }

    pub fn profile(&self) -> &ProfileConfig {
        &self.profile
    }

    pub fn field(&self) -> &SoilFieldModel {
        &self.field
    }

    pub fn calibration(&self) -> &CalibrationModel {
        &self.cal
    }

    /// One moisture and one temperature reading per depth at grid instant `t`.
    ///
    /// Noise is added after converting ground truth to sensor units. Output
    /// depends only on the configuration and `t`.
    pub fn step(&self, t: i64) -> Vec<RawReading> {
        debug_assert!(self.profile.is_aligned(t), "t={t} is off the cadence grid");
        let seq = self.profile.seq_at(t);
        let mut rng = ChaCha8Rng::seed_from_u64(self.profile.seed ^ NOISE_DOMAIN);
        rng.set_stream(seq);
        let volt_noise = Normal::new(0.0, self.field.noise_sigma_voltage).ok();
        let temp_noise = Normal::new(0.0, self.field.noise_sigma_temp_c).ok();

        let mut out = Vec::with_capacity(2 * self.profile.depths_cm.len());
        for &depth_cm in &self.profile.depths_cm {
            let truth = self.field.truth_unchecked(self.profile.seed, t, depth_cm);
            let clean_v = self.cal.voltage_for(truth.vwc_percent).unwrap_or_else(|_| {
                // Band ends are checked in `new`; interior values only miss
                // the window through rounding at the edges.
                let (lo, hi) = self.field.vwc_band(depth_cm);
                let nearest = if truth.vwc_percent < (lo + hi) / 2.0 { lo } else { hi };
                self.cal.voltage_for(nearest).unwrap_or(VOLTAGE_RANGE.1)
            });
            let v = clean_v + volt_noise.map_or(0.0, |n| n.sample(&mut rng));
            let temp = truth.temperature_c + temp_noise.map_or(0.0, |n| n.sample(&mut rng));
            let moisture = RawReading {
                profile_id: self.profile.profile_id.clone(),
                depth_cm,
                channel: Channel::MoistureVoltage,
                value: v.clamp(MIN_EMITTED_V, VOLTAGE_RANGE.1),
                timestamp: t,
                seq,
            };
            let temperature = RawReading {
                channel: Channel::TemperatureC,
                value: temp.clamp(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1),
                ..moisture.clone()
            };
            out.push(moisture);
            out.push(temperature);
        }
        out
    }

    /// Readings for every grid instant in `[start, start + duration_s]`.
    pub fn run(&self, start: i64, duration_s: u64) -> impl Iterator<Item = RawReading> + '_ {
        VirtualClock::new(start, duration_s, self.profile.cadence_s).flat_map(move |t| self.step(t))
    }
}

/// Free-function form of [`Simulator::step`].
pub fn step(
    profile: &ProfileConfig,
    field: &SoilFieldModel,
    cal: &CalibrationModel,
    t: i64,
) -> Result<Vec<RawReading>, SimError> {
    Ok(Simulator::new(profile.clone(), field.clone(), *cal)?.step(t))
}

/// Exponential reconnect backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub base_s: f64,
    pub cap_s: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { base_s: 1.0, cap_s: 60.0 }
    }
}

impl BackoffPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay_s(&self, attempt: u32) -> f64 {
        let factor = libm::pow(2.0, f64::from(attempt.min(1023)));
        (self.base_s * factor).min(self.cap_s)
    }
}

/// Default capacity of a node's outage buffer.
pub const DEFAULT_BUFFER_CAPACITY: usize = 10_000;

/// Bounded FIFO of unsent readings. When full, the oldest reading is dropped
/// and counted.
#[derive(Debug, Clone)]
pub struct ReadingBuffer {
    queue: VecDeque<RawReading>,
    capacity: usize,
    dropped: u64,
}

impl ReadingBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: VecDeque::new(),
            capacity: capacity.max(1),
            dropped: 0,
        }
    }

    pub fn push(&mut self, reading: RawReading) {
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
            self.dropped += 1;
        }
        self.queue.push_back(reading);
    }

    pub fn front(&self) -> Option<&RawReading> {
        self.queue.front()
    }

    pub fn pop_front(&mut self) -> Option<RawReading> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Readings lost to overflow so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl Default for ReadingBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;

    const START: i64 = 1_717_200_000;

    fn sim(seed: u64) -> Simulator {
        Simulator::new(
            ProfileConfig::new(Ident::new("p1").unwrap(), seed),
            SoilFieldModel::default(),
            CalibrationModel::published(),
        )
        .unwrap()
    }

    #[test]
    fn one_tick_is_four_pairs() {
        let readings = sim(1).step(START);
        assert_eq!(readings.len(), 8);
        let moist = readings.iter().filter(|r| r.channel == Channel::MoistureVoltage).count();
        assert_eq!(moist, 4);
        assert!(readings.iter().all(|r| r.timestamp == START && r.is_valid()));
        let depths: Vec<u32> = readings.iter().map(|r| r.depth_cm).collect();
        assert_eq!(depths, [5, 5, 15, 15, 50, 50, 100, 100]);
    }

    #[test]
    fn consecutive_ticks_increment_seq() {
        let s = sim(1);
        let a = s.step(START);
        let b = s.step(START + 900);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.stream_key(), y.stream_key());
            assert_eq!(y.seq, x.seq + 1);
        }
    }

    #[test]
    fn forty_eight_hours_is_193_ticks() {
        assert_eq!(tick_count(48 * 3600, 900), 193);
        let s = sim(1);
        let rows: Vec<_> = s.run(START, 48 * 3600).collect();
        assert_eq!(rows.len(), 193 * 8);
        let mut last: BTreeMap<_, u64> = BTreeMap::new();
        for r in &rows {
            if let Some(prev) = last.insert(r.stream_key(), r.seq) {
                assert!(r.seq > prev);
            }
            assert!(r.channel != Channel::MoistureVoltage || (r.value > 0.0 && r.value <= 3.3));
        }
    }

    #[test]
    fn byte_identical_runs() {
        let a: Vec<_> = sim(9).run(START, 6 * 3600).collect();
        let b: Vec<_> = sim(9).run(START, 6 * 3600).collect();
        assert_eq!(a, b);
        let c: Vec<_> = sim(10).run(START, 6 * 3600).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn clock_alignment() {
        let c = VirtualClock::new(START + 1, 1800, 900);
        assert_eq!(c.collect::<Vec<_>>(), [START + 900, START + 1800]);
        assert_eq!(VirtualClock::new(START, 0, 900).count(), 1);
    }

    #[test]
    fn profile_validation() {
        let mut p = ProfileConfig::new(Ident::new("p").unwrap(), 0);
        p.depths_cm = Vec::new();
        assert!(p.validate().is_err());
        p.depths_cm = alloc::vec![15, 5];
        assert!(p.validate().is_err());
        p.depths_cm = alloc::vec![0, 5];
        assert!(p.validate().is_err());
        p.depths_cm = alloc::vec![5];
        p.cadence_s = 0;
        assert!(p.validate().is_err());
        p.cadence_s = 60;
        p.clock_scale = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn uninvertible_band_rejected() {
        let mut field = SoilFieldModel::default();
        field.vwc_surface_range = (30.0, 80.0);
        let err = Simulator::new(
            ProfileConfig::new(Ident::new("p").unwrap(), 0),
            field,
            CalibrationModel::published(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::NotInvertible { .. }));
    }

    #[test]
    fn backoff_doubles_to_cap() {
        let b = BackoffPolicy::default();
        let delays: Vec<f64> = (0..8).map(|i| b.delay_s(i)).collect();
        assert_eq!(delays, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 60.0, 60.0]);
        assert_eq!(b.delay_s(u32::MAX), 60.0);
    }

    #[test]
    fn buffer_drops_oldest() {
        let s = sim(1);
        let mut buf = ReadingBuffer::new(3);
        let readings = s.step(START);
        for r in readings.iter().take(5) {
            buf.push(r.clone());
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.dropped(), 2);
        assert_eq!(buf.front(), Some(&readings[2]));
    }
}
