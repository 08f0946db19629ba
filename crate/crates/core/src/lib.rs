//! Numerics and protocol logic for a multi-depth soil moisture and soil
//! temperature monitoring network.
//!
//! The crate is `no_std` (with `alloc`) so the same code can run on a sensor
//! node or inside the ingestion gateway. Everything here is pure: IO, sockets
//! and file formats live in the `soilnet` crate.
//!
//! * [`calibration`]: quadratic calibration curves from capacitive sensor
//!   voltage to volumetric water content, least-squares fitting and inversion.
//! * [`gravimetric`]: the oven-dry reference measurement.
//! * [`temperature`]: DS18B20 raw register decoding.
//! * [`field`] and [`sim`]: deterministic synthetic soil profiles.
//! * [`protocol`] and [`gateway`]: the line-based publish protocol and the
//!   gateway's dedup/ordering state.
//! * [`stats`] and [`report`]: validation statistics and report tables.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calibration;
pub mod field;
pub mod gateway;
pub mod gravimetric;
mod linalg;
pub mod protocol;
pub mod reading;
pub mod report;
pub mod sim;
pub mod stats;
pub mod temperature;

pub use calibration::{CalibratedSample, CalibrationError, CalibrationModel, FitStats, Transform};
pub use gravimetric::{gravimetric_vwc, GravimetricError, GravimetricSample};
pub use reading::{Channel, Ident, IdentError, RawReading, StoredRow, StreamKey};
pub use temperature::decode_ds18b20;

/// Formats a float with the shortest decimal representation that parses back
/// to the same value. Large and tiny magnitudes switch to exponent notation.
pub fn fmt_f64(value: f64) -> alloc::string::String {
    alloc::format!("{value:?}")
}
