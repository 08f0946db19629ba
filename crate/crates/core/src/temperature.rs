/// Converts a DS18B20 scratchpad temperature register to degrees Celsius.
///
/// The register is a signed two's-complement value in 1/16 °C steps (12-bit
/// resolution).
pub fn decode_ds18b20(raw: u16) -> f64 {
    f64::from(raw as i16) / 16.0
}
