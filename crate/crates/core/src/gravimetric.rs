//! Oven-dry (gravimetric) reference measurement of soil water content.

use alloc::string::String;

/// Density of water used when a sample does not specify one, g/cm³.
pub const DEFAULT_WATER_DENSITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GravimetricError {
    #[error("dry mass must be positive")]
    NonPositiveDryMass,
    #[error("wet mass is below dry mass")]
    NegativeWater,
    #[error("densities must be positive")]
    NonPositiveDensity,
}

/// A field soil sample weighed before and after oven drying.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GravimetricSample {
    pub mass_wet_g: f64,
    pub mass_dry_g: f64,
    /// Dry soil mass per sample volume.
    pub bulk_density_g_cm3: f64,
    pub water_density_g_cm3: f64,
    pub site_tag: String,
    pub depth_cm: u32,
}

impl GravimetricSample {
    pub fn new(mass_wet_g: f64, mass_dry_g: f64, bulk_density_g_cm3: f64) -> Self {
        Self {
            mass_wet_g,
            mass_dry_g,
            bulk_density_g_cm3,
            water_density_g_cm3: DEFAULT_WATER_DENSITY,
            site_tag: String::new(),
            depth_cm: 0,
        }
    }
}

/// Volumetric water content of a sample as a fraction (×100 for percent).
///
/// Gravimetric water content `(m_wet − m_dry) / m_dry` scaled by the ratio of
/// bulk density to water density.
pub fn gravimetric_vwc(sample: &GravimetricSample) -> Result<f64, GravimetricError> {
    let dry = sample.mass_dry_g;
    if !(dry > 0.0) {
        return Err(GravimetricError::NonPositiveDryMass);
    }
    if !(sample.bulk_density_g_cm3 > 0.0 && sample.water_density_g_cm3 > 0.0) {
        return Err(GravimetricError::NonPositiveDensity);
    }
    if !(sample.mass_wet_g >= dry) {
        return Err(GravimetricError::NegativeWater);
    }
    let water_ratio = (sample.mass_wet_g - dry) / dry;
    Ok(water_ratio * (sample.bulk_density_g_cm3 / sample.water_density_g_cm3))
}
