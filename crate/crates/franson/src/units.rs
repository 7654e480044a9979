//! Unit conventions and conversions used throughout the crate.
//!
//! * time          seconds (f64) in the physics layer, integer ticks of
//!                 [`TICK_SECONDS`] in the tagging layer
//! * frequency     angular, rad/s
//! * wavelength    meters
//! * path lengths  centimeters only inside [`crate::medium`] (matching how
//!                 scattering coefficients are quoted)
//!
//! Gaussian spectral widths are standard deviations in angular frequency,
//! and every coherence time in this crate is the reciprocal of such a width,
//! `tau = 1 / sigma`. Conversions from bench quantities keep the two classic
//! closed forms exact under that convention:
//!
//! ```text
//! tau_pump   = L_coherence / c
//! tau_single = lambda^2 / (c * delta_lambda)
//! ```

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Duration of one time-tagger tick, seconds (4 ps).
pub const TICK_SECONDS: f64 = 4e-12;

/// Duration of one time-tagger tick, femtoseconds, as stored in tag files.
pub const TICK_FEMTOSECONDS: u32 = 4000;

/// Angular frequency (rad/s) of light with the given vacuum wavelength (m).
pub fn angular_frequency(wavelength_m: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength_m
}

/// Vacuum wavelength (m) for an angular frequency (rad/s).
pub fn wavelength(angular_freq: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / angular_freq
}
