//! Six-decimal fixed-point helpers.
//!
//! Simulated time and sensor readings are snapped to the same grid the CSV
//! files use, so a value written with [`format6`] parses back to the
//! identical `f64`. This is what lets a replayed recording drive the
//! controller through exactly the same decisions as the live run.

const SCALE: f64 = 1e6;

/// Rounds to the nearest multiple of 1e-6.
pub fn quantize6(x: f64) -> f64 {
    (x * SCALE).round() / SCALE
}

/// Fixed 6-decimal rendering used by every CSV writer.
pub fn format6(x: f64) -> String {
    format!("{x:.6}")
}
