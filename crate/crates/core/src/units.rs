//! Unit conversions between laboratory units and internal units.
//!
//! Internally all rates and angular frequencies are rad/µs and times are µs.
//! Configuration files and device tables quote ordinary frequencies in Hz and
//! powers in dBm; everything funnels through the helpers here.

use std::f64::consts::PI;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Angular rad/µs from an ordinary frequency in Hz.
pub fn rad_per_us_from_hz(f_hz: f64) -> f64 {
    2.0 * PI * f_hz * 1e-6
}

/// Ordinary frequency in Hz from angular rad/µs.
pub fn hz_from_rad_per_us(w: f64) -> f64 {
    w * 1e6 / (2.0 * PI)
}

/// Watts from dBm.
pub fn watts_from_dbm(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// Photon flux in photons/µs carried by power `p_watts` at angular frequency
/// `omega` (rad/µs).
pub fn photon_flux_per_us(p_watts: f64, omega: f64) -> f64 {
    let omega_rad_per_s = omega * 1e6;
    p_watts / (HBAR * omega_rad_per_s) * 1e-6
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hz_round_trip() {
        let f = 10.9308e6;
        assert_relative_eq!(hz_from_rad_per_us(rad_per_us_from_hz(f)), f, max_relative = 1e-14);
    }

    #[test]
    fn dbm_reference_points() {
        assert_relative_eq!(watts_from_dbm(0.0), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(watts_from_dbm(-30.0), 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn flux_scale() {
        // 1 photon/s at 5 GHz corresponds to P = hbar * omega.
        let omega = rad_per_us_from_hz(5e9);
        let p = HBAR * omega * 1e6;
        assert_relative_eq!(photon_flux_per_us(p, omega), 1e-6, max_relative = 1e-12);
    }
}
