//! Unit conventions and conversions.
//!
//! Every frequency-like quantity inside the library is an *angular* rate in
//! rad/s. Interfaces that accept ordinary-frequency values (MHz, kHz, Hz —
//! cycles per second) convert at the boundary with the helpers below, so a
//! stray factor of 2π cannot hide in the middle of a simulation.
//! Durations are seconds; angles are radians; magnetic fields are gauss.

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Ordinary frequency in MHz (cycles) → angular rate in rad/s.
pub fn mhz_to_radps(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz * 1e6
}

/// Ordinary frequency in kHz (cycles) → angular rate in rad/s.
pub fn khz_to_radps(f_khz: f64) -> f64 {
    TWO_PI * f_khz * 1e3
}

/// Ordinary frequency in Hz (cycles) → angular rate in rad/s.
pub fn hz_to_radps(f_hz: f64) -> f64 {
    TWO_PI * f_hz
}

/// Angular rate in rad/s → ordinary frequency in Hz (cycles).
pub fn radps_to_hz(w: f64) -> f64 {
    w / TWO_PI
}

pub fn ns_to_s(t_ns: f64) -> f64 {
    t_ns * 1e-9
}

pub fn us_to_s(t_us: f64) -> f64 {
    t_us * 1e-6
}

pub fn deg_to_rad(a_deg: f64) -> f64 {
    a_deg * std::f64::consts::PI / 180.0
}

pub fn rad_to_deg(a_rad: f64) -> f64 {
    a_rad * 180.0 / std::f64::consts::PI
}

/// ¹³C nuclear gyromagnetic ratio as an angular rate per gauss:
/// 2π × 1.0705 kHz/G. At 510 G the Larmor rate is 2π × 546 kHz.
pub const GAMMA_C13_RADPS_PER_GAUSS: f64 = TWO_PI * 1070.5;

/// Dephasing time of a Gaussian detuning spread: T2* = √2 / σ with σ the
/// standard deviation as an angular rate (rad/s).
pub fn t2_star_from_sigma(sigma_radps: f64) -> f64 {
    std::f64::consts::SQRT_2 / sigma_radps
}

/// Inverse of [`t2_star_from_sigma`].
pub fn sigma_from_t2_star(t2_star_s: f64) -> f64 {
    std::f64::consts::SQRT_2 / t2_star_s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mhz_round_trip() {
        let w = mhz_to_radps(10.0);
        assert!((w - 6.283_185_307_179_586e7).abs() < 1e-6);
        assert!((radps_to_hz(w) - 1e7).abs() < 1e-9);
    }

    #[test]
    fn gaussian_spread_dephasing_time() {
        // A 2π × 0.226 MHz spread dephases in just under a microsecond.
        let sigma = mhz_to_radps(0.226);
        let t2 = t2_star_from_sigma(sigma);
        assert!((t2 - 0.996_02e-6).abs() < 1e-10, "t2*={t2}");
    }

    #[test]
    fn degree_round_trip() {
        assert!((deg_to_rad(56.0) - 0.977_384_381_116_825_1).abs() < 1e-15);
        assert!((rad_to_deg(deg_to_rad(134.0)) - 134.0).abs() < 1e-12);
    }
}
