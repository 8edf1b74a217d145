//! Physical constants and unit conversions.
//!
//! Internal units: lengths in µm, time in ps, potential in V, carrier
//! densities in cm⁻³, mobilities in cm²/V/s. Electromagnetic fields are
//! carried as E [V/m] and H̃ = Z₀H [V/m] so that both share one scale.

/// Elementary charge [C].
pub const Q_E: f64 = 1.602_176_634e-19;
/// Vacuum permittivity [F/m].
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Speed of light [µm/ps].
pub const C_UM_PER_PS: f64 = 299.792_458;
/// Vacuum impedance [Ω].
pub const Z0: f64 = 376.730_313_668;
/// Reduced Planck constant [J s].
pub const HBAR: f64 = 1.054_571_817e-34;
/// Thermal voltage at 300 K [V].
pub const V_THERMAL_300K: f64 = 0.025_85;

/// q/ε₀ expressed as V/µm² per cm⁻³ of net charge density.
pub const Q_OVER_EPS0_V_UM2_CM3: f64 = Q_E / EPS0 * 1e6 / 1e12;

/// cm²/s → µm²/ps.
pub const CM2_PER_S_TO_UM2_PER_PS: f64 = 1e-4;
/// cm/s → µm/ps.
pub const CM_PER_S_TO_UM_PER_PS: f64 = 1e-8;
/// per second → per picosecond.
pub const PER_S_TO_PER_PS: f64 = 1e-12;
/// V/µm → V/cm.
pub const V_PER_UM_TO_V_PER_CM: f64 = 1e4;
/// V/m → V/cm.
pub const V_PER_M_TO_V_PER_CM: f64 = 1e-2;
/// V/µm → V/m.
pub const V_PER_UM_TO_V_PER_M: f64 = 1e6;

/// Converts a current density in A/cm² to the scaled Maxwell source
/// Ĵ = J·10⁻¹²/ε₀ [V/m/ps] that enters ε_r ∂ₜE = c∇×H̃ − Ĵ.
pub fn current_a_per_cm2_to_scaled(j: f64) -> f64 {
    j * 1e4 * 1e-12 / EPS0
}

/// Inverse of [`current_a_per_cm2_to_scaled`], giving A/m².
pub fn scaled_current_to_a_per_m2(j_scaled: f64) -> f64 {
    j_scaled * EPS0 * 1e12
}

/// Angular frequency in rad/s → rad/ps.
pub fn rad_per_s_to_rad_per_ps(w: f64) -> f64 {
    w * 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_scale() {
        // 1.8095e-8 V m per elementary charge density of 1 m^-3
        assert!((Q_OVER_EPS0_V_UM2_CM3 - 1.809_51e-14).abs() < 1e-18);
    }

    #[test]
    fn current_scaling_round_trip() {
        let j = 123.0;
        let back = scaled_current_to_a_per_m2(current_a_per_cm2_to_scaled(j));
        assert!((back - j * 1e4).abs() < 1e-9);
    }
}
