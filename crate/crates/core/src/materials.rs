//! Constitutive models: dispersive permittivity, field-dependent mobility,
//! recombination and photogeneration, plus the LT-GaAs parameter set.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Region;
use crate::units::{EPS0, HBAR, Q_E};

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("parameter `{0}` must be strictly positive (got {1})")]
    NonPositive(&'static str, f64),
    #[error("mobility exponent `{0}` must be >= 1 (got {1})")]
    Exponent(&'static str, f64),
    #[error("generation evaluated outside the semiconductor (region {0})")]
    OutsideSemiconductor(&'static str),
}

/// Frequency-domain relative permittivity model (e^{-iωt} convention, so
/// lossy media have Im ε > 0). Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DispersionModel {
    None { eps_inf: f64 },
    Drude { eps_inf: f64, omega_p: f64, gamma: f64 },
    Lorentz { eps_inf: f64, omega_p: f64, omega_o: f64, gamma: f64 },
}

impl DispersionModel {
    pub fn eps_inf(&self) -> f64 {
        match *self {
            DispersionModel::None { eps_inf }
            | DispersionModel::Drude { eps_inf, .. }
            | DispersionModel::Lorentz { eps_inf, .. } => eps_inf,
        }
    }

    pub fn is_dispersive(&self) -> bool {
        !matches!(self, DispersionModel::None { .. })
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let pos = |name, v: f64| if v > 0.0 { Ok(()) } else { Err(MaterialError::NonPositive(name, v)) };
        match *self {
            DispersionModel::None { eps_inf } => pos("eps_inf", eps_inf),
            DispersionModel::Drude { eps_inf, omega_p, gamma } => {
                pos("eps_inf", eps_inf)?;
                pos("omega_p", omega_p)?;
                pos("gamma", gamma)
            }
            DispersionModel::Lorentz { eps_inf, omega_p, omega_o, gamma } => {
                pos("eps_inf", eps_inf)?;
                pos("omega_p", omega_p)?;
                pos("omega_o", omega_o)?;
                pos("gamma", gamma)
            }
        }
    }
}

/// ε_r(ω) of the model.
pub fn permittivity(model: &DispersionModel, omega: f64) -> Complex64 {
    let i = Complex64::i();
    match *model {
        DispersionModel::None { eps_inf } => Complex64::new(eps_inf, 0.0),
        DispersionModel::Drude { eps_inf, omega_p, gamma } => {
            eps_inf - omega_p * omega_p / (omega * omega + i * gamma * omega)
        }
        DispersionModel::Lorentz { eps_inf, omega_p, omega_o, gamma } => {
            eps_inf + omega_p * omega_p / (omega_o * omega_o - omega * omega - i * gamma * omega)
        }
    }
}

/// Caughey–Thomas field-dependent mobility [cm²/V/s]; `e_mag` in V/cm.
pub fn mobility(mu0: f64, vsat: f64, beta: f64, e_mag: f64) -> f64 {
    let x = mu0 * e_mag.abs() / vsat;
    mu0 / (1.0 + x.powf(beta)).powf(1.0 / beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierParams {
    /// Low-field mobility [cm²/V/s].
    pub mu0: f64,
    /// Saturation velocity [cm/s].
    pub vsat: f64,
    pub beta: f64,
}

impl CarrierParams {
    pub fn mobility(&self, e_v_per_cm: f64) -> f64 {
        mobility(self.mu0, self.vsat, self.beta, e_v_per_cm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecombinationParams {
    /// SRH lifetimes [ps].
    pub tau_e: f64,
    pub tau_h: f64,
    /// SRH reference densities [cm⁻³].
    pub n_e1: f64,
    pub n_h1: f64,
    /// Auger coefficients [cm⁶/s].
    pub c_auger_e: f64,
    pub c_auger_h: f64,
}

/// SRH + Auger net recombination rate [cm⁻³/s].
pub fn recombination(n_e: f64, n_h: f64, n_i: f64, p: &RecombinationParams) -> f64 {
    let excess = n_e * n_h - n_i * n_i;
    let tau_e = p.tau_e * 1e-12;
    let tau_h = p.tau_h * 1e-12;
    let srh = excess / (tau_h * (n_e + p.n_e1) + tau_e * (n_h + p.n_h1));
    let auger = (p.c_auger_e * n_e + p.c_auger_h * n_h) * excess;
    srh + auger
}

/// Splits R into R = a·n − b around the current iterate with respect to the
/// carrier being solved, for semi-implicit treatment. `electron` selects
/// which density is the unknown. Returns (a [1/s], b [cm⁻³/s]).
pub fn recombination_linearized(n_e: f64, n_h: f64, n_i: f64, p: &RecombinationParams, electron: bool) -> (f64, f64) {
    let tau_e = p.tau_e * 1e-12;
    let tau_h = p.tau_h * 1e-12;
    let denom = tau_h * (n_e + p.n_e1) + tau_e * (n_h + p.n_h1);
    let auger = p.c_auger_e * n_e + p.c_auger_h * n_h;
    let other = if electron { n_h } else { n_e };
    let a = other * (1.0 / denom + auger);
    let b = n_i * n_i * (1.0 / denom + auger);
    (a, b)
}

/// Photogeneration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    /// Pump photon energy [eV].
    pub photon_energy_ev: f64,
    /// Quantum efficiency η.
    pub eta: f64,
}

/// Generation rate [cm⁻³/s] from the instantaneous work done on the
/// polarization current, G = η J_p·E / (ħω). `jp` in A/m², `e` in V/m.
pub fn generation(region: Region, e: [f64; 3], jp: [f64; 3], g: &GenerationParams) -> Result<f64, MaterialError> {
    if region != Region::Semiconductor {
        return Err(MaterialError::OutsideSemiconductor(region.name()));
    }
    let work = e[0] * jp[0] + e[1] * jp[1] + e[2] * jp[2];
    let photon = g.photon_energy_ev * Q_E;
    Ok(g.eta * work / photon * 1e-6)
}

/// ħω in eV for an angular frequency in rad/s.
pub fn photon_energy_ev(omega: f64) -> f64 {
    HBAR * omega / Q_E
}

/// Cycle-averaged absorbed power density ½ωε₀ Im ε |E₀|² [W/m³].
pub fn absorbed_power(model: &DispersionModel, omega: f64, e0: f64) -> f64 {
    0.5 * omega * EPS0 * permittivity(model, omega).im * e0 * e0
}

/// Semiconductor parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiconductorParams {
    /// Net doping [cm⁻³].
    pub doping: f64,
    /// Intrinsic density [cm⁻³].
    pub n_i: f64,
    pub electron: CarrierParams,
    pub hole: CarrierParams,
    pub recombination: RecombinationParams,
    /// Thermal voltage [V].
    pub v_t: f64,
    pub generation: GenerationParams,
}

impl SemiconductorParams {
    pub fn validate(&self) -> Result<(), MaterialError> {
        let checks: [(&'static str, f64); 13] = [
            ("n_i", self.n_i),
            ("mu_e0", self.electron.mu0),
            ("mu_h0", self.hole.mu0),
            ("vsat_e", self.electron.vsat),
            ("vsat_h", self.hole.vsat),
            ("tau_e", self.recombination.tau_e),
            ("tau_h", self.recombination.tau_h),
            ("n_e1", self.recombination.n_e1),
            ("n_h1", self.recombination.n_h1),
            ("c_auger_e", self.recombination.c_auger_e),
            ("c_auger_h", self.recombination.c_auger_h),
            ("v_t", self.v_t),
            ("photon_energy_ev", self.generation.photon_energy_ev),
        ];
        for (name, v) in checks {
            if !(v > 0.0) {
                return Err(MaterialError::NonPositive(name, v));
            }
        }
        if self.doping < 0.0 {
            return Err(MaterialError::NonPositive("doping", self.doping));
        }
        if !(self.electron.beta >= 1.0) {
            return Err(MaterialError::Exponent("beta_e", self.electron.beta));
        }
        if !(self.hole.beta >= 1.0) {
            return Err(MaterialError::Exponent("beta_h", self.hole.beta));
        }
        Ok(())
    }

    pub fn recombination(&self, n_e: f64, n_h: f64) -> f64 {
        recombination(n_e, n_h, self.n_i, &self.recombination)
    }
}

/// Electromagnetic and electrostatic properties of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMaterial {
    /// Static relative permittivity used by the Poisson solve.
    pub eps_static: f64,
    pub dispersion: DispersionModel,
    pub mu_r: f64,
}

impl RegionMaterial {
    pub fn dielectric(eps_r: f64) -> RegionMaterial {
        RegionMaterial {
            eps_static: eps_r,
            dispersion: DispersionModel::None { eps_inf: eps_r },
            mu_r: 1.0,
        }
    }
}

/// Per-region material table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub semiconductor: RegionMaterial,
    pub dielectric: RegionMaterial,
    pub metal: RegionMaterial,
    pub vacuum: RegionMaterial,
    pub pml: RegionMaterial,
    pub carriers: SemiconductorParams,
}

impl MaterialParams {
    pub fn region(&self, r: Region) -> &RegionMaterial {
        match r {
            Region::Semiconductor => &self.semiconductor,
            Region::Dielectric => &self.dielectric,
            Region::Metal => &self.metal,
            Region::Vacuum => &self.vacuum,
            Region::Pml => &self.pml,
        }
    }

    pub fn region_mut(&mut self, r: Region) -> &mut RegionMaterial {
        match r {
            Region::Semiconductor => &mut self.semiconductor,
            Region::Dielectric => &mut self.dielectric,
            Region::Metal => &mut self.metal,
            Region::Vacuum => &mut self.vacuum,
            Region::Pml => &mut self.pml,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        for r in [Region::Semiconductor, Region::Dielectric, Region::Metal, Region::Vacuum, Region::Pml] {
            let m = self.region(r);
            m.dispersion.validate()?;
            if !(m.eps_static > 0.0) {
                return Err(MaterialError::NonPositive("eps_static", m.eps_static));
            }
            if !(m.mu_r > 0.0) {
                return Err(MaterialError::NonPositive("mu_r", m.mu_r));
            }
        }
        self.carriers.validate()
    }
}

pub const LTGAAS_LORENTZ: DispersionModel = DispersionModel::Lorentz {
    eps_inf: 5.785,
    omega_p: 1.061e16,
    omega_o: 4.783e15,
    gamma: 4.557e14,
};

pub const GOLD_DRUDE: DispersionModel = DispersionModel::Drude {
    eps_inf: 1.0,
    omega_p: 1.372e16,
    gamma: 8.052e13,
};

/// Static relative permittivity standing in for metal in the electrostatic
/// solve (near-equipotential).
pub const METAL_STATIC_EPS: f64 = 1e4;

/// The LT-GaAs / SI-GaAs / gold parameter set of the reference device.
pub fn ltgaas_paper() -> MaterialParams {
    let lorentz_static = match LTGAAS_LORENTZ {
        DispersionModel::Lorentz { eps_inf, omega_p, omega_o, .. } => eps_inf + (omega_p / omega_o).powi(2),
        _ => unreachable!(),
    };
    MaterialParams {
        semiconductor: RegionMaterial {
            eps_static: lorentz_static,
            dispersion: LTGAAS_LORENTZ,
            mu_r: 1.0,
        },
        dielectric: RegionMaterial::dielectric(13.26),
        metal: RegionMaterial {
            eps_static: METAL_STATIC_EPS,
            dispersion: GOLD_DRUDE,
            mu_r: 1.0,
        },
        vacuum: RegionMaterial::dielectric(1.0),
        pml: RegionMaterial::dielectric(1.0),
        carriers: SemiconductorParams {
            doping: 1.3e16,
            n_i: 9e6,
            electron: CarrierParams {
                mu0: 8000.0,
                vsat: 1.725e7,
                beta: 1.82,
            },
            hole: CarrierParams {
                mu0: 400.0,
                vsat: 0.9e7,
                beta: 1.75,
            },
            recombination: RecombinationParams {
                tau_e: 0.3,
                tau_h: 0.4,
                n_e1: 4.5e6,
                n_h1: 4.5e6,
                c_auger_e: 7e-30,
                c_auger_h: 7e-30,
            },
            v_t: crate::units::V_THERMAL_300K,
            generation: GenerationParams {
                photon_energy_ev: photon_energy_ev(2.0 * std::f64::consts::PI * 375e12),
                eta: 1.0,
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const W375: f64 = 2.0 * PI * 375e12;

    #[test]
    fn drude_gold_at_375thz() {
        // expanded real/imag parts of eps_inf - wp^2 / (w^2 + i g w)
        let (wp, g, w) = (1.372e16_f64, 8.052e13_f64, W375);
        let den = w * w * w * w + g * g * w * w;
        let re = 1.0 - wp * wp * w * w / den;
        let im = wp * wp * g * w / den;
        let eps = permittivity(&GOLD_DRUDE, w);
        assert!((eps.re - re).abs() < 1e-12 * re.abs());
        assert!((eps.im - im).abs() < 1e-12 * im.abs());
        assert!((eps.re + 32.87).abs() < 0.01 && (eps.im - 1.16).abs() < 0.01);
    }

    #[test]
    fn lorentz_ltgaas_at_375thz() {
        let (einf, wp, wo, g, w) = (5.785, 1.061e16_f64, 4.783e15_f64, 4.557e14_f64, W375);
        let a = wo * wo - w * w;
        let b = g * w;
        let re = einf + wp * wp * a / (a * a + b * b);
        let im = wp * wp * b / (a * a + b * b);
        let eps = permittivity(&LTGAAS_LORENTZ, w);
        assert!((eps.re - re).abs() < 1e-12 * re);
        assert!((eps.im - im).abs() < 1e-12 * im);
        assert!((eps.re - 12.26).abs() < 0.01 && (eps.im - 0.40).abs() < 0.01);
    }

    #[test]
    fn drude_high_frequency_limit() {
        let eps = permittivity(&GOLD_DRUDE, 1e22);
        assert!((eps - Complex64::new(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn passive_models() {
        for k in 1..200 {
            let w = 1e12 * 1.1f64.powi(k);
            assert!(permittivity(&GOLD_DRUDE, w).im > 0.0);
            assert!(permittivity(&LTGAAS_LORENTZ, w).im > 0.0);
        }
    }

    #[test]
    fn electron_velocity_saturates() {
        let p = ltgaas_paper().carriers.electron;
        let e = 1e6;
        let v = p.mobility(e) * e;
        assert!((v - 1.725e7).abs() / 1.725e7 < 0.01);
        assert_eq!(p.mobility(0.0), 8000.0);
        let mut last = f64::INFINITY;
        for k in 0..60 {
            let m = p.mobility(10f64.powf(k as f64 * 0.15));
            assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn recombination_values() {
        let c = ltgaas_paper().carriers;
        assert_eq!(c.recombination(c.n_i, c.n_i), 0.0);
        assert_eq!(c.recombination(1e10, c.n_i * c.n_i / 1e10), 0.0);
        // hand evaluation at n_e = n_h = 1e17
        let n = 1e17;
        let excess = n * n - 8.1e13;
        let srh = excess / (0.4e-12 * (n + 4.5e6) + 0.3e-12 * (n + 4.5e6));
        let auger = 1.4e-29 * n * excess;
        let r = c.recombination(n, n);
        assert!((r - (srh + auger)).abs() / r < 1e-12);
        assert!((srh - 1e17 / 0.7e-12).abs() / srh < 1e-6);
        assert!(auger / srh < 1e-3);
    }

    #[test]
    fn linearized_recombination_reassembles() {
        let c = ltgaas_paper().carriers;
        for (ne, nh) in [(1e16, 1e3), (5e15, 2e15), (1e12, 1e17)] {
            let (a, b) = recombination_linearized(ne, nh, c.n_i, &c.recombination, true);
            assert!(((a * ne - b) - c.recombination(ne, nh)).abs() <= 1e-9 * c.recombination(ne, nh).abs().max(1.0));
            let (a, b) = recombination_linearized(ne, nh, c.n_i, &c.recombination, false);
            assert!(((a * nh - b) - c.recombination(ne, nh)).abs() <= 1e-9 * c.recombination(ne, nh).abs().max(1.0));
        }
    }

    #[test]
    fn generation_zero_field_and_region() {
        let g = ltgaas_paper().carriers.generation;
        assert_eq!(generation(Region::Semiconductor, [0.0; 3], [1.0, 2.0, 3.0], &g).unwrap(), 0.0);
        assert!(generation(Region::Metal, [1.0; 3], [1.0; 3], &g).is_err());
    }

    #[test]
    fn cycle_averaged_generation_matches_dissipation() {
        // drive the polarization ODE with E0 cos(wt) (omega in rad/ps) and
        // average J.E over whole periods after transients decay
        let (wp, wo, g) = (1.061e4, 4.783e3, 4.557e2);
        let w = W375 * 1e-12;
        let e0 = 1e5;
        let f = |t: f64, y: [f64; 2]| -> [f64; 2] {
            let e = e0 * (w * t).cos();
            [y[1], EPS0 * wp * wp * e - g * y[1] - wo * wo * y[0]]
        };
        let period = 2.0 * PI / w;
        let steps_per_period = 400;
        let dt = period / steps_per_period as f64;
        let mut y = [0.0, 0.0];
        let mut t = 0.0;
        let warm = (20.0 / g / period).ceil() as usize * steps_per_period;
        let avg_periods = 20;
        let mut acc = 0.0;
        for n in 0..warm + avg_periods * steps_per_period {
            let k1 = f(t, y);
            let k2 = f(t + 0.5 * dt, [y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
            let k3 = f(t + 0.5 * dt, [y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
            let k4 = f(t + dt, [y[0] + dt * k3[0], y[1] + dt * k3[1]]);
            for c in 0..2 {
                y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            t += dt;
            if n >= warm {
                // J_p here is in A/m^2 per ps-scaled ODE: dP/dt with t in ps
                let jp = y[1] * 1e12;
                let gen = generation(Region::Semiconductor, [e0 * (w * t).cos(), 0.0, 0.0], [jp, 0.0, 0.0], &GenerationParams { photon_energy_ev: 1.0, eta: 1.0 }).unwrap();
                acc += gen;
            }
        }
        let mean = acc / (avg_periods * steps_per_period) as f64;
        let expected = absorbed_power(&LTGAAS_LORENTZ, W375, e0) / Q_E * 1e-6;
        assert!((mean - expected).abs() / expected < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut m = ltgaas_paper();
        assert!(m.validate().is_ok());
        m.carriers.electron.beta = 0.5;
        assert!(matches!(m.validate(), Err(MaterialError::Exponent("beta_e", _))));
        let mut m = ltgaas_paper();
        m.carriers.recombination.tau_h = 0.0;
        assert!(m.validate().is_err());
    }
}
