//! Explicit transient drift-diffusion, ∂t n = ∇·(d q) + ∇·(v n) − R + G with
//! q = ∇n recomputed from n at every evaluation, stepped with TVD-RK3.
//!
//! Units as in [`crate::dd_steady`]: n in cm⁻³, µm, ps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dd_steady::{dd_rules, transport_element, Carrier, Device, SteadyState};
use crate::dgcore::ldg::{self, FaceRule};
use crate::dgcore::Discretization;
use crate::materials::recombination;
use crate::mesh::BoundaryTag;
use crate::units::{CM2_PER_S_TO_UM2_PER_PS, PER_S_TO_PER_PS, Q_E, V_PER_UM_TO_V_PER_CM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DDTdError {
    #[error("non-finite {carrier:?} density in element {element} at t = {time} ps")]
    NonFinite { carrier: Carrier, element: usize, time: f64 },
    #[error("array of length {0}, expected {1}")]
    Shape(usize, usize),
}

/// Shu–Osher three-stage TVD Runge–Kutta step.
pub fn tvdrk3_step<E>(y: &mut [f64], t: f64, dt: f64, mut rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>) -> Result<(), E> {
    let n = y.len();
    let mut k = vec![0.0; n];
    let mut u = vec![0.0; n];
    rhs(t, y, &mut k)?;
    for i in 0..n {
        u[i] = y[i] + dt * k[i];
    }
    rhs(t + dt, &u, &mut k)?;
    for i in 0..n {
        u[i] = 0.75 * y[i] + 0.25 * (u[i] + dt * k[i]);
    }
    rhs(t + 0.5 * dt, &u, &mut k)?;
    for i in 0..n {
        y[i] = y[i] / 3.0 + 2.0 / 3.0 * (u[i] + dt * k[i]);
    }
    Ok(())
}

/// Explicit LDG transport operator for one carrier species on a fixed set
/// of face rules.
pub struct Transport<'a> {
    pub disc: &'a Discretization,
    pub rules: Vec<Vec<FaceRule>>,
}

impl<'a> Transport<'a> {
    pub fn new(disc: &'a Discretization, dirichlet: &BTreeMap<BoundaryTag, f64>, robin: f64) -> Transport<'a> {
        Transport { disc, rules: dd_rules(disc, dirichlet, robin) }
    }

    /// q = ∇n from the alternate flux, one array per mesh axis.
    pub fn gradient(&self, n: &[f64]) -> Vec<Vec<f64>> {
        let np = self.disc.np();
        let dim = self.disc.dim();
        let nf = |node: usize| n[node];
        let per: Vec<Vec<Vec<f64>>> = (0..self.disc.n_elements())
            .into_par_iter()
            .map(|k| ldg::gradflux(self.disc, &self.rules[k], k, &nf))
            .collect();
        let mut q = vec![vec![0.0; n.len()]; dim];
        for (k, g) in per.iter().enumerate() {
            for c in 0..dim {
                q[c][k * np..(k + 1) * np].copy_from_slice(&g[c]);
            }
        }
        q
    }

    /// Nodal ∇·(d q) + ∇·(v n) into `out`, returning q.
    pub fn apply(&self, d: &[f64], v: &[Vec<f64>], n: &[f64], out: &mut [f64]) -> Vec<Vec<f64>> {
        let np = self.disc.np();
        let q = self.gradient(n);
        let nf = |node: usize| n[node];
        let qf = |node: usize, c: usize| q[c][node];
        out.par_chunks_mut(np).enumerate().for_each(|(k, o)| {
            o.copy_from_slice(&transport_element(self.disc, &self.rules[k], d, v, &nf, &qf, k));
        });
        q
    }
}

/// Which mobility the transient drift velocity uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityMode {
    /// Steady-state mobility, fixed for the whole run.
    Frozen,
    /// Re-evaluated from the instantaneous total field.
    Instantaneous,
}

impl std::str::FromStr for MobilityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "frozen" => Ok(MobilityMode::Frozen),
            "instantaneous" => Ok(MobilityMode::Instantaneous),
            _ => Err(format!("unknown mobility mode '{s}' (frozen|instantaneous)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientOptions {
    pub mobility: MobilityMode,
    pub field_dependent_mobility: bool,
    /// Reset negative densities to zero after each step.
    pub clamp_negative: bool,
}

impl Default for TransientOptions {
    fn default() -> Self {
        TransientOptions {
            mobility: MobilityMode::Instantaneous,
            field_dependent_mobility: true,
            clamp_negative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarrierState {
    pub t: f64,
    pub n_e: Vec<f64>,
    pub n_h: Vec<f64>,
}

impl CarrierState {
    pub fn from_steady(s: &SteadyState) -> CarrierState {
        CarrierState {
            t: 0.0,
            n_e: s.n_e.clone(),
            n_h: s.n_h.clone(),
        }
    }
}

/// Per-node drive of one transient step: total field [V/µm] in the field
/// frame and generation rate [cm⁻³/ps].
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub e: Vec<[f64; 3]>,
    pub g: Vec<f64>,
}

/// Per-node carrier velocity [µm/ps] in the field frame and diffusion
/// coefficient [µm²/ps].
pub struct Coefficients {
    pub vel: Vec<[f64; 3]>,
    pub d: Vec<f64>,
}

impl Coefficients {
    fn mesh_velocity(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..dim).map(|a| self.vel.iter().map(|v| v[a]).collect()).collect()
    }
}

/// Transient electron and hole transport on the semiconductor of a device.
pub struct TransientDD<'a> {
    pub dev: &'a Device,
    pub opts: TransientOptions,
    electrons: Transport<'a>,
    holes: Transport<'a>,
    steady_mu: (Vec<f64>, Vec<f64>),
}

impl<'a> TransientDD<'a> {
    pub fn new(dev: &'a Device, steady: &SteadyState, opts: TransientOptions) -> TransientDD<'a> {
        let (dens, _) = dev.contacts();
        let de: BTreeMap<_, _> = dens.iter().map(|(&t, &(a, _))| (t, a)).collect();
        let dh: BTreeMap<_, _> = dens.iter().map(|(&t, &(_, b))| (t, b)).collect();
        TransientDD {
            dev,
            opts,
            electrons: Transport::new(&dev.semi, &de, 0.0),
            holes: Transport::new(&dev.semi, &dh, 0.0),
            steady_mu: (steady.mu_e.clone(), steady.mu_h.clone()),
        }
    }

    /// Static field of the steady state at every semiconductor node, in
    /// the field frame [V/µm].
    pub fn static_field(&self, steady: &SteadyState) -> Vec<[f64; 3]> {
        let dim = self.dev.semi.dim();
        (0..self.dev.semi.n_nodes())
            .map(|node| {
                let pn = self.dev.poisson_node(node);
                let mut e = [0.0; 3];
                for a in 0..dim {
                    e[a] = steady.e[a][pn];
                }
                e
            })
            .collect()
    }

    pub fn coefficients(&self, carrier: Carrier, e: &[[f64; 3]]) -> Coefficients {
        let c = &self.dev.materials.carriers;
        let (params, sign, frozen) = match carrier {
            Carrier::Electron => (c.electron, 1.0, &self.steady_mu.0),
            Carrier::Hole => (c.hole, -1.0, &self.steady_mu.1),
        };
        let mut vel = Vec::with_capacity(e.len());
        let mut d = Vec::with_capacity(e.len());
        for (node, f) in e.iter().enumerate() {
            let mu = match self.opts.mobility {
                MobilityMode::Frozen => frozen[node],
                MobilityMode::Instantaneous if self.opts.field_dependent_mobility => {
                    let mag = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
                    params.mobility(mag * V_PER_UM_TO_V_PER_CM)
                }
                MobilityMode::Instantaneous => params.mu0,
            } * CM2_PER_S_TO_UM2_PER_PS;
            vel.push([sign * mu * f[0], sign * mu * f[1], sign * mu * f[2]]);
            d.push(mu * c.v_t);
        }
        Coefficients { vel, d }
    }

    /// Time derivative of (n_e, n_h) stacked in `y`, written to `out`.
    pub fn rhs(&self, t: f64, y: &[f64], drive: &Drive, out: &mut [f64]) -> Result<(), DDTdError> {
        let nn = self.dev.semi.n_nodes();
        if y.len() != 2 * nn || out.len() != 2 * nn {
            return Err(DDTdError::Shape(y.len(), 2 * nn));
        }
        if drive.e.len() != nn || drive.g.len() != nn {
            return Err(DDTdError::Shape(drive.e.len(), nn));
        }
        let dim = self.dev.semi.dim();
        let (ne, nh) = y.split_at(nn);
        let (oe, oh) = out.split_at_mut(nn);
        let ce = self.coefficients(Carrier::Electron, &drive.e);
        let ch = self.coefficients(Carrier::Hole, &drive.e);
        self.electrons.apply(&ce.d, &ce.mesh_velocity(dim), ne, oe);
        self.holes.apply(&ch.d, &ch.mesh_velocity(dim), nh, oh);
        let c = &self.dev.materials.carriers;
        for i in 0..nn {
            let r = recombination(ne[i], nh[i], c.n_i, &c.recombination) * PER_S_TO_PER_PS;
            oe[i] += drive.g[i] - r;
            oh[i] += drive.g[i] - r;
        }
        check_finite(&self.dev.semi, oe, Carrier::Electron, t)?;
        check_finite(&self.dev.semi, oh, Carrier::Hole, t)
    }

    /// One TVD-RK3 step with a fixed drive. Returns the number of clamped
    /// nodes.
    pub fn step(&self, s: &mut CarrierState, dt: f64, drive: &Drive) -> Result<usize, DDTdError> {
        let nn = s.n_e.len();
        let mut y = Vec::with_capacity(2 * nn);
        y.extend_from_slice(&s.n_e);
        y.extend_from_slice(&s.n_h);
        tvdrk3_step(&mut y, s.t, dt, |t, y, o| self.rhs(t, y, drive, o))?;
        let mut clamped = 0;
        if self.opts.clamp_negative {
            for v in y.iter_mut().filter(|v| **v < 0.0) {
                *v = 0.0;
                clamped += 1;
            }
        }
        s.n_e.copy_from_slice(&y[..nn]);
        s.n_h.copy_from_slice(&y[nn..]);
        s.t += dt;
        Ok(clamped)
    }

    /// Conduction current density [A/cm²] per node in the field frame,
    /// J = q(n_e v_e + d_e q_e) − q(n_h v_h + d_h q_h). Mesh axes carry
    /// diffusion, transverse axes only drift.
    pub fn current(&self, s: &CarrierState, e: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let dim = self.dev.semi.dim();
        let ce = self.coefficients(Carrier::Electron, e);
        let ch = self.coefficients(Carrier::Hole, e);
        let qe = self.electrons.gradient(&s.n_e);
        let qh = self.holes.gradient(&s.n_h);
        // cm⁻³·µm/ps → A/cm²
        let scale = Q_E * 1e8;
        (0..s.n_e.len())
            .map(|i| {
                let mut j = [0.0; 3];
                for a in 0..3 {
                    let (mut fe, mut fh) = (s.n_e[i] * ce.vel[i][a], s.n_h[i] * ch.vel[i][a]);
                    if a < dim {
                        fe += ce.d[i] * qe[a][i];
                        fh += ch.d[i] * qh[a][i];
                    }
                    j[a] = scale * (fe - fh);
                }
                j
            })
            .collect()
    }

    /// Largest stable step from the drift and diffusion limits of the
    /// given field.
    pub fn stable_dt(&self, e: &[[f64; 3]], cfl: f64) -> f64 {
        let p = self.dev.semi.ops.refel.order as f64;
        let h = self.dev.semi.mesh.min_edge();
        let mut vmax = 0.0f64;
        let mut dmax = 0.0f64;
        for carrier in [Carrier::Electron, Carrier::Hole] {
            let c = self.coefficients(carrier, e);
            vmax = c.vel.iter().fold(vmax, |m, v| m.max((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()));
            dmax = c.d.iter().fold(dmax, |m, &d| m.max(d));
        }
        let adv = if vmax > 0.0 { h / (vmax * (2.0 * p + 1.0)) } else { f64::INFINITY };
        let dif = if dmax > 0.0 { h * h / (dmax * (p + 1.0).powi(4)) } else { f64::INFINITY };
        cfl * adv.min(dif)
    }
}

fn check_finite(disc: &Discretization, v: &[f64], carrier: Carrier, time: f64) -> Result<(), DDTdError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(DDTdError::NonFinite {
            carrier,
            element: i / disc.np(),
            time,
        }),
        None => Ok(()),
    }
}

/// ∫ n dV over the carrier mesh.
pub fn total_carriers(disc: &Discretization, n: &[f64]) -> f64 {
    let np = disc.np();
    let mut mn = vec![0.0; np];
    let mut total = 0.0;
    for k in 0..disc.n_elements() {
        disc.ops.mass_apply(k, &n[k * np..(k + 1) * np], &mut mn);
        total += mn.iter().sum::<f64>();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tvdrk3_scalar_decay() {
        let mut y = [1.0];
        for i in 0..10 {
            tvdrk3_step(&mut y, 0.1 * i as f64, 0.1, |_, y, o: &mut [f64]| -> Result<(), ()> {
                o[0] = -y[0];
                Ok(())
            })
            .unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn tvdrk3_zero_rhs_is_identity() {
        let mut y = [0.3, -2.0];
        tvdrk3_step(&mut y, 0.0, 0.7, |_, _, o: &mut [f64]| -> Result<(), ()> {
            o.fill(0.0);
            Ok(())
        })
        .unwrap();
        assert_eq!(y, [0.3, -2.0]);
    }

    #[test]
    fn tvdrk3_is_third_order() {
        // y' = -y, y(0) = 1
        let run = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut y = [1.0];
            for i in 0..steps {
                tvdrk3_step(&mut y, i as f64 * dt, dt, |_, y, o: &mut [f64]| -> Result<(), ()> {
                    o[0] = -y[0];
                    Ok(())
                })
                .unwrap();
            }
            (y[0] - (-1f64).exp()).abs()
        };
        let slope = (run(10) / run(20)).log2();
        assert!((slope - 3.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn mobility_mode_parses() {
        assert_eq!("frozen".parse::<MobilityMode>().unwrap(), MobilityMode::Frozen);
        assert!("sometimes".parse::<MobilityMode>().is_err());
    }
}
