//! Multirate co-simulation of Maxwell and transient drift-diffusion.
//!
//! One macro-step advances DD by dt_dd = r·dt_em: Maxwell takes r LSRK
//! steps with the conduction current held from the last DD state, then DD
//! takes one TVD-RK3 step driven by the field at the macro-step midpoint.
//! Maxwell only sees the current in excess of the steady state, so the
//! steady state is a fixed point of the coupled system.

use std::io::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dd_steady::{Device, SteadyState};
use crate::dd_td::{total_carriers, CarrierState, DDTdError, Drive, TransientDD, TransientOptions};
use crate::dgcore::Discretization;
use crate::materials::generation;
use crate::maxwell_td::{x_component, EmState, MaxwellError, MaxwellOptions, MaxwellSolver, PumpSpec, VAR_E, VAR_JP};
use crate::mesh::Region;
use crate::units::{current_a_per_cm2_to_scaled, scaled_current_to_a_per_m2, PER_S_TO_PER_PS, Q_E};

#[derive(Debug, Error)]
pub enum CouplerError {
    #[error("invalid co-simulation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Maxwell(#[from] MaxwellError),
    #[error(transparent)]
    Transport(#[from] DDTdError),
    #[error("run aborted at t = {time} ps: {reason}")]
    Aborted { time: f64, reason: String, series: Box<TimeSeries> },
    #[error("snapshot output failed: {0}")]
    Output(String),
}

/// How the conduction current seen by Maxwell varies across the EM
/// sub-steps of one macro-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangePolicy {
    /// Held at the value of the last DD state.
    Frozen,
    /// Linearly extrapolated from the last two DD states.
    Linear,
}

impl std::str::FromStr for ExchangePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "frozen" => Ok(ExchangePolicy::Frozen),
            "linear" => Ok(ExchangePolicy::Linear),
            _ => Err(format!("unknown exchange policy '{s}' (frozen|linear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoSimConfig {
    /// [ps]
    pub duration: f64,
    pub dt_em: f64,
    pub dt_dd: f64,
    pub policy: ExchangePolicy,
    pub sampling: DriveSampling,
    /// Macro-steps between snapshots (0 disables them).
    pub snapshot_stride: usize,
}

/// How the optical field and generation seen by one drift-diffusion step
/// are taken from the Maxwell substeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriveSampling {
    /// Field and J_p·E at the midpoint of the macro-step.
    Midpoint,
    /// Field and J_p·E averaged over all substeps. Needed once dt_dd spans
    /// optical periods.
    #[default]
    Average,
}

impl std::str::FromStr for DriveSampling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "midpoint" => Ok(DriveSampling::Midpoint),
            "average" => Ok(DriveSampling::Average),
            _ => Err(format!("unknown sampling `{s}` (midpoint, average)")),
        }
    }
}

impl CoSimConfig {
    /// r = dt_dd / dt_em, which must be a positive integer.
    pub fn ratio(&self) -> Result<usize, CouplerError> {
        if !(self.dt_em > 0.0 && self.dt_dd > 0.0) {
            return Err(CouplerError::Config("time steps must be positive".into()));
        }
        let r = self.dt_dd / self.dt_em;
        let rounded = r.round();
        if rounded < 1.0 || (r - rounded).abs() > 1e-9 * r {
            return Err(CouplerError::Config(format!("dt_dd / dt_em = {r} is not a positive integer")));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<(), CouplerError> {
        self.ratio()?;
        if !(self.duration > 0.0) {
            return Err(CouplerError::Config("duration must be positive".into()));
        }
        Ok(())
    }

    pub fn macro_steps(&self) -> usize {
        (self.duration / self.dt_dd - 1e-9).ceil() as usize
    }
}

/// Observables sampled once per macro-step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    /// Volume-averaged x current in the semiconductor [A/cm²].
    pub jx: Vec<f64>,
    /// ∫(n_e + n_h) dV [cm⁻³ µm^dim].
    pub n_total: Vec<f64>,
    /// Scaled EM energy.
    pub em_energy: Vec<f64>,
}

impl TimeSeries {
    pub const HEADER: &'static str = "t_ps,Jx_A_per_cm2,n_total,em_energy";

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for i in 0..self.len() {
            writeln!(w, "{:e},{:e},{:e},{:e}", self.t[i], self.jx[i], self.n_total[i], self.em_energy[i])?;
        }
        Ok(())
    }
}

/// A/cm² from carrier fluxes n·v + d·q [cm⁻³ µm/ps] of both species,
/// J = q(F_e − F_h).
pub fn current_density(flux_e: f64, flux_h: f64) -> f64 {
    // 1 µm/ps = 10⁸ cm/s
    Q_E * 1e8 * (flux_e - flux_h)
}

/// Volume average of a nodal field over the mesh, with the mass matrices.
pub fn volume_average(disc: &Discretization, u: &[f64]) -> f64 {
    let np = disc.np();
    let mut mu = vec![0.0; np];
    let (mut num, mut vol) = (0.0, 0.0);
    let ones = vec![1.0; np];
    for k in 0..disc.n_elements() {
        disc.ops.mass_apply(k, &u[k * np..(k + 1) * np], &mut mu);
        num += mu.iter().sum::<f64>();
        disc.ops.mass_apply(k, &ones, &mut mu);
        vol += mu.iter().sum::<f64>();
    }
    num / vol
}

/// Volume-averaged x component of the conduction current [A/cm²].
pub fn photocurrent(disc: &Discretization, j: &[[f64; 3]]) -> f64 {
    let c = x_component(disc.dim());
    let jx: Vec<f64> = j.iter().map(|v| v[c]).collect();
    volume_average(disc, &jx)
}

/// Coupled device: Maxwell on the full mesh, DD on its semiconductor.
pub struct CoSim<'a> {
    pub dev: &'a Device,
    pub maxwell: MaxwellSolver<'a>,
    pub dd: TransientDD<'a>,
    /// Static field per semiconductor node [V/µm], steady field plus any
    /// uniform bias.
    pub e_static: Vec<[f64; 3]>,
    j_steady: Vec<[f64; 3]>,
    nodes: Vec<usize>,
}

/// Transient fields sampled at the semiconductor nodes: E [V/m] and the
/// scaled polarization current.
#[derive(Clone)]
struct Sample {
    e: Vec<[f64; 3]>,
    jp: Vec<[f64; 3]>,
}

impl<'a> CoSim<'a> {
    /// `bias` is a uniform field [V/µm] added to the steady field, used
    /// for lateral bias of 1D slabs.
    pub fn new(
        dev: &'a Device,
        steady: &SteadyState,
        pump: Option<PumpSpec>,
        maxwell_opts: MaxwellOptions,
        transient: TransientOptions,
        bias: [f64; 3],
    ) -> Result<CoSim<'a>, CouplerError> {
        let maxwell = MaxwellSolver::from_materials(&dev.disc, &dev.materials, maxwell_opts, pump)?;
        let dd = TransientDD::new(dev, steady, transient);
        let e_static: Vec<[f64; 3]> = dd.static_field(steady).into_iter().map(|e| [e[0] + bias[0], e[1] + bias[1], e[2] + bias[2]]).collect();
        let nodes = (0..dev.semi.n_nodes()).map(|n| dev.poisson_node(n)).collect();
        let init = CarrierState::from_steady(steady);
        let j_steady = dd.current(&init, &e_static);
        Ok(CoSim {
            dev,
            maxwell,
            dd,
            e_static,
            j_steady,
            nodes,
        })
    }

    fn sample(&self, em: &EmState) -> Sample {
        Sample {
            e: self.nodes.iter().map(|&n| em.get(n, VAR_E)).collect(),
            jp: self.nodes.iter().map(|&n| em.get(n, VAR_JP)).collect(),
        }
    }

    fn total_field(&self, e_opt: &[[f64; 3]]) -> Vec<[f64; 3]> {
        // V/m → V/µm
        self.e_static
            .iter()
            .zip(e_opt)
            .map(|(s, e)| [s[0] + e[0] * 1e-6, s[1] + e[1] * 1e-6, s[2] + e[2] * 1e-6])
            .collect()
    }

    /// Instantaneous generation [cm⁻³/ps] per semiconductor node.
    fn generation(&self, s: &Sample) -> Vec<f64> {
        let g = &self.dev.materials.carriers.generation;
        s.e.iter()
            .zip(&s.jp)
            .map(|(e, jp)| {
                let jp = jp.map(scaled_current_to_a_per_m2);
                generation(Region::Semiconductor, *e, jp, g).expect("semiconductor node") * PER_S_TO_PER_PS
            })
            .collect()
    }

    fn drive(&self, s: &Sample) -> Drive {
        Drive {
            e: self.total_field(&s.e),
            g: self.generation(s),
        }
    }

    /// Midpoint sample, averaging the two central samples for odd r.
    fn midpoint(mut samples: Vec<Sample>) -> Sample {
        if samples.len() == 2 {
            let (a, b) = (&samples[0], &samples[1]);
            let avg = |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().zip(y).map(|(p, q)| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]).collect();
            Sample {
                e: avg(&a.e, &b.e),
                jp: avg(&a.jp, &b.jp),
            }
        } else {
            samples.swap_remove(0)
        }
    }

    /// Conduction current in excess of the steady state [A/cm²] per
    /// semiconductor node.
    fn excess_current(&self, c: &CarrierState, em: &EmState) -> Vec<[f64; 3]> {
        let e = self.total_field(&self.sample(em).e);
        self.dd
            .current(c, &e)
            .iter()
            .zip(&self.j_steady)
            .map(|(j, s)| [j[0] - s[0], j[1] - s[1], j[2] - s[2]])
            .collect()
    }

    /// Scaled Maxwell source, node-major over the full mesh.
    fn maxwell_source(&self, j: &[[f64; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.dev.disc.n_nodes()];
        for (&n, v) in self.nodes.iter().zip(j) {
            for c in 0..3 {
                out[3 * n + c] = current_a_per_cm2_to_scaled(v[c]);
            }
        }
        out
    }

    fn observe(&self, series: &mut TimeSeries, c: &CarrierState, em: &EmState) {
        let e = self.total_field(&self.sample(em).e);
        let j = self.dd.current(c, &e);
        series.t.push(c.t);
        series.jx.push(photocurrent(&self.dev.semi, &j));
        series.n_total.push(total_carriers(&self.dev.semi, &c.n_e) + total_carriers(&self.dev.semi, &c.n_h));
        series.em_energy.push(self.maxwell.energy(em));
    }

    /// Runs the co-simulation from the steady state. `snapshot` is called
    /// every `cfg.snapshot_stride` macro-steps.
    pub fn run(
        &self,
        steady: &SteadyState,
        cfg: &CoSimConfig,
        mut snapshot: Option<&mut dyn FnMut(usize, &CarrierState, &EmState) -> Result<(), String>>,
    ) -> Result<TimeSeries, CouplerError> {
        cfg.validate()?;
        let r = cfg.ratio()?;
        let dt_dd = r as f64 * cfg.dt_em;
        let steps = cfg.macro_steps();
        info!("co-simulation: {steps} macro-steps, r = {r}, dt_dd = {dt_dd:e} ps");
        let mut carriers = CarrierState::from_steady(steady);
        let mut em = self.maxwell.zeros();
        let mut series = TimeSeries::default();
        self.observe(&mut series, &carriers, &em);
        let mut j_prev: Option<Vec<[f64; 3]>> = None;
        let (mid_a, mid_b) = (r / 2, r.div_ceil(2));
        let mut clamped = 0usize;
        let abort = |series: &TimeSeries, time: f64, reason: String| CouplerError::Aborted {
            time,
            reason,
            series: Box::new(series.clone()),
        };

        for step in 0..steps {
            let t0 = carriers.t;
            let j_now = self.excess_current(&carriers, &em);
            let mut samples: Vec<Sample> = Vec::with_capacity(2);
            let mut acc: Option<(Vec<[f64; 3]>, Vec<f64>)> = None;
            if mid_a == 0 && cfg.sampling == DriveSampling::Midpoint {
                samples.push(self.sample(&em));
            }
            let frozen = self.maxwell_source(&j_now);
            for sub in 0..r {
                let src = match (cfg.policy, &j_prev) {
                    (ExchangePolicy::Linear, Some(prev)) => {
                        let s = ((sub as f64 + 0.5) * cfg.dt_em) / dt_dd;
                        let j: Vec<[f64; 3]> = j_now
                            .iter()
                            .zip(prev)
                            .map(|(a, b)| [a[0] + s * (a[0] - b[0]), a[1] + s * (a[1] - b[1]), a[2] + s * (a[2] - b[2])])
                            .collect();
                        self.maxwell_source(&j)
                    }
                    _ => frozen.clone(),
                };
                if let Err(e) = self.maxwell.step(&mut em, cfg.dt_em, Some(&src)) {
                    return Err(abort(&series, em.t, e.to_string()));
                }
                if cfg.sampling == DriveSampling::Average {
                    let smp = self.sample(&em);
                    let g = self.generation(&smp);
                    let (es, gs) = acc.get_or_insert_with(|| (vec![[0.0; 3]; g.len()], vec![0.0; g.len()]));
                    for (a, e) in es.iter_mut().zip(&smp.e) {
                        for c in 0..3 {
                            a[c] += e[c];
                        }
                    }
                    for (a, x) in gs.iter_mut().zip(&g) {
                        *a += x;
                    }
                } else if sub + 1 == mid_a || sub + 1 == mid_b {
                    samples.push(self.sample(&em));
                }
            }
            let drive = if let Some((es, gs)) = acc.take() {
                let w = 1.0 / r as f64;
                let e: Vec<[f64; 3]> = es.iter().map(|a| a.map(|x| x * w)).collect();
                Drive {
                    e: self.total_field(&e),
                    g: gs.iter().map(|x| x * w).collect(),
                }
            } else {
                self.drive(&Self::midpoint(samples))
            };
            match self.dd.step(&mut carriers, dt_dd, &drive) {
                Ok(c) => clamped += c,
                Err(e) => return Err(abort(&series, t0, e.to_string())),
            }
            // keep the time axis exact instead of accumulating round-off
            carriers.t = (step + 1) as f64 * dt_dd;
            em.t = carriers.t;
            self.observe(&mut series, &carriers, &em);
            j_prev = Some(j_now);
            if cfg.snapshot_stride > 0 && (step + 1) % cfg.snapshot_stride == 0 {
                if let Some(f) = snapshot.as_mut() {
                    f(step + 1, &carriers, &em).map_err(CouplerError::Output)?;
                }
            }
            if step % 1000 == 0 {
                debug!("t = {:.6} ps, Jx = {:e} A/cm²", carriers.t, series.jx.last().unwrap());
            }
        }
        if clamped > 0 {
            info!("{clamped} negative density values clamped during the run");
        }
        Ok(series)
    }
}

/// Frequency [THz] of the largest spectral peak of `y(t)` within
/// [f_lo, f_hi], after removing a linear trend and applying a Hann window.
/// The spectrum is evaluated on a grid 16× finer than 1/T and refined by a
/// parabola through the top three points.
pub fn spectrum_peak(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> Option<f64> {
    let n = t.len();
    if n < 8 || y.len() != n || !(f_hi > f_lo) {
        return None;
    }
    let span = t[n - 1] - t[0];
    let tm = t.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let w: Vec<f64> = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (ti - t[0]) / span).cos();
            hann * (yi - ym - slope * (ti - tm))
        })
        .collect();
    let df = 1.0 / (16.0 * span);
    let m = ((f_hi - f_lo) / df).ceil() as usize + 1;
    let power = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (ti, wi) in t.iter().zip(&w) {
            let ph = 2.0 * std::f64::consts::PI * f * ti;
            re += wi * ph.cos();
            im += wi * ph.sin();
        }
        re * re + im * im
    };
    let p: Vec<f64> = (0..m).map(|i| power(f_lo + i as f64 * df)).collect();
    let (imax, _) = p.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let mut f = f_lo + imax as f64 * df;
    if imax > 0 && imax + 1 < m {
        let (a, b, c) = (p[imax - 1], p[imax], p[imax + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            f += 0.5 * (a - c) / denom * df;
        }
    }
    Some(f)
}
