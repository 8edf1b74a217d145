//! Time-domain nodal DG Maxwell solver in scaled units: E and H̃ = Z₀H in
//! V/m, time in ps, lengths in µm, so that
//!
//! ε∞ ∂t E = c ∇×H̃ − Ĵp − Ĵ,   μr ∂t H̃ = −c ∇×E,
//!
//! with Ĵ = J·10⁻¹²/ε₀. Fields always carry three components in the frame
//! (a0, a1, a2) where a0 (and a1 in 2D) are the mesh axes and a2 completes a
//! right-handed triad. The last mesh axis is the vertical one: the pump
//! travels along it from the top and the PML stretches it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgcore::{matvec_add, Discretization, FaceKind};
use crate::materials::{DispersionModel, MaterialParams, RegionMaterial};
use crate::mesh::BoundaryTag;
use crate::units::{rad_per_s_to_rad_per_ps, C_UM_PER_PS};

/// Variables per node, node-major: E, H̃, Ĵp, P̂, ψ_E, ψ_H (3 each).
pub const NV: usize = 18;
pub const VAR_E: usize = 0;
pub const VAR_H: usize = 3;
pub const VAR_JP: usize = 6;
pub const VAR_P: usize = 9;
pub const VAR_PSI_E: usize = 12;
pub const VAR_PSI_H: usize = 15;

#[derive(Debug, Error)]
pub enum MaxwellError {
    #[error("non-finite field in element {element} at t = {time} ps")]
    NonFinite { element: usize, time: f64 },
    #[error("no interior faces on the injection plane z = {0} µm")]
    NoInjectionPlane(f64),
    #[error("invalid pump: {0}")]
    Pump(String),
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("external current has length {0}, expected {1}")]
    Shape(usize, usize),
}

/// Auxiliary-equation form of a dispersion model, frequencies in rad/ps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ade {
    None,
    Drude { wp2: f64, gamma: f64 },
    Lorentz { wp2: f64, wo2: f64, gamma: f64 },
}

impl Ade {
    pub fn from_model(m: &DispersionModel) -> Ade {
        match *m {
            DispersionModel::None { .. } => Ade::None,
            DispersionModel::Drude { omega_p, gamma, .. } => Ade::Drude {
                wp2: rad_per_s_to_rad_per_ps(omega_p).powi(2),
                gamma: rad_per_s_to_rad_per_ps(gamma),
            },
            DispersionModel::Lorentz { omega_p, omega_o, gamma, .. } => Ade::Lorentz {
                wp2: rad_per_s_to_rad_per_ps(omega_p).powi(2),
                wo2: rad_per_s_to_rad_per_ps(omega_o).powi(2),
                gamma: rad_per_s_to_rad_per_ps(gamma),
            },
        }
    }
}

/// Time derivatives (∂t Ĵp, ∂t P̂) of one polarization component.
/// Drude: ∂t Ĵp = ωp²E − γĴp. Lorentz adds −ωo²P̂, with ∂t P̂ = Ĵp.
pub fn ade_rhs(ade: Ade, e: f64, jp: f64, p: f64) -> (f64, f64) {
    match ade {
        Ade::None => (0.0, 0.0),
        Ade::Drude { wp2, gamma } => (wp2 * e - gamma * jp, 0.0),
        Ade::Lorentz { wp2, wo2, gamma } => (wp2 * e - gamma * jp - wo2 * p, jp),
    }
}

/// Electromagnetic medium of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub eps_inf: f64,
    pub mu_r: f64,
    pub ade: Ade,
}

impl Medium {
    pub fn vacuum() -> Medium {
        Medium::dielectric(1.0)
    }

    pub fn dielectric(eps: f64) -> Medium {
        Medium {
            eps_inf: eps,
            mu_r: 1.0,
            ade: Ade::None,
        }
    }

    pub fn from_region(m: &RegionMaterial) -> Medium {
        Medium {
            eps_inf: m.dispersion.eps_inf(),
            mu_r: m.mu_r,
            ade: Ade::from_model(&m.dispersion),
        }
    }

    /// Relative wave impedance √(μ/ε∞).
    pub fn impedance(&self) -> f64 {
        (self.mu_r / self.eps_inf).sqrt()
    }
}

/// Upwind (α = 1) or blended numerical flux. Traces are 3-vectors; the
/// normal is in the mesh plane. [[u]] = u⁻ − u⁺.
/// E* = (Y⁻E⁻ + Y⁺E⁺ − α n̂×[[H]])/(Y⁻ + Y⁺),
/// H* = (Z⁻H⁻ + Z⁺H⁺ + α n̂×[[E]])/(Z⁻ + Z⁺).
#[allow(clippy::too_many_arguments)]
pub fn upwind_flux(
    e_minus: [f64; 3],
    e_plus: [f64; 3],
    h_minus: [f64; 3],
    h_plus: [f64; 3],
    z_minus: f64,
    z_plus: f64,
    normal: [f64; 3],
    alpha: f64,
) -> ([f64; 3], [f64; 3]) {
    let (ym, yp) = (1.0 / z_minus, 1.0 / z_plus);
    let nxh = cross(normal, sub(h_minus, h_plus));
    let nxe = cross(normal, sub(e_minus, e_plus));
    let mut es = [0.0; 3];
    let mut hs = [0.0; 3];
    for c in 0..3 {
        es[c] = (ym * e_minus[c] + yp * e_plus[c] - alpha * nxh[c]) / (ym + yp);
        hs[c] = (z_minus * h_minus[c] + z_plus * h_plus[c] + alpha * nxe[c]) / (z_minus + z_plus);
    }
    (es, hs)
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Tangential part of `v` for the in-plane normal `n`.
#[inline]
fn tangential(v: [f64; 3], n: [f64; 3]) -> [f64; 3] {
    let d = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
    [v[0] - d * n[0], v[1] - d * n[1], v[2] - d * n[2]]
}

/// Complex-frequency-shifted PML on the vertical axis: stretch
/// s = 1 + σ/(α + iω) with σ = σ_max (d/D)^m, α = α_max (1 − d/D) and
/// σ_max = −(m+1) c ln R / (2 n D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSpec {
    /// Layer thickness at the top and bottom of the vertical axis [µm]
    /// (0 disables that side).
    pub top: f64,
    pub bottom: f64,
    pub reflection: f64,
    pub grading: f64,
    /// [rad/ps]
    pub alpha_max: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        PmlSpec {
            top: 0.0,
            bottom: 0.0,
            reflection: 1e-6,
            grading: 3.0,
            alpha_max: 2.0 * std::f64::consts::PI,
        }
    }
}

/// Temporal shape of the injected plane wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// ½A(sin ω₁t + sin ω₂t) with a raised-cosine ramp of `ramp_ps`.
    TwoTone { f1_thz: f64, f2_thz: f64, ramp_ps: f64 },
    /// A exp(−((t − delay)/width)²) sin(ω₀(t − delay)).
    Pulse { f0_thz: f64, width_ps: f64, delay_ps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub waveform: Waveform,
    /// Peak amplitude [V/m].
    pub amplitude: f64,
    /// Vertical coordinate of the total-field/scattered-field plane [µm].
    pub z_inject: f64,
    /// Polarization in the field frame (unit vector, in the horizontal
    /// plane).
    pub polarization: [f64; 3],
}

impl PumpSpec {
    /// Two-tone continuous-wave pump with the default ramp of two optical
    /// cycles of the mean frequency.
    pub fn two_tone(f1_thz: f64, f2_thz: f64, amplitude: f64, z_inject: f64, dim: usize) -> PumpSpec {
        PumpSpec {
            waveform: Waveform::TwoTone {
                f1_thz,
                f2_thz,
                ramp_ps: 4.0 / (f1_thz + f2_thz),
            },
            amplitude,
            z_inject,
            polarization: x_polarization(dim),
        }
    }

    pub fn validate(&self) -> Result<(), MaxwellError> {
        match self.waveform {
            Waveform::TwoTone { f1_thz, f2_thz, ramp_ps } => {
                if f1_thz == f2_thz {
                    return Err(MaxwellError::Pump("the two tones must differ".into()));
                }
                if !(f1_thz > 0.0 && f2_thz > 0.0) {
                    return Err(MaxwellError::Pump("frequencies must be positive".into()));
                }
                if !(ramp_ps >= 0.0) {
                    return Err(MaxwellError::Pump("ramp must be non-negative".into()));
                }
            }
            Waveform::Pulse { f0_thz, width_ps, .. } => {
                if !(f0_thz >= 0.0 && width_ps > 0.0) {
                    return Err(MaxwellError::Pump("pulse needs f0 >= 0 and width > 0".into()));
                }
            }
        }
        if !self.amplitude.is_finite() {
            return Err(MaxwellError::Pump("amplitude must be finite".into()));
        }
        let p = self.polarization;
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(MaxwellError::Pump("polarization must be a unit vector".into()));
        }
        Ok(())
    }

    /// Incident E amplitude at the injection plane at time t [V/m].
    pub fn signal(&self, t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        match self.waveform {
            Waveform::TwoTone { f1_thz, f2_thz, ramp_ps } => {
                if t <= 0.0 {
                    return 0.0;
                }
                let ramp = if t < ramp_ps { 0.5 * (1.0 - (std::f64::consts::PI * t / ramp_ps).cos()) } else { 1.0 };
                0.5 * self.amplitude * ramp * ((tau * f1_thz * t).sin() + (tau * f2_thz * t).sin())
            }
            Waveform::Pulse { f0_thz, width_ps, delay_ps } => {
                let s = (t - delay_ps) / width_ps;
                self.amplitude * (-s * s).exp() * (tau * f0_thz * (t - delay_ps)).sin()
            }
        }
    }
}

/// Field-frame index of the physical x direction: a0 in 2D, a1 in 1D
/// (where a0 is the vertical axis).
pub fn x_component(dim: usize) -> usize {
    if dim == 1 {
        1
    } else {
        0
    }
}

pub fn x_polarization(dim: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[x_component(dim)] = 1.0;
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxwellOptions {
    /// Flux blend: 1 upwind, 0 central.
    pub alpha: f64,
    pub cfl: f64,
    pub pml: PmlSpec,
    /// Boundary tags treated as PEC; other unconnected faces are
    /// first-order absorbing (zero exterior state).
    pub pec: Vec<BoundaryTag>,
}

impl Default for MaxwellOptions {
    fn default() -> Self {
        MaxwellOptions {
            alpha: 1.0,
            cfl: 0.5,
            pml: PmlSpec::default(),
            pec: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ghost {
    Connected,
    Pec,
    Absorbing,
}

/// Maxwell state: time and node-major variables (see [`NV`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub t: f64,
    pub y: Vec<f64>,
}

impl EmState {
    pub fn zeros(n_nodes: usize) -> EmState {
        EmState {
            t: 0.0,
            y: vec![0.0; n_nodes * NV],
        }
    }

    pub fn get(&self, node: usize, var: usize) -> [f64; 3] {
        let b = node * NV + var;
        [self.y[b], self.y[b + 1], self.y[b + 2]]
    }

    pub fn set(&mut self, node: usize, var: usize, v: [f64; 3]) {
        let b = node * NV + var;
        self.y[b..b + 3].copy_from_slice(&v);
    }

    pub fn e(&self, node: usize) -> [f64; 3] {
        self.get(node, VAR_E)
    }

    pub fn h(&self, node: usize) -> [f64; 3] {
        self.get(node, VAR_H)
    }

    pub fn jp(&self, node: usize) -> [f64; 3] {
        self.get(node, VAR_JP)
    }
}

struct Scratch {
    uk: Vec<f64>,
    // [field E/H][axis][comp] nodal derivative buffers
    g: Vec<Vec<f64>>,
    flux: Vec<f64>,
    fl: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(np: usize, nf: usize) -> Scratch {
        Scratch {
            uk: vec![0.0; np],
            g: vec![vec![0.0; np]; 2 * 2 * 3],
            flux: vec![0.0; nf],
            fl: vec![vec![0.0; nf]; 2 * 2 * 3],
        }
    }
}

pub struct MaxwellSolver<'a> {
    pub disc: &'a Discretization,
    pub media: Vec<Medium>,
    pub opts: MaxwellOptions,
    pub pump: Option<PumpSpec>,
    ghosts: Vec<Vec<Ghost>>,
    /// +1 on TF-side faces of the injection plane, −1 on SF-side faces.
    tfsf: Vec<Vec<i8>>,
    sigma: Vec<f64>,
    alpha_pml: Vec<f64>,
    pml_elem: Vec<bool>,
}

impl<'a> MaxwellSolver<'a> {
    pub fn new(disc: &'a Discretization, media: Vec<Medium>, opts: MaxwellOptions, pump: Option<PumpSpec>) -> Result<MaxwellSolver<'a>, MaxwellError> {
        if media.len() != disc.n_elements() {
            return Err(MaxwellError::Shape(media.len(), disc.n_elements()));
        }
        if !(opts.cfl > 0.0) || !(0.0..=1.0).contains(&opts.alpha) {
            return Err(MaxwellError::Setting("need cfl > 0 and alpha in [0, 1]".into()));
        }
        if media.iter().any(|m| !(m.eps_inf > 0.0 && m.mu_r > 0.0)) {
            return Err(MaxwellError::Setting("ε∞ and μr must be positive".into()));
        }
        let ghosts = disc
            .faces
            .iter()
            .map(|fs| {
                fs.iter()
                    .map(|c| match c.kind {
                        FaceKind::Boundary(tag) if opts.pec.contains(&tag) => Ghost::Pec,
                        FaceKind::Boundary(_) => Ghost::Absorbing,
                        _ => Ghost::Connected,
                    })
                    .collect()
            })
            .collect();
        let zaxis = disc.dim() - 1;
        let mut tfsf = vec![vec![0i8; disc.nfaces()]; disc.n_elements()];
        if let Some(p) = &pump {
            p.validate()?;
            let (lo, hi) = disc.mesh.bounds();
            let tol = 1e-9 * (hi[zaxis] - lo[zaxis]).abs().max(1.0);
            let mut found = false;
            for k in 0..disc.n_elements() {
                let zc = disc.mesh.element_centroid(k)[zaxis];
                for f in 0..disc.nfaces() {
                    if disc.faces[k][f].kind != FaceKind::Interior {
                        continue;
                    }
                    let nrm = disc.ops.geom[k].normals[f];
                    let fc = disc.mesh.face_centroid(k, f);
                    if (fc[zaxis] - p.z_inject).abs() < tol && nrm[zaxis].abs() > 1.0 - 1e-9 {
                        tfsf[k][f] = if zc < p.z_inject { 1 } else { -1 };
                        found = true;
                    }
                }
            }
            if !found {
                return Err(MaxwellError::NoInjectionPlane(p.z_inject));
            }
        }
        let mut solver = MaxwellSolver {
            disc,
            media,
            opts,
            pump,
            ghosts,
            tfsf,
            sigma: vec![0.0; disc.n_nodes()],
            alpha_pml: vec![0.0; disc.n_nodes()],
            pml_elem: vec![false; disc.n_elements()],
        };
        solver.grade_pml()?;
        Ok(solver)
    }

    /// Solver with one medium per mesh region.
    pub fn from_materials(disc: &'a Discretization, materials: &MaterialParams, opts: MaxwellOptions, pump: Option<PumpSpec>) -> Result<MaxwellSolver<'a>, MaxwellError> {
        let media = disc.mesh.regions().iter().map(|&r| Medium::from_region(materials.region(r))).collect();
        MaxwellSolver::new(disc, media, opts, pump)
    }

    fn grade_pml(&mut self) -> Result<(), MaxwellError> {
        let spec = self.opts.pml;
        if spec.top == 0.0 && spec.bottom == 0.0 {
            return Ok(());
        }
        if !(spec.top >= 0.0 && spec.bottom >= 0.0 && spec.reflection > 0.0 && spec.reflection < 1.0 && spec.grading >= 0.0) {
            return Err(MaxwellError::Setting("invalid PML parameters".into()));
        }
        let disc = self.disc;
        let zaxis = disc.dim() - 1;
        let (lo, hi) = disc.mesh.bounds();
        let np = disc.np();
        for node in 0..disc.n_nodes() {
            let z = disc.ops.coords[node][zaxis];
            let (depth, thick) = if spec.top > 0.0 && z > hi[zaxis] - spec.top {
                (z - (hi[zaxis] - spec.top), spec.top)
            } else if spec.bottom > 0.0 && z < lo[zaxis] + spec.bottom {
                ((lo[zaxis] + spec.bottom) - z, spec.bottom)
            } else {
                continue;
            };
            let m = &self.media[node / np];
            let n = (m.eps_inf * m.mu_r).sqrt();
            let smax = -(spec.grading + 1.0) * C_UM_PER_PS * spec.reflection.ln() / (2.0 * n * thick);
            let s = (depth / thick).clamp(0.0, 1.0);
            self.sigma[node] = smax * s.powf(spec.grading);
            self.alpha_pml[node] = spec.alpha_max * (1.0 - s);
            self.pml_elem[node / np] = true;
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.disc.n_nodes()
    }

    pub fn zeros(&self) -> EmState {
        EmState::zeros(self.n_nodes())
    }

    /// Stable step: cfl · min h / (c (2p+1)).
    pub fn stable_dt(&self) -> f64 {
        let p = self.disc.ops.refel.order as f64;
        self.opts.cfl * self.disc.mesh.min_edge() / (C_UM_PER_PS * (2.0 * p + 1.0))
    }

    /// PML damping σ per node [1/ps].
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// ½∫(ε∞|E|² + μr|H̃|²) dV, evaluated with the element mass matrices.
    pub fn energy(&self, s: &EmState) -> f64 {
        self.energy_over(s, |_| true)
    }

    /// Energy restricted to elements without PML damping.
    pub fn interior_energy(&self, s: &EmState) -> f64 {
        self.energy_over(s, |k| !self.pml_elem[k])
    }

    fn energy_over(&self, s: &EmState, keep: impl Fn(usize) -> bool) -> f64 {
        let np = self.disc.np();
        let mut u = vec![0.0; np];
        let mut mu = vec![0.0; np];
        let mut total = 0.0;
        for k in (0..self.disc.n_elements()).filter(|&k| keep(k)) {
            let m = &self.media[k];
            for (var, w) in [(VAR_E, m.eps_inf), (VAR_H, m.mu_r)] {
                for c in 0..3 {
                    for i in 0..np {
                        u[i] = s.y[(k * np + i) * NV + var + c];
                    }
                    self.disc.ops.mass_apply(k, &u, &mut mu);
                    total += 0.5 * w * u.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        total
    }

    /// Node closest to `x`.
    pub fn nearest_node(&self, x: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (n, c) in self.disc.ops.coords.iter().enumerate() {
            let d = (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2);
            if d < best.0 {
                best = (d, n);
            }
        }
        best.1
    }

    /// Incident (E, H̃) of the pump at the injection plane, as seen from
    /// the medium of element `k_sf`.
    fn incident(&self, t: f64, k_sf: usize) -> ([f64; 3], [f64; 3]) {
        let Some(p) = &self.pump else { return ([0.0; 3], [0.0; 3]) };
        let s = p.signal(t);
        let e = [s * p.polarization[0], s * p.polarization[1], s * p.polarization[2]];
        let mut kdir = [0.0; 3];
        kdir[self.disc.dim() - 1] = -1.0;
        let z = self.media[k_sf].impedance();
        let h = cross(kdir, e);
        (e, [h[0] / z, h[1] / z, h[2] / z])
    }

    /// Time derivative of the full state. `j_ext` is the node-major scaled
    /// external current Ĵ (3 per node), if any.
    pub fn rhs(&self, t: f64, y: &[f64], j_ext: Option<&[f64]>, out: &mut [f64]) -> Result<(), MaxwellError> {
        let nn = self.n_nodes();
        if y.len() != nn * NV || out.len() != nn * NV {
            return Err(MaxwellError::Shape(y.len(), nn * NV));
        }
        if let Some(j) = j_ext {
            if j.len() != nn * 3 {
                return Err(MaxwellError::Shape(j.len(), nn * 3));
            }
        }
        let np = self.disc.np();
        let nf = self.disc.nfaces() * self.disc.nfp();
        out.par_chunks_mut(np * NV)
            .enumerate()
            .try_for_each_init(|| Scratch::new(np, nf), |s, (k, ob)| self.element_rhs(k, t, y, j_ext, ob, s))
    }

    fn element_rhs(&self, k: usize, t: f64, y: &[f64], j_ext: Option<&[f64]>, out: &mut [f64], s: &mut Scratch) -> Result<(), MaxwellError> {
        let disc = self.disc;
        let ops = &disc.ops;
        let np = disc.np();
        let nfp = disc.nfp();
        let dim = disc.dim();
        let geom = &ops.geom[k];
        let med = self.media[k];
        let c0 = C_UM_PER_PS;
        let at = |node: usize, var: usize| -> [f64; 3] {
            let b = node * NV + var;
            [y[b], y[b + 1], y[b + 2]]
        };
        // gradient buffers: index (field*2 + axis)*3 + comp, field 0 = E, 1 = H
        let gi = |field: usize, axis: usize, comp: usize| (field * 2 + axis) * 3 + comp;
        for field in 0..2 {
            let var = if field == 0 { VAR_E } else { VAR_H };
            for comp in 0..3 {
                for i in 0..np {
                    s.uk[i] = y[(k * np + i) * NV + var + comp];
                }
                for axis in 0..dim {
                    let g = &mut s.g[gi(field, axis, comp)];
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for a in 0..dim {
                        let cf = geom.drdx[a][axis];
                        if cf != 0.0 {
                            matvec_add(&ops.refel.diff[a], &s.uk, cf, g);
                        }
                    }
                }
            }
        }
        // face corrections n_a (u* − u⁻), tangential part only
        for f in 0..disc.nfaces() {
            let conn = &disc.faces[k][f];
            let n2 = geom.normals[f];
            let nrm = [n2[0], n2[1], 0.0];
            for j in 0..nfp {
                let node = k * np + ops.refel.face_nodes[f][j];
                let em = at(node, VAR_E);
                let hm = at(node, VAR_H);
                let zm = med.impedance();
                let (ep, hp, zp) = match self.ghosts[k][f] {
                    Ghost::Connected => {
                        let g = conn.nb_nodes[j];
                        let mut ep = at(g, VAR_E);
                        let mut hp = at(g, VAR_H);
                        let side = self.tfsf[k][f];
                        if side != 0 {
                            let k_sf = if side > 0 { g / np } else { k };
                            let (ei, hi) = self.incident(t, k_sf);
                            let sg = side as f64;
                            for c in 0..3 {
                                ep[c] += sg * ei[c];
                                hp[c] += sg * hi[c];
                            }
                        }
                        (ep, hp, self.media[g / np].impedance())
                    }
                    Ghost::Pec => ([-em[0], -em[1], -em[2]], hm, zm),
                    Ghost::Absorbing => ([0.0; 3], [0.0; 3], zm),
                };
                let (es, hs) = upwind_flux(em, ep, hm, hp, zm, zp, nrm, self.opts.alpha);
                let de = tangential(sub(es, em), nrm);
                let dh = tangential(sub(hs, hm), nrm);
                for axis in 0..dim {
                    for c in 0..3 {
                        s.fl[gi(0, axis, c)][f * nfp + j] = nrm[axis] * de[c] * geom.fscale[f];
                        s.fl[gi(1, axis, c)][f * nfp + j] = nrm[axis] * dh[c] * geom.fscale[f];
                    }
                }
            }
        }
        for field in 0..2 {
            for axis in 0..dim {
                for c in 0..3 {
                    let idx = gi(field, axis, c);
                    s.flux.copy_from_slice(&s.fl[idx]);
                    matvec_add(&ops.refel.lift, &s.flux, 1.0, &mut s.g[idx]);
                }
            }
        }
        let zaxis = dim - 1;
        let pml = self.pml_elem[k];
        for i in 0..np {
            let node = k * np + i;
            let o = &mut out[i * NV..(i + 1) * NV];
            let sig = self.sigma[node];
            let apml = self.alpha_pml[node];
            // stretched vertical derivatives and ψ updates
            let mut gz_e = [0.0; 3];
            let mut gz_h = [0.0; 3];
            for c in 0..3 {
                gz_e[c] = s.g[gi(0, zaxis, c)][i];
                gz_h[c] = s.g[gi(1, zaxis, c)][i];
                if pml {
                    let pe = y[node * NV + VAR_PSI_E + c];
                    let ph = y[node * NV + VAR_PSI_H + c];
                    o[VAR_PSI_E + c] = sig * gz_e[c] - (sig + apml) * pe;
                    o[VAR_PSI_H + c] = sig * gz_h[c] - (sig + apml) * ph;
                    gz_e[c] -= pe;
                    gz_h[c] -= ph;
                } else {
                    o[VAR_PSI_E + c] = 0.0;
                    o[VAR_PSI_H + c] = 0.0;
                }
            }
            let mut curl_e = [0.0; 3];
            let mut curl_h = [0.0; 3];
            for axis in 0..dim {
                let mut ax = [0.0; 3];
                ax[axis] = 1.0;
                let (ge, gh) = if axis == zaxis {
                    (gz_e, gz_h)
                } else {
                    (
                        [s.g[gi(0, axis, 0)][i], s.g[gi(0, axis, 1)][i], s.g[gi(0, axis, 2)][i]],
                        [s.g[gi(1, axis, 0)][i], s.g[gi(1, axis, 1)][i], s.g[gi(1, axis, 2)][i]],
                    )
                };
                let ce = cross(ax, ge);
                let ch = cross(ax, gh);
                for c in 0..3 {
                    curl_e[c] += ce[c];
                    curl_h[c] += ch[c];
                }
            }
            let e = at(node, VAR_E);
            let jp = at(node, VAR_JP);
            let p = at(node, VAR_P);
            for c in 0..3 {
                let jx = j_ext.map_or(0.0, |j| j[node * 3 + c]);
                let (djp, dp) = ade_rhs(med.ade, e[c], jp[c], p[c]);
                o[VAR_JP + c] = djp;
                o[VAR_P + c] = dp;
                o[VAR_E + c] = (c0 * curl_h[c] - jp[c] - jx) / med.eps_inf;
                o[VAR_H + c] = -c0 * curl_e[c] / med.mu_r;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(MaxwellError::NonFinite { element: k, time: t });
        }
        Ok(())
    }

    /// One LSRK(5,4) step of the free (or externally driven) system.
    pub fn step(&self, s: &mut EmState, dt: f64, j_ext: Option<&[f64]>) -> Result<(), MaxwellError> {
        let t0 = s.t;
        lsrk54_step(&mut s.y, t0, dt, |t, y, out| self.rhs(t, y, j_ext, out))?;
        s.t = t0 + dt;
        Ok(())
    }
}

const RK4A: [f64; 5] = [
    0.0,
    -567_301_805_773.0 / 1_357_537_059_087.0,
    -2_404_267_990_393.0 / 2_016_746_695_238.0,
    -3_550_918_686_646.0 / 2_091_501_179_385.0,
    -1_275_806_237_668.0 / 842_570_457_699.0,
];
const RK4B: [f64; 5] = [
    1_432_997_174_477.0 / 9_575_080_441_755.0,
    5_161_836_677_717.0 / 13_612_068_292_357.0,
    1_720_146_321_549.0 / 2_090_206_949_498.0,
    3_134_564_353_537.0 / 4_481_467_310_338.0,
    2_277_821_191_437.0 / 14_882_151_754_819.0,
];
const RK4C: [f64; 5] = [
    0.0,
    1_432_997_174_477.0 / 9_575_080_441_755.0,
    2_526_269_341_429.0 / 6_820_363_183_890.0,
    2_006_345_519_317.0 / 3_224_310_063_776.0,
    2_802_321_613_138.0 / 2_924_317_926_251.0,
];

/// Carpenter–Kennedy low-storage five-stage fourth-order Runge–Kutta step.
pub fn lsrk54_step<E>(y: &mut [f64], t: f64, dt: f64, mut rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>) -> Result<(), E> {
    let n = y.len();
    let mut res = vec![0.0; n];
    let mut k = vec![0.0; n];
    for stage in 0..5 {
        rhs(t + RK4C[stage] * dt, y, &mut k)?;
        for i in 0..n {
            res[i] = RK4A[stage] * res[i] + dt * k[i];
            y[i] += RK4B[stage] * res[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured, StructuredSpec};

    #[test]
    fn flux_consistency_and_jump() {
        let n = [1.0, 0.0, 0.0];
        let e = [0.3, -1.0, 2.0];
        let h = [0.1, 0.5, -0.7];
        let (es, hs) = upwind_flux(e, e, h, h, 1.3, 1.3, n, 1.0);
        for c in 0..3 {
            assert!((es[c] - e[c]).abs() < 1e-15 && (hs[c] - h[c]).abs() < 1e-15);
        }
        let delta = [0.0, 0.4, -0.2];
        let (_, hs) = upwind_flux(delta, [0.0; 3], h, h, 1.0, 1.0, n, 1.0);
        let half = cross(n, delta);
        for c in 0..3 {
            assert!((hs[c] - (h[c] + 0.5 * half[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn right_going_wave_is_upwinded() {
        let n = [1.0, 0.0, 0.0];
        let (es, hs) = upwind_flux([0.0, 2.0, 0.0], [0.0; 3], [0.0, 0.0, 2.0], [0.0; 3], 1.0, 1.0, n, 1.0);
        assert_eq!(es, [0.0, 2.0, 0.0]);
        assert_eq!(hs, [0.0, 0.0, 2.0]);
    }

    #[test]
    fn lsrk_scalar_ode() {
        let mut y = vec![1.0];
        for s in 0..10 {
            lsrk54_step::<()>(&mut y, s as f64 * 0.1, 0.1, |_, y, o| {
                o[0] = -y[0];
                Ok(())
            })
            .unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-6);
        let mut z = vec![3.0, -2.0];
        lsrk54_step::<()>(&mut z, 0.0, 0.5, |_, _, o| {
            o.iter_mut().for_each(|v| *v = 0.0);
            Ok(())
        })
        .unwrap();
        assert_eq!(z, vec![3.0, -2.0]);
    }

    #[test]
    fn ade_limits() {
        assert_eq!(ade_rhs(Ade::Drude { wp2: 0.0, gamma: 2.0 }, 5.0, 0.0, 0.0), (0.0, 0.0));
        // static Lorentz fixed point: P = ωp²/ωo² E, Ĵ = 0
        let (wp2, wo2) = (9.0, 4.0);
        let (dj, dp) = ade_rhs(Ade::Lorentz { wp2, wo2, gamma: 1.0 }, 2.0, 0.0, wp2 / wo2 * 2.0);
        assert!(dj.abs() < 1e-14 && dp == 0.0);
    }

    #[test]
    fn zero_state_has_zero_derivative() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 1.0, 0.0, 1.0, 0.5)).unwrap();
        let disc = Discretization::new(m, 2, vec![]).unwrap();
        let solver = MaxwellSolver::new(&disc, vec![Medium::vacuum(); disc.n_elements()], MaxwellOptions::default(), None).unwrap();
        let s = solver.zeros();
        let mut out = vec![1.0; s.y.len()];
        solver.rhs(0.0, &s.y, None, &mut out).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pec_cavity_hand_computation() {
        let h = 1.0 / 3.0;
        let m = build_structured(&StructuredSpec::interval(0.0, 1.0, h)).unwrap();
        let disc = Discretization::new(m, 1, vec![]).unwrap();
        let opts = MaxwellOptions {
            pec: vec![BoundaryTag::XMin, BoundaryTag::XMax],
            ..Default::default()
        };
        let solver = MaxwellSolver::new(&disc, vec![Medium::vacuum(); 3], opts, None).unwrap();
        let mut s = solver.zeros();
        for n in 0..disc.n_nodes() {
            s.set(n, VAR_E, [0.0, 1.0, 0.0]);
        }
        let mut out = vec![0.0; s.y.len()];
        solver.rhs(0.0, &s.y, None, &mut out).unwrap();
        // wall trace E* = 0, so the lift of n·(0 − E) through M⁻¹ = (2/h)[[2, −1], [−1, 2]]
        // gives ∂t H̃_z = −c (2/h)(2, −1) on the left element and −c (2/h)(−1, 2)·(−1) on the right
        let c = C_UM_PER_PS;
        for n in 0..disc.n_nodes() {
            let x = disc.ops.coords[n][0];
            let k = n / disc.np();
            let xc = disc.mesh.element_centroid(k)[0];
            let expect = if xc < h {
                if x < 1e-12 { -4.0 * c / h } else { 2.0 * c / h }
            } else if xc > 2.0 * h {
                if x > 1.0 - 1e-12 { 4.0 * c / h } else { -2.0 * c / h }
            } else {
                0.0
            };
            let got = out[n * NV + VAR_H + 2];
            assert!((got - expect).abs() < 1e-9 * c / h, "x={x}: {got} vs {expect}");
            if expect == 0.0 {
                assert_eq!(out[n * NV + VAR_E + 1], 0.0);
            }
        }
    }
}
