//! Stationary drift-diffusion solver, ∇·(d q) + ∇·(v n) = R with q = ∇n,
//! and the Gummel iteration coupling it to the Poisson solver.
//!
//! Units: n in cm⁻³, lengths in µm, d in µm²/ps, v in µm/ps, R in cm⁻³/ps.

use std::collections::BTreeMap;
use std::io::Write;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgcore::ldg::{self, FaceRule, MixedLayout};
use crate::dgcore::{DgError, Discretization, FaceKind};
use crate::linalg::{LinalgError, LinearSolverHandle};
use crate::materials::{recombination_linearized, MaterialParams};
use crate::mesh::{Axis, BoundaryTag, Mesh, Region};
use crate::poisson::{self, PoissonError, PoissonProblem};
use crate::units::{CM2_PER_S_TO_UM2_PER_PS, PER_S_TO_PER_PS, Q_OVER_EPS0_V_UM2_CM3, V_PER_UM_TO_V_PER_CM};

#[derive(Debug, Error)]
pub enum DDError {
    #[error("coefficient arrays have length {0}, expected {1}")]
    Shape(usize, usize),
    #[error("diffusion coefficient must be positive (node {0})")]
    Diffusion(usize),
    #[error("non-finite drift velocity at node {0}")]
    Velocity(usize),
    #[error("linear solve failed: {0}")]
    Solver(#[from] LinalgError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Dg(#[from] DgError),
    #[error("Gummel iteration did not converge in {iterations} iterations (last update {update:e})")]
    NotConverged { iterations: usize, update: f64, state: Box<SteadyState> },
    #[error("invalid device: {0}")]
    Device(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Carrier {
    Electron,
    Hole,
}

/// n̂·(vn)* of the local Lax-Friedrichs flux,
/// (vn)* = {vn} − α n̂(n⁻ − n⁺), α = max(|n̂·v⁻|, |n̂·v⁺|)/2.
pub fn lax_friedrichs_flux(n_minus: f64, n_plus: f64, v_minus: [f64; 2], v_plus: [f64; 2], normal: [f64; 2]) -> f64 {
    let vm = normal[0] * v_minus[0] + normal[1] * v_minus[1];
    let vp = normal[0] * v_plus[0] + normal[1] * v_plus[1];
    let alpha = 0.5 * vm.abs().max(vp.abs());
    0.5 * (vm * n_minus + vp * n_plus) - alpha * (n_minus - n_plus)
}

/// LF dissipation coefficient α for given normal velocities.
pub fn lf_alpha(vn_minus: f64, vn_plus: f64) -> f64 {
    0.5 * vn_minus.abs().max(vn_plus.abs())
}

/// Charge-neutral equilibrium densities (n_e, n_h) for net doping C.
pub fn equilibrium_contact_densities(c: f64, n_i: f64) -> (f64, f64) {
    let root = (c * c + 4.0 * n_i * n_i).sqrt();
    if c >= 0.0 {
        let ne = 0.5 * (c + root);
        (ne, n_i * n_i / ne)
    } else {
        let nh = 0.5 * (-c + root);
        (n_i * n_i / nh, nh)
    }
}

/// Electrode potential φ = V_el + V_T ln(n_e^s / n_i).
pub fn contact_potential(v_el: f64, n_e_surface: f64, n_i: f64, v_t: f64) -> f64 {
    v_el + v_t * (n_e_surface / n_i).ln()
}

/// Linear stationary DD problem for one carrier, with nodal coefficients.
pub struct DDProblem<'a> {
    pub disc: &'a Discretization,
    /// Diffusion coefficient per node [µm²/ps].
    pub d: Vec<f64>,
    /// Drift coefficient per component and node [µm/ps], already signed for
    /// the carrier (v_e = +μ_e E, v_h = −μ_h E).
    pub v: Vec<Vec<f64>>,
    /// Net recombination R = a·n − b: `r_a` [1/ps], `r_b` [cm⁻³/ps].
    pub r_a: Vec<f64>,
    pub r_b: Vec<f64>,
    /// Total normal flux n̂·(dq + vn) on unconnected, non-contact faces.
    pub robin: f64,
    /// Contact densities by boundary tag.
    pub dirichlet: BTreeMap<BoundaryTag, f64>,
    /// Pseudo-time regularization (Δτ [ps], previous iterate).
    pub pseudo: Option<(f64, Vec<f64>)>,
}

impl<'a> DDProblem<'a> {
    pub fn new(disc: &'a Discretization) -> DDProblem<'a> {
        let nn = disc.n_nodes();
        DDProblem {
            disc,
            d: vec![1.0; nn],
            v: vec![vec![0.0; nn]; disc.dim()],
            r_a: vec![0.0; nn],
            r_b: vec![0.0; nn],
            robin: 0.0,
            dirichlet: BTreeMap::new(),
            pseudo: None,
        }
    }

    pub fn validate(&self) -> Result<(), DDError> {
        let nn = self.disc.n_nodes();
        for len in [self.d.len(), self.r_a.len(), self.r_b.len()] {
            if len != nn {
                return Err(DDError::Shape(len, nn));
            }
        }
        if self.v.len() != self.disc.dim() {
            return Err(DDError::Shape(self.v.len(), self.disc.dim()));
        }
        for c in &self.v {
            if c.len() != nn {
                return Err(DDError::Shape(c.len(), nn));
            }
            if let Some(i) = c.iter().position(|x| !x.is_finite()) {
                return Err(DDError::Velocity(i));
            }
        }
        if let Some(i) = self.d.iter().position(|&x| !(x > 0.0)) {
            return Err(DDError::Diffusion(i));
        }
        Ok(())
    }

    pub fn layout(&self) -> MixedLayout {
        MixedLayout {
            np: self.disc.np(),
            dim: self.disc.dim(),
        }
    }

    pub fn rules(&self) -> Vec<Vec<FaceRule>> {
        dd_rules(self.disc, &self.dirichlet, self.robin)
    }

    pub fn has_contacts(&self) -> bool {
        self.rules().iter().flatten().any(|r| matches!(r, FaceRule::Dirichlet(_)))
    }
}

/// Face rules for carrier transport: periodic and interior faces connect
/// without offset, contact tags are Dirichlet, the rest carry `robin`.
pub fn dd_rules(disc: &Discretization, dirichlet: &BTreeMap<BoundaryTag, f64>, robin: f64) -> Vec<Vec<FaceRule>> {
    ldg::face_rules(disc, |_, _, c| match c.kind {
        FaceKind::Boundary(tag) => match dirichlet.get(&tag) {
            Some(&v) => FaceRule::Dirichlet(v),
            None => FaceRule::Flux(robin),
        },
        _ => FaceRule::Connected { offset: 0.0 },
    })
}

/// Strong-form ∇·(vn) with the Lax-Friedrichs flux. On flux-rule faces the
/// whole prescribed flux is carried by the diffusive part, so the advective
/// star is zero there.
pub fn advflux(disc: &Discretization, rules: &[FaceRule], k: usize, v: &[Vec<f64>], n: &dyn Fn(usize) -> f64) -> Vec<f64> {
    let ops = &disc.ops;
    let np = disc.np();
    let nfp = disc.nfp();
    let dim = disc.dim();
    let nk: Vec<f64> = (0..np).map(|i| n(k * np + i)).collect();
    let mut out = vec![0.0; np];
    let mut tmp = vec![0.0; np];
    let mut vn = vec![0.0; np];
    for c in 0..dim {
        for i in 0..np {
            vn[i] = v[c][k * np + i] * nk[i];
        }
        ops.deriv(k, c, &vn, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    let mut flux = vec![0.0; disc.nfaces() * nfp];
    for f in 0..disc.nfaces() {
        let conn = &disc.faces[k][f];
        let nrm = ops.geom[k].normals[f];
        for j in 0..nfp {
            let i = ops.refel.face_nodes[f][j];
            let node = k * np + i;
            let vm = [v[0][node], if dim > 1 { v[1][node] } else { 0.0 }];
            let vn_minus = nrm[0] * vm[0] + nrm[1] * vm[1];
            let star = match rules[f] {
                FaceRule::Connected { .. } => {
                    let g = conn.nb_nodes[j];
                    let vp = [v[0][g], if dim > 1 { v[1][g] } else { 0.0 }];
                    lax_friedrichs_flux(nk[i], n(g), vm, vp, nrm)
                }
                FaceRule::Dirichlet(nd) => lax_friedrichs_flux(nk[i], nd, vm, vm, nrm),
                FaceRule::Flux(_) => 0.0,
            };
            flux[f * nfp + j] = vn_minus * nk[i] - star;
        }
    }
    ops.lift_add(k, &flux, -1.0, &mut out);
    out
}

fn element_mean(v: &[f64], k: usize, np: usize) -> f64 {
    v[k * np..(k + 1) * np].iter().sum::<f64>() / np as f64
}

/// Nodal ∇·(d∇n) + ∇·(vn) on element k, with q = ∇n from the alternate
/// flux. Shared by the steady residual and the explicit transient solver.
pub fn transport_element(disc: &Discretization, rules: &[FaceRule], d: &[f64], v: &[Vec<f64>], n: &dyn Fn(usize) -> f64, q: &dyn Fn(usize, usize) -> f64, k: usize) -> Vec<f64> {
    let np = disc.np();
    let w = |node: usize, c: usize| d[node] * q(node, c);
    let mut div = ldg::divflux(disc, rules, k, &w, n, -element_mean(d, k, np));
    let adv = advflux(disc, rules, k, v, n);
    div.iter_mut().zip(&adv).for_each(|(a, b)| *a += b);
    div
}

fn residual(p: &DDProblem, rules: &[Vec<FaceRule>], layout: MixedLayout, k: usize, x: &[f64], hom: bool) -> Vec<f64> {
    let disc = p.disc;
    let np = layout.np;
    let n = |node: usize| x[layout.scalar_at(node)];
    let q = |node: usize, c: usize| x[layout.vector_at(node, c)];
    let grad = ldg::gradflux(disc, &rules[k], k, &n);
    let tr = transport_element(disc, &rules[k], &p.d, &p.v, &n, &q, k);
    let mut r = vec![0.0; layout.block()];
    let mut local = vec![0.0; np];
    for i in 0..np {
        let node = k * np + i;
        local[i] = tr[i] - p.r_a[node] * n(node);
        if !hom {
            local[i] += p.r_b[node];
        }
        if let Some((dt, old)) = &p.pseudo {
            local[i] -= (n(node) - if hom { 0.0 } else { old[node] }) / dt;
        }
    }
    disc.ops.mass_apply(k, &local, &mut r[..np]);
    for c in 0..layout.dim {
        for i in 0..np {
            local[i] = x[layout.vector(k, c, i)] - grad[c][i];
        }
        disc.ops.mass_apply(k, &local, &mut r[(1 + c) * np..(2 + c) * np]);
    }
    r
}

/// Assembled DD system in element-blocked layout.
pub struct DDSystem {
    pub matrix: crate::linalg::BlockSparseMatrix,
    pub rhs: Vec<f64>,
    pub layout: MixedLayout,
}

pub fn assemble_dd(p: &DDProblem) -> Result<DDSystem, DDError> {
    p.validate()?;
    let layout = p.layout();
    let rules = p.rules();
    let hom_rules = ldg::homogeneous(&rules);
    let res = |k: usize, x: &[f64], hom: bool| {
        if hom {
            residual(p, &hom_rules, layout, k, x, true)
        } else {
            residual(p, &rules, layout, k, x, false)
        }
    };
    let (matrix, rhs) = ldg::assemble_by_probing(p.disc, layout.block(), &res);
    Ok(DDSystem { matrix, rhs, layout })
}

/// Solves the DD system; returns nodal n and q components.
pub fn solve_dd(sys: &DDSystem, solver: &mut LinearSolverHandle, guess: Option<&[f64]>) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize), DDError> {
    let mut x = guess.map_or_else(|| vec![0.0; sys.rhs.len()], |g| g.to_vec());
    let out = solver.solve(&sys.matrix, &sys.rhs, &mut x)?;
    let (n, q) = sys.layout.split(&x);
    Ok((n, q, out.iterations))
}

// ----- device and Gummel iteration -----

/// Unit cell or 1D device: Poisson on the whole mesh, carriers on the
/// semiconductor sub-mesh.
pub struct Device {
    pub disc: Discretization,
    pub semi: Discretization,
    /// Parent (Poisson) element of every semiconductor element.
    pub semi_parent: Vec<usize>,
    pub materials: MaterialParams,
    /// Net doping per semiconductor node [cm⁻³].
    pub doping: Vec<f64>,
    pub phi_drop: f64,
    /// Electrode voltages V_el by boundary tag.
    pub electrodes: BTreeMap<BoundaryTag, f64>,
}

impl Device {
    /// Builds a device with uniform doping from the material set. Faces along
    /// each of `periodic` are paired on both meshes.
    pub fn new(mesh: Mesh, order: usize, periodic: &[Axis], materials: MaterialParams, phi_drop: f64, electrodes: BTreeMap<BoundaryTag, f64>) -> Result<Device, DDError> {
        let pairings = periodic
            .iter()
            .map(|&a| crate::mesh::pair_periodic_faces(&mesh, a))
            .collect::<Result<Vec<_>, _>>()
            .map_err(DgError::from)?;
        // the last mesh axis is vertical
        let up = mesh.dim() - 1;
        let (sub, parent) = mesh
            .submesh(|r| r == Region::Semiconductor, |n| if n[up] > 0.0 { BoundaryTag::ZTop } else { BoundaryTag::ZBottom })
            .map_err(|e| DDError::Device(e.to_string()))?;
        let sub_pairings = periodic
            .iter()
            .map(|&a| crate::mesh::pair_periodic_faces(&sub, a))
            .collect::<Result<Vec<_>, _>>()
            .map_err(DgError::from)?;
        let disc = Discretization::new(mesh, order, pairings)?;
        let semi = Discretization::new(sub, order, sub_pairings)?;
        let doping = vec![materials.carriers.doping; semi.n_nodes()];
        materials.validate().map_err(|e| DDError::Device(e.to_string()))?;
        Ok(Device {
            disc,
            semi,
            semi_parent: parent,
            materials,
            doping,
            phi_drop,
            electrodes,
        })
    }

    /// Poisson node of semiconductor node `node`.
    pub fn poisson_node(&self, node: usize) -> usize {
        let np = self.semi.np();
        self.semi_parent[node / np] * np + node % np
    }

    /// Doping at the first node of the first semiconductor face with `tag`.
    fn contact_doping(&self, tag: BoundaryTag) -> Option<f64> {
        for k in 0..self.semi.n_elements() {
            for f in 0..self.semi.nfaces() {
                if self.semi.faces[k][f].kind == FaceKind::Boundary(tag) {
                    return Some(self.doping[self.semi.face_node(k, f, 0)]);
                }
            }
        }
        None
    }

    /// Contact densities and potentials per electrode tag.
    pub fn contacts(&self) -> (BTreeMap<BoundaryTag, (f64, f64)>, BTreeMap<BoundaryTag, f64>) {
        let c = &self.materials.carriers;
        let mut dens = BTreeMap::new();
        let mut pot = BTreeMap::new();
        for (&tag, &vel) in &self.electrodes {
            let doping = self.contact_doping(tag).unwrap_or(c.doping);
            let (ne, nh) = equilibrium_contact_densities(doping, c.n_i);
            dens.insert(tag, (ne, nh));
            pot.insert(tag, contact_potential(vel, ne, c.n_i, c.v_t));
        }
        (dens, pot)
    }

    pub fn eps_static(&self) -> Vec<f64> {
        self.disc.mesh.regions().iter().map(|&r| self.materials.region(r).eps_static).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GummelOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
    pub restart: usize,
    pub linear_max_iter: usize,
    /// Under-relaxation of the potential update (1 = plain fixed point).
    pub damping: f64,
    /// Pseudo-time step [ps] used when the carriers have no contact.
    pub pseudo_dt: f64,
    pub field_dependent_mobility: bool,
    pub reuse_preconditioner: bool,
}

impl Default for GummelOptions {
    fn default() -> Self {
        GummelOptions {
            tol: 1e-5,
            max_iter: 300,
            linear_tol: 1e-10,
            restart: 100,
            linear_max_iter: 5000,
            damping: 1.0,
            pseudo_dt: 1.0,
            field_dependent_mobility: true,
            reuse_preconditioner: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GummelRecord {
    pub iteration: usize,
    pub dphi: f64,
    pub dne: f64,
    pub dnh: f64,
    pub lin_poisson: usize,
    pub lin_electron: usize,
    pub lin_hole: usize,
}

/// Converged steady state, input to the transient stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub order: usize,
    /// φ [V] and E [V/µm] on the whole mesh, nodal.
    pub phi: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    /// Carrier densities [cm⁻³] and mobilities [cm²/V/s] on the
    /// semiconductor mesh, nodal.
    pub n_e: Vec<f64>,
    pub n_h: Vec<f64>,
    pub mu_e: Vec<f64>,
    pub mu_h: Vec<f64>,
    pub phi_drop: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamped: usize,
    pub history: Vec<GummelRecord>,
}

impl SteadyState {
    pub fn write_history_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(w, "iteration,dphi,dne,dnh,lin_poisson,lin_electron,lin_hole")?;
        for r in &self.history {
            writeln!(w, "{},{:e},{:e},{:e},{},{},{}", r.iteration, r.dphi, r.dne, r.dnh, r.lin_poisson, r.lin_electron, r.lin_hole)?;
        }
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// max_i |new_i − old_i| / max(max_i |new_i|, floor).
pub fn relative_update(new: &[f64], old: &[f64], floor: f64) -> f64 {
    let d = new.iter().zip(old).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    d / max_abs(new).max(floor)
}

/// Drift coefficient and diffusion per semiconductor node for a carrier,
/// given E [V/µm] on the Poisson mesh. Returns (v, d, μ).
pub fn carrier_coefficients(dev: &Device, e: &[Vec<f64>], carrier: Carrier, field_dependent: bool) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let c = &dev.materials.carriers;
    let params = match carrier {
        Carrier::Electron => c.electron,
        Carrier::Hole => c.hole,
    };
    let sign = match carrier {
        Carrier::Electron => 1.0,
        Carrier::Hole => -1.0,
    };
    let nn = dev.semi.n_nodes();
    let dim = dev.semi.dim();
    let mut v = vec![vec![0.0; nn]; dim];
    let mut d = vec![0.0; nn];
    let mut mu = vec![0.0; nn];
    for node in 0..nn {
        let pn = dev.poisson_node(node);
        let emag = (0..dim).map(|a| e[a][pn] * e[a][pn]).sum::<f64>().sqrt();
        let m = if field_dependent { params.mobility(emag * V_PER_UM_TO_V_PER_CM) } else { params.mu0 };
        mu[node] = m;
        let m_um = m * CM2_PER_S_TO_UM2_PER_PS;
        d[node] = m_um * c.v_t;
        for a in 0..dim {
            v[a][node] = sign * m_um * e[a][pn];
        }
    }
    (v, d, mu)
}

/// Gummel iteration: linearized Poisson → electron DD → hole DD until the
/// largest relative nodal update drops below `opts.tol`.
pub fn gummel_solve(dev: &Device, opts: &GummelOptions, initial: Option<&SteadyState>) -> Result<SteadyState, DDError> {
    let c = dev.materials.carriers;
    let (dens, pots) = dev.contacts();
    let nn_p = dev.disc.n_nodes();
    let nn_s = dev.semi.n_nodes();
    let k_q = Q_OVER_EPS0_V_UM2_CM3;

    let (mut phi, mut n_e, mut n_h) = match initial {
        Some(s) => (s.phi.clone(), s.n_e.clone(), s.n_h.clone()),
        None => {
            let mut ne = vec![0.0; nn_s];
            let mut nh = vec![0.0; nn_s];
            let mut phi = vec![0.0; nn_p];
            for node in 0..nn_s {
                let (a, b) = equilibrium_contact_densities(dev.doping[node], c.n_i);
                ne[node] = a;
                nh[node] = b;
                phi[dev.poisson_node(node)] = c.v_t * (a / c.n_i).ln();
            }
            (phi, ne, nh)
        }
    };
    let mut e = vec![vec![0.0; nn_p]; dev.disc.dim()];
    let new_handle = || -> Result<LinearSolverHandle, DDError> {
        let mut h = LinearSolverHandle::new(opts.restart, opts.linear_tol, opts.linear_max_iter)?;
        h.reuse = opts.reuse_preconditioner;
        Ok(h)
    };
    let mut hp = new_handle()?;
    let mut he = new_handle()?;
    let mut hh = new_handle()?;
    let dd_dirichlet_e: BTreeMap<BoundaryTag, f64> = dens.iter().map(|(&t, &(a, _))| (t, a)).collect();
    let dd_dirichlet_h: BTreeMap<BoundaryTag, f64> = dens.iter().map(|(&t, &(_, b))| (t, b)).collect();
    let floating = !dd_rules(&dev.semi, &dd_dirichlet_e, 0.0).iter().flatten().any(|r| matches!(r, FaceRule::Dirichlet(_)));
    let eps = dev.eps_static();
    let mut history = Vec::new();
    let mut clamped = 0;
    let mut guess_e: Option<Vec<f64>> = None;
    let mut guess_h: Option<Vec<f64>> = None;
    let mut guess_p: Option<Vec<f64>> = None;
    let mut mu = (vec![c.electron.mu0; nn_s], vec![c.hole.mu0; nn_s]);

    for it in 1..=opts.max_iter {
        // linearized Poisson
        let mut pp = PoissonProblem::new(&dev.disc);
        pp.eps = eps.clone();
        pp.phi_drop = dev.phi_drop;
        pp.dirichlet = pots.clone();
        for node in 0..nn_s {
            let pn = dev.poisson_node(node);
            let g = k_q * (n_e[node] + n_h[node]) / c.v_t;
            pp.g[pn] = g;
            pp.f[pn] = k_q * (n_h[node] - n_e[node] + dev.doping[node]) + g * phi[pn];
        }
        let sys = poisson::assemble(&pp)?;
        let sol = poisson::solve(&sys, &mut hp, guess_p.as_deref())?;
        let lin_p = sol.iterations;
        guess_p = Some(sys.layout.join(&sol.phi, &sol.e));
        let phi_new: Vec<f64> = phi.iter().zip(&sol.phi).map(|(o, n)| o + opts.damping * (n - o)).collect();
        let dphi = relative_update(&phi_new, &phi, c.v_t);
        phi = phi_new;
        e = sol.e;

        // electrons then holes
        let mut lin = [0usize; 2];
        let mut upd = [0.0f64; 2];
        for (idx, carrier) in [Carrier::Electron, Carrier::Hole].into_iter().enumerate() {
            let (v, d, m) = carrier_coefficients(dev, &e, carrier, opts.field_dependent_mobility);
            let mut p = DDProblem::new(&dev.semi);
            p.d = d;
            p.v = v;
            for node in 0..nn_s {
                let (a, b) = recombination_linearized(n_e[node], n_h[node], c.n_i, &c.recombination, carrier == Carrier::Electron);
                p.r_a[node] = a * PER_S_TO_PER_PS;
                p.r_b[node] = b * PER_S_TO_PER_PS;
            }
            let (old, handle, guess) = match carrier {
                Carrier::Electron => {
                    p.dirichlet = dd_dirichlet_e.clone();
                    mu.0 = m;
                    (&mut n_e, &mut he, &mut guess_e)
                }
                Carrier::Hole => {
                    p.dirichlet = dd_dirichlet_h.clone();
                    mu.1 = m;
                    (&mut n_h, &mut hh, &mut guess_h)
                }
            };
            if floating {
                p.pseudo = Some((opts.pseudo_dt, old.clone()));
            }
            let sys = assemble_dd(&p)?;
            let (mut n_new, q, iters) = solve_dd(&sys, handle, guess.as_deref())?;
            *guess = Some(sys.layout.join(&n_new, &q));
            for v in n_new.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped += 1;
                }
            }
            upd[idx] = relative_update(&n_new, old, 1e-300);
            *old = n_new;
            lin[idx] = iters;
        }
        let rec = GummelRecord {
            iteration: it,
            dphi,
            dne: upd[0],
            dnh: upd[1],
            lin_poisson: lin_p,
            lin_electron: lin[0],
            lin_hole: lin[1],
        };
        debug!("gummel {it}: dphi {:e} dne {:e} dnh {:e}", rec.dphi, rec.dne, rec.dnh);
        history.push(rec);
        let worst = dphi.max(upd[0]).max(upd[1]);
        let state = || SteadyState {
            order: dev.disc.ops.refel.order,
            phi: phi.clone(),
            e: e.clone(),
            n_e: n_e.clone(),
            n_h: n_h.clone(),
            mu_e: mu.0.clone(),
            mu_h: mu.1.clone(),
            phi_drop: dev.phi_drop,
            iterations: it,
            converged: worst < opts.tol,
            clamped,
            history: history.clone(),
        };
        if worst < opts.tol {
            info!("Gummel converged in {it} iterations");
            if clamped > 0 {
                warn!("{clamped} negative density values clamped to zero");
            }
            return Ok(state());
        }
        if it == opts.max_iter {
            return Err(DDError::NotConverged {
                iterations: it,
                update: worst,
                state: Box::new(state()),
            });
        }
    }
    Err(DDError::Device("max_iter must be at least 1".into()))
}

/// Integral of n̂·(d∇n + vn) over all unconnected faces of the carrier mesh,
/// using the face flux actually seen by the scheme.
pub fn boundary_current(disc: &Discretization, rules: &[Vec<FaceRule>], d: &[f64], v: &[Vec<f64>], n: &[f64], q: &[Vec<f64>]) -> f64 {
    let np = disc.np();
    let nfp = disc.nfp();
    let mut total = 0.0;
    for k in 0..disc.n_elements() {
        let dk = element_mean(d, k, np);
        for f in 0..disc.nfaces() {
            let rule = rules[k][f];
            if matches!(rule, FaceRule::Connected { .. }) {
                continue;
            }
            let nrm = disc.ops.geom[k].normals[f];
            let sj = disc.ops.geom[k].sj[f];
            // face mass row sums give the quadrature weights of the face nodes
            let w1d = face_weights(disc);
            for j in 0..nfp {
                let node = disc.face_node(k, f, j);
                let flux = match rule {
                    FaceRule::Flux(g) => g,
                    FaceRule::Dirichlet(nd) => {
                        let vm = [v[0][node], if disc.dim() > 1 { v[1][node] } else { 0.0 }];
                        let qn: f64 = (0..disc.dim()).map(|c| nrm[c] * q[c][node]).sum();
                        d[node] * qn - dk * disc.ops.geom[k].fscale[f] * (n[node] - nd) + lax_friedrichs_flux(n[node], nd, vm, vm, nrm)
                    }
                    FaceRule::Connected { .. } => unreachable!(),
                };
                total += sj * w1d[j] * flux;
            }
        }
    }
    total
}

/// Quadrature weights of face nodes on the reference face [-1, 1].
fn face_weights(disc: &Discretization) -> Vec<f64> {
    if disc.dim() == 1 {
        return vec![1.0];
    }
    let p = disc.ops.refel.order;
    let r = crate::dgcore::jacobi_gl(0.0, 0.0, p);
    let v = crate::dgcore::vandermonde(1, p, &r.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>());
    let m = (&v * v.transpose()).try_inverse().unwrap();
    (0..r.len()).map(|j| m.column(j).sum()).collect()
}
