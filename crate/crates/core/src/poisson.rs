//! Mixed-form DG Poisson solver: ∇·(εE) + gφ = f, E = −∇φ, with alternate
//! fluxes, the potential-drop condition across the x faces of the unit
//! cell, periodic y faces, Neumann and Dirichlet boundaries.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dgcore::ldg::{self, FaceRule, MixedLayout};
use crate::dgcore::{matvec, Discretization, FaceKind, Field};
use crate::linalg::{BlockSparseMatrix, LinalgError, LinearSolverHandle};
use crate::mesh::BoundaryTag;

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error("permittivity of element {0} is not positive")]
    Permittivity(usize),
    #[error("coefficient arrays have length {0}, expected {1}")]
    Shape(usize, usize),
    #[error("non-finite potential drop")]
    Drop,
    #[error("linear solve failed: {0}")]
    Solver(#[from] LinalgError),
}

/// Alternate flux with β̂ = beta_sign·n̂: u* = {u} + ½β̂·n̂[[u]],
/// w* = {w} − ½β̂(n̂·[[w]]).
pub fn alternate_flux(u_minus: f64, u_plus: f64, w_minus: [f64; 2], w_plus: [f64; 2], normal: [f64; 2], beta_sign: f64) -> (f64, [f64; 2]) {
    let u_star = 0.5 * (u_minus + u_plus) + 0.5 * beta_sign * (u_minus - u_plus);
    let nj = normal[0] * (w_minus[0] - w_plus[0]) + normal[1] * (w_minus[1] - w_plus[1]);
    let w_star = [
        0.5 * (w_minus[0] + w_plus[0]) - 0.5 * beta_sign * normal[0] * nj,
        0.5 * (w_minus[1] + w_plus[1]) - 0.5 * beta_sign * normal[1] * nj,
    ];
    (u_star, w_star)
}

/// φ_drop = w_x·V_bias / w_sd.
pub fn phi_drop(w_x: f64, v_bias: f64, w_sd: f64) -> f64 {
    w_x * v_bias / w_sd
}

pub struct PoissonProblem<'a> {
    pub disc: &'a Discretization,
    /// Relative permittivity per element.
    pub eps: Vec<f64>,
    /// Reaction coefficient g per node [1/µm²].
    pub g: Vec<f64>,
    /// Source f per node [V/µm²].
    pub f: Vec<f64>,
    /// Potential drop across the unit cell in x [V].
    pub phi_drop: f64,
    /// Optional position-dependent drop, evaluated at face centroids of the
    /// x faces; overrides `phi_drop` when present.
    pub phi_drop_profile: Option<Box<dyn Fn([f64; 2]) -> f64 + Sync + 'a>>,
    /// Normal flux n̂·(εE) on unconnected, non-Dirichlet faces.
    pub neumann: f64,
    /// Electrode potentials by boundary tag.
    pub dirichlet: BTreeMap<BoundaryTag, f64>,
    /// Node whose potential is fixed (for g ≡ 0 problems without Dirichlet data).
    pub pin: Option<(usize, f64)>,
}

impl<'a> PoissonProblem<'a> {
    pub fn new(disc: &'a Discretization) -> PoissonProblem<'a> {
        let nn = disc.n_nodes();
        PoissonProblem {
            disc,
            eps: vec![1.0; disc.n_elements()],
            g: vec![0.0; nn],
            f: vec![0.0; nn],
            phi_drop: 0.0,
            phi_drop_profile: None,
            neumann: 0.0,
            dirichlet: BTreeMap::new(),
            pin: None,
        }
    }

    pub fn validate(&self) -> Result<(), PoissonError> {
        let nn = self.disc.n_nodes();
        if self.g.len() != nn {
            return Err(PoissonError::Shape(self.g.len(), nn));
        }
        if self.f.len() != nn {
            return Err(PoissonError::Shape(self.f.len(), nn));
        }
        if self.eps.len() != self.disc.n_elements() {
            return Err(PoissonError::Shape(self.eps.len(), self.disc.n_elements()));
        }
        if let Some(k) = self.eps.iter().position(|&e| !(e > 0.0)) {
            return Err(PoissonError::Permittivity(k));
        }
        if !self.phi_drop.is_finite() {
            return Err(PoissonError::Drop);
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
        let disc = self.disc;
        (0..disc.n_elements())
            .map(|k| {
                disc.faces[k]
                    .iter()
                    .enumerate()
                    .map(|(f, c)| match c.kind {
                        FaceKind::Interior => FaceRule::Connected { offset: 0.0 },
                        FaceKind::Periodic { .. } => {
                            let drop = match &self.phi_drop_profile {
                                Some(p) => p(disc.mesh.face_centroid(k, f)),
                                None => self.phi_drop,
                            };
                            FaceRule::Connected {
                                offset: ldg::drop_offset(c.kind, drop),
                            }
                        }
                        FaceKind::Boundary(tag) => match self.dirichlet.get(&tag) {
                            Some(&v) => FaceRule::Dirichlet(v),
                            None => FaceRule::Flux(self.neumann),
                        },
                    })
                    .collect()
            })
            .collect()
    }
}

/// Assembled block system. Unknowns are element-blocked; see
/// [`PoissonSystem::to_global_order`] for the Φ̄-then-Ē ordering.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    pub matrix: BlockSparseMatrix,
    pub rhs: Vec<f64>,
    pub layout: MixedLayout,
    pub n_elements: usize,
}

impl PoissonSystem {
    /// Dense matrix and right-hand side in the (Φ̄, Ē) ordering.
    pub fn to_global_order(&self) -> (DMatrix<f64>, Vec<f64>) {
        let perm = self.layout.global_order(self.n_elements);
        let a = self.matrix.to_dense();
        let n = a.nrows();
        let mut g = DMatrix::zeros(n, n);
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[perm[i]] = self.rhs[i];
            for j in 0..n {
                g[(perm[i], perm[j])] = a[(i, j)];
            }
        }
        (g, b)
    }
}

/// Mass-weighted element residual of the Poisson system at state `x`;
/// `hom` drops the source (the rules passed in must match).
fn residual(p: &PoissonProblem, rules: &[Vec<FaceRule>], layout: MixedLayout, k: usize, x: &[f64], hom: bool) -> Vec<f64> {
    let disc = p.disc;
    let np = layout.np;
    let dim = layout.dim;
    let phi = |n: usize| x[layout.scalar_at(n)];
    let eps_e = |n: usize, c: usize| p.eps[n / np] * x[layout.vector_at(n, c)];
    let grad = ldg::gradflux(disc, &rules[k], k, &phi);
    // w = εE = −ε∇φ, so the Dirichlet penalty enters with +ε
    let div = ldg::divflux(disc, &rules[k], k, &eps_e, &phi, p.eps[k]);
    let mut r = vec![0.0; layout.block()];
    let mut local = vec![0.0; np];
    for i in 0..np {
        let node = k * np + i;
        local[i] = div[i] + p.g[node] * phi(node) - if hom { 0.0 } else { p.f[node] };
    }
    disc.ops.mass_apply(k, &local, &mut r[..np]);
    for c in 0..dim {
        for i in 0..np {
            local[i] = x[layout.vector(k, c, i)] + grad[c][i];
        }
        disc.ops.mass_apply(k, &local, &mut r[(1 + c) * np..(2 + c) * np]);
    }
    r
}

pub fn assemble(p: &PoissonProblem) -> Result<PoissonSystem, PoissonError> {
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
    let (mut matrix, mut rhs) = ldg::assemble_by_probing(p.disc, layout.block(), &res);
    if let Some((node, v)) = p.pin {
        let row = layout.scalar_at(node);
        matrix.set_identity_row(row);
        rhs[row] = v;
    }
    Ok(PoissonSystem {
        matrix,
        rhs,
        layout,
        n_elements: p.disc.n_elements(),
    })
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// φ per node [V].
    pub phi: Vec<f64>,
    /// E components per node [V/µm].
    pub e: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

impl PoissonSolution {
    pub fn phi_field(&self, np: usize) -> Field {
        Field::from_components("phi", "V", np, &[&self.phi])
    }

    pub fn e_field(&self, np: usize) -> Field {
        let comps: Vec<&[f64]> = self.e.iter().map(|c| c.as_slice()).collect();
        Field::from_components("E", "V/um", np, &comps)
    }
}

/// Solves the assembled system; `guess` is an element-blocked initial state.
pub fn solve(sys: &PoissonSystem, solver: &mut LinearSolverHandle, guess: Option<&[f64]>) -> Result<PoissonSolution, PoissonError> {
    let mut x = guess.map_or_else(|| vec![0.0; sys.rhs.len()], |g| g.to_vec());
    let out = solver.solve(&sys.matrix, &sys.rhs, &mut x)?;
    let (phi, e) = sys.layout.split(&x);
    Ok(PoissonSolution {
        phi,
        e,
        iterations: out.iterations,
        residual: out.residual,
    })
}

/// Assemble and solve in one call.
pub fn solve_problem(p: &PoissonProblem, solver: &mut LinearSolverHandle) -> Result<PoissonSolution, PoissonError> {
    let sys = assemble(p)?;
    solve(&sys, solver, None)
}

/// L² norm of a nodal error field, ‖e‖ = √(eᵀMe).
pub fn l2_norm(disc: &Discretization, e: &[f64]) -> f64 {
    let np = disc.np();
    let mut me = vec![0.0; np];
    let mut s = 0.0;
    for k in 0..disc.n_elements() {
        let ek = &e[k * np..(k + 1) * np];
        matvec(&disc.ops.refel.mass, ek, &mut me);
        s += disc.ops.geom[k].jac * ek.iter().zip(&me).map(|(a, b)| a * b).sum::<f64>();
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured, pair_periodic_faces, Axis, Layer, Region, StructuredSpec};

    fn solver() -> LinearSolverHandle {
        LinearSolverHandle::new(100, 1e-12, 5000).unwrap()
    }

    #[test]
    fn alternate_flux_examples() {
        let n = [1.0, 0.0];
        let (u, _) = alternate_flux(2.0, 4.0, [0.0; 2], [0.0; 2], n, 1.0);
        assert_eq!(u, 2.0);
        let (_, w) = alternate_flux(0.0, 0.0, [1.0, 0.0], [5.0, 0.0], n, 1.0);
        assert_eq!(w[0] * n[0] + w[1] * n[1], 5.0);
        let (u, w) = alternate_flux(1.5, 1.5, [0.3, -0.2], [0.3, -0.2], [0.6, 0.8], -1.0);
        assert_eq!(u, 1.5);
        assert!((w[0] - 0.3).abs() < 1e-15 && (w[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn drop_estimate() {
        assert!((phi_drop(0.18, 10.0, 2.7) - 0.666_666_666_7).abs() < 1e-9);
    }

    #[test]
    fn linear_drop_1d() {
        let w = 0.18;
        let m = build_structured(&StructuredSpec::interval(-w / 2.0, w / 2.0, 0.03)).unwrap();
        let px = pair_periodic_faces(&m, Axis::X).unwrap();
        let disc = Discretization::new(m, 2, vec![px]).unwrap();
        let mut p = PoissonProblem::new(&disc);
        p.phi_drop = 0.75;
        p.pin = Some((0, 0.0));
        let sol = solve_problem(&p, &mut solver()).unwrap();
        for n in 0..disc.n_nodes() {
            assert!((sol.e[0][n] - 0.75 / w).abs() < 1e-8 * 0.75 / w, "{n} {:?} {:?}", sol.e[0], sol.phi);
            let x = disc.ops.coords[n][0];
            let x0 = disc.ops.coords[0][0];
            assert!((sol.phi[n] + 0.75 / w * (x - x0)).abs() < 1e-9, "{n} {x} {}", sol.phi[n]);
        }
    }

    #[test]
    fn neumann_periodic_zero_source() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 1.0, 0.0, 1.0, 0.25)).unwrap();
        let px = pair_periodic_faces(&m, Axis::X).unwrap();
        let disc = Discretization::new(m, 2, vec![px]).unwrap();
        let mut p = PoissonProblem::new(&disc);
        p.g = vec![1.0; disc.n_nodes()];
        let sol = solve_problem(&p, &mut solver()).unwrap();
        assert!(sol.phi.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn two_layer_flux_continuity() {
        // layers along x in 1D: eps 1 on [0, 0.5), eps 13.26 on [0.5, 1]
        let spec = StructuredSpec::interval(0.0, 1.0, 0.1).with_layers(vec![
            Layer { thickness: 0.5, region: Region::Vacuum, h: 0.1 },
            Layer { thickness: 0.5, region: Region::Dielectric, h: 0.1 },
        ]);
        let m = build_structured(&spec).unwrap();
        let px = pair_periodic_faces(&m, Axis::X).unwrap();
        let eps: Vec<f64> = m.regions().iter().map(|r| if *r == Region::Vacuum { 1.0 } else { 13.26 }).collect();
        let disc = Discretization::new(m, 3, vec![px]).unwrap();
        let mut p = PoissonProblem::new(&disc);
        p.eps = eps.clone();
        p.phi_drop = 1.0;
        p.pin = Some((0, 0.0));
        let sol = solve_problem(&p, &mut solver()).unwrap();
        // series resistors: eps1 E1 = eps2 E2, 0.5 E1 + 0.5 E2 = 1
        let e1 = 1.0 / (0.5 + 0.5 / 13.26);
        let e2 = e1 / 13.26;
        let np = disc.np();
        for k in 0..disc.n_elements() {
            let expect = if eps[k] == 1.0 { e1 } else { e2 };
            for i in 0..np {
                assert!((sol.e[0][k * np + i] - expect).abs() < 1e-9 * e1);
            }
        }
    }
}
