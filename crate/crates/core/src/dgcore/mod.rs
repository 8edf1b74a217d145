//! Reference elements, per-element geometric factors, face connectivity, and
//! the elemental mass / differentiation / lift operators shared by all
//! solvers.

pub mod ldg;
mod refelem;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::mesh::{Axis, BoundaryTag, FacePairing, FaceRef, Mesh, MeshError};

pub use refelem::{jacobi_gl, jacobi_p, reference_element, vandermonde, RefElement};

#[derive(Debug, Error)]
pub enum DgError {
    #[error("unsupported polynomial order {0} (expected 1..=6)")]
    UnsupportedOrder(usize),
    #[error("unsupported dimension {0}")]
    UnsupportedDim(usize),
    #[error("element {elem} is inverted (Jacobian {jac:e})")]
    InvertedElement { elem: usize, jac: f64 },
    #[error("trace shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("face nodes of ({elem}, {face}) do not match their neighbor")]
    NodeMatch { elem: usize, face: usize },
    #[error("reference element dimension {0} differs from mesh dimension {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// y = m x for a dense column-major matrix.
pub fn matvec(m: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), y.len());
    y.iter_mut().for_each(|v| *v = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = m.column(j);
        for (yi, &mij) in y.iter_mut().zip(col.iter()) {
            *yi += mij * xj;
        }
    }
}

/// y += a · m x.
pub fn matvec_add(m: &DMatrix<f64>, x: &[f64], a: f64, y: &mut [f64]) {
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let s = a * xj;
        let col = m.column(j);
        for (yi, &mij) in y.iter_mut().zip(col.iter()) {
            *yi += mij * s;
        }
    }
}

/// Affine geometric factors of one element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Volume Jacobian (physical / reference measure).
    pub jac: f64,
    /// `drdx[a][b]` = ∂r_a/∂x_b.
    pub drdx: [[f64; 2]; 2],
    /// Outward unit normal per face.
    pub normals: Vec<[f64; 2]>,
    /// Surface Jacobian per face.
    pub sj: Vec<f64>,
    /// sJ / J per face, the lift scaling.
    pub fscale: Vec<f64>,
}

/// Per-element physical operators built from a reference element.
#[derive(Debug, Clone)]
pub struct Operators {
    pub refel: RefElement,
    pub geom: Vec<ElementGeometry>,
    /// Physical coordinates of every node, indexed `k * np + i`.
    pub coords: Vec<[f64; 2]>,
}

pub fn build_operators(mesh: &Mesh, refel: &RefElement) -> Result<Operators, DgError> {
    if mesh.dim() != refel.dim {
        return Err(DgError::DimMismatch(refel.dim, mesh.dim()));
    }
    let np = refel.np;
    let mut geom = Vec::with_capacity(mesh.n_elements());
    let mut coords = Vec::with_capacity(mesh.n_elements() * np);
    for k in 0..mesh.n_elements() {
        let el = mesh.element(k);
        match mesh.dim() {
            1 => {
                let x0 = mesh.vertex(el[0])[0];
                let x1 = mesh.vertex(el[1])[0];
                let jac = 0.5 * (x1 - x0);
                if jac <= 0.0 {
                    return Err(DgError::InvertedElement { elem: k, jac });
                }
                for n in &refel.nodes {
                    coords.push([x0 + 0.5 * (1.0 + n[0]) * (x1 - x0), 0.0]);
                }
                geom.push(ElementGeometry {
                    jac,
                    drdx: [[1.0 / jac, 0.0], [0.0, 0.0]],
                    normals: vec![[-1.0, 0.0], [1.0, 0.0]],
                    sj: vec![1.0, 1.0],
                    fscale: vec![1.0 / jac, 1.0 / jac],
                });
            }
            _ => {
                let [x0, y0] = mesh.vertex(el[0]);
                let [x1, y1] = mesh.vertex(el[1]);
                let [x2, y2] = mesh.vertex(el[2]);
                let (xr, yr) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
                let (xs, ys) = (0.5 * (x2 - x0), 0.5 * (y2 - y0));
                let jac = xr * ys - xs * yr;
                if jac <= 0.0 {
                    return Err(DgError::InvertedElement { elem: k, jac });
                }
                for n in &refel.nodes {
                    let (r, s) = (n[0], n[1]);
                    coords.push([
                        -0.5 * (r + s) * x0 + 0.5 * (1.0 + r) * x1 + 0.5 * (1.0 + s) * x2,
                        -0.5 * (r + s) * y0 + 0.5 * (1.0 + r) * y1 + 0.5 * (1.0 + s) * y2,
                    ]);
                }
                let raw = [[yr, -xr], [ys - yr, -xs + xr], [-ys, xs]];
                let mut normals = Vec::with_capacity(3);
                let mut sj = Vec::with_capacity(3);
                for n in raw {
                    let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
                    normals.push([n[0] / len, n[1] / len]);
                    sj.push(len);
                }
                let fscale = sj.iter().map(|s| s / jac).collect();
                geom.push(ElementGeometry {
                    jac,
                    drdx: [[ys / jac, -xs / jac], [-yr / jac, xr / jac]],
                    normals,
                    sj,
                    fscale,
                });
            }
        }
    }
    Ok(Operators {
        refel: refel.clone(),
        geom,
        coords,
    })
}

impl Operators {
    pub fn np(&self) -> usize {
        self.refel.np
    }

    pub fn n_elements(&self) -> usize {
        self.geom.len()
    }

    pub fn dim(&self) -> usize {
        self.refel.dim
    }

    /// Element mass matrix M̄_kk.
    pub fn mass(&self, k: usize) -> DMatrix<f64> {
        &self.refel.mass * self.geom[k].jac
    }

    /// out = M̄_kk u.
    pub fn mass_apply(&self, k: usize, u: &[f64], out: &mut [f64]) {
        matvec(&self.refel.mass, u, out);
        let j = self.geom[k].jac;
        out.iter_mut().for_each(|v| *v *= j);
    }

    /// Physical differentiation matrix D̄_k along mesh axis `axis`.
    pub fn deriv_matrix(&self, k: usize, axis: usize) -> DMatrix<f64> {
        let g = &self.geom[k];
        let mut d = &self.refel.diff[0] * g.drdx[0][axis];
        for a in 1..self.dim() {
            d += &self.refel.diff[a] * g.drdx[a][axis];
        }
        d
    }

    /// out = D̄_k^axis u (physical derivative of nodal values).
    pub fn deriv(&self, k: usize, axis: usize, u: &[f64], out: &mut [f64]) {
        let g = &self.geom[k];
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..self.dim() {
            let c = g.drdx[a][axis];
            if c != 0.0 {
                matvec_add(&self.refel.diff[a], u, c, out);
            }
        }
    }

    /// out += scale · F̄_k (fscale ∘ flux), with `flux` stacked face by face.
    pub fn lift_add(&self, k: usize, flux: &[f64], scale: f64, out: &mut [f64]) {
        let g = &self.geom[k];
        let nfp = self.refel.nfp;
        let mut scaled = flux.to_vec();
        for (f, chunk) in scaled.chunks_mut(nfp).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= g.fscale[f]);
        }
        matvec_add(&self.refel.lift, &scaled, scale, out);
    }

    /// ∫ u dV over the whole mesh, for nodal values indexed `k * np + i`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        let np = self.np();
        let w: Vec<f64> = (0..np).map(|j| self.refel.mass.column(j).sum()).collect();
        let mut total = 0.0;
        for (k, g) in self.geom.iter().enumerate() {
            let s: f64 = (0..np).map(|i| w[i] * u[k * np + i]).sum();
            total += g.jac * s;
        }
        total
    }

    /// ∫ u dV over a subset of elements.
    pub fn integrate_elements(&self, u: &[f64], elems: impl Iterator<Item = usize>) -> f64 {
        let np = self.np();
        let w: Vec<f64> = (0..np).map(|j| self.refel.mass.column(j).sum()).collect();
        elems
            .map(|k| self.geom[k].jac * (0..np).map(|i| w[i] * u[k * np + i]).sum::<f64>())
            .sum()
    }

    /// Nodal interpolant of `f` at every node.
    pub fn project(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.coords.iter().map(|&x| f(x)).collect()
    }
}

/// Average and jump of two traces: {u} = ½(u⁻+u⁺), [[u]] = u⁻ − u⁺.
pub fn average_jump(u_minus: &[f64], u_plus: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DgError> {
    if u_minus.len() != u_plus.len() {
        return Err(DgError::ShapeMismatch(u_minus.len(), u_plus.len()));
    }
    Ok(u_minus
        .iter()
        .zip(u_plus)
        .map(|(a, b)| (0.5 * (a + b), a - b))
        .unzip())
}

// ----- face connectivity -----

/// Global direction β̂ orienting the one-sided fluxes. Chosen off every
/// mesh-aligned and diagonal direction so no structured face is tangent to it.
pub const FLUX_DIRECTION: [f64; 2] = [1.0, std::f64::consts::FRAC_1_PI];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceKind {
    Interior,
    /// Connected to the opposite unit-cell surface; `at_max` says which
    /// surface this face lies on.
    Periodic { axis: Axis, at_max: bool },
    Boundary(BoundaryTag),
}

#[derive(Debug, Clone)]
pub struct FaceConn {
    pub kind: FaceKind,
    pub neighbor: Option<(usize, usize)>,
    /// Global node index (neighbor element) matching each of this face's nodes.
    pub nb_nodes: Vec<usize>,
    /// The owner of a shared face is the side whose outward normal points
    /// along [`FLUX_DIRECTION`].
    pub owner: bool,
}

/// Mesh, reference element, operators and face connectivity bundled
/// together. Immutable once built.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub ops: Operators,
    pub faces: Vec<Vec<FaceConn>>,
    pub pairings: Vec<FacePairing>,
}

impl Discretization {
    /// Builds operators and connectivity. Boundary faces covered by one of
    /// `pairings` become periodic connections.
    pub fn new(mesh: Mesh, order: usize, pairings: Vec<FacePairing>) -> Result<Discretization, DgError> {
        let refel = reference_element(mesh.dim(), order)?;
        let ops = build_operators(&mesh, &refel)?;
        let np = refel.np;
        let nfp = refel.nfp;
        let mut faces = Vec::with_capacity(mesh.n_elements());
        for k in 0..mesh.n_elements() {
            let mut row = Vec::with_capacity(refel.nfaces);
            for f in 0..refel.nfaces {
                let (kind, neighbor, shift) = match mesh.face(k, f) {
                    FaceRef::Interior { elem, face, .. } => (FaceKind::Interior, Some((*elem, *face)), [0.0; 2]),
                    FaceRef::Boundary(tag) => {
                        let mut hit = None;
                        for p in &pairings {
                            if let Some((nb, _)) = p.partner(k, f) {
                                let at_max = p.pairs.iter().any(|q| q.max == (k, f));
                                let mut shift = [0.0; 2];
                                shift[p.axis.index()] = if at_max { -p.width } else { p.width };
                                hit = Some((FaceKind::Periodic { axis: p.axis, at_max }, Some(nb), shift));
                                break;
                            }
                        }
                        hit.unwrap_or((FaceKind::Boundary(*tag), None, [0.0; 2]))
                    }
                };
                let nb_nodes = match neighbor {
                    Some((k2, f2)) => {
                        let h = mesh.max_edge().max(1e-300);
                        let tol = 1e-8 * h;
                        let mut nodes = Vec::with_capacity(nfp);
                        for &i in &refel.face_nodes[f] {
                            let p = ops.coords[k * np + i];
                            let target = [p[0] + shift[0], p[1] + shift[1]];
                            let j = refel.face_nodes[f2].iter().copied().find(|&j| {
                                let q = ops.coords[k2 * np + j];
                                (q[0] - target[0]).abs() <= tol && (q[1] - target[1]).abs() <= tol
                            });
                            match j {
                                Some(j) => nodes.push(k2 * np + j),
                                None => return Err(DgError::NodeMatch { elem: k, face: f }),
                            }
                        }
                        nodes
                    }
                    None => Vec::new(),
                };
                let owner = match neighbor {
                    Some(nb) => {
                        let n = ops.geom[k].normals[f];
                        let s = n[0] * FLUX_DIRECTION[0] + n[1] * FLUX_DIRECTION[1];
                        if s.abs() > 1e-9 {
                            s > 0.0
                        } else {
                            (k, f) < nb
                        }
                    }
                    None => true,
                };
                row.push(FaceConn {
                    kind,
                    neighbor,
                    nb_nodes,
                    owner,
                });
            }
            faces.push(row);
        }
        Ok(Discretization {
            mesh,
            ops,
            faces,
            pairings,
        })
    }

    pub fn np(&self) -> usize {
        self.ops.refel.np
    }

    pub fn nfp(&self) -> usize {
        self.ops.refel.nfp
    }

    pub fn nfaces(&self) -> usize {
        self.ops.refel.nfaces
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    /// Total nodal degrees of freedom of one scalar field.
    pub fn n_nodes(&self) -> usize {
        self.n_elements() * self.np()
    }

    /// Global index of the `i`-th node of face `f` of element `k`.
    pub fn face_node(&self, k: usize, f: usize, i: usize) -> usize {
        k * self.np() + self.ops.refel.face_nodes[f][i]
    }

    /// Elements sharing a face (interior or periodic) with `k`, excluding `k`.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.faces[k]
            .iter()
            .filter_map(|c| c.neighbor.map(|(e, _)| e))
            .filter(|&e| e != k)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

// ----- fields -----

/// Named nodal field. Storage order is (element, node, component).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Field {
    pub name: String,
    pub units: String,
    pub n_elements: usize,
    pub np: usize,
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(name: &str, units: &str, n_elements: usize, np: usize, ncomp: usize) -> Field {
        Field {
            name: name.into(),
            units: units.into(),
            n_elements,
            np,
            ncomp,
            data: vec![0.0; n_elements * np * ncomp],
        }
    }

    /// Builds a field from per-component nodal arrays (each indexed `k * np + i`).
    pub fn from_components(name: &str, units: &str, np: usize, comps: &[&[f64]]) -> Field {
        let ncomp = comps.len();
        let nn = comps[0].len();
        let mut data = vec![0.0; nn * ncomp];
        for (c, comp) in comps.iter().enumerate() {
            assert_eq!(comp.len(), nn);
            for (n, &v) in comp.iter().enumerate() {
                data[n * ncomp + c] = v;
            }
        }
        Field {
            name: name.into(),
            units: units.into(),
            n_elements: nn / np,
            np,
            ncomp,
            data,
        }
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.ncomp).copied().collect()
    }

    pub fn get(&self, k: usize, i: usize, c: usize) -> f64 {
        self.data[(k * self.np + i) * self.ncomp + c]
    }

    pub fn set(&mut self, k: usize, i: usize, c: usize, v: f64) {
        self.data[(k * self.np + i) * self.ncomp + c] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_elements, self.np, self.ncomp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured, pair_periodic_faces, StructuredSpec};

    #[test]
    fn average_jump_examples() {
        let (a, j) = average_jump(&[2.0], &[4.0]).unwrap();
        assert_eq!((a[0], j[0]), (3.0, -2.0));
        let (a, j) = average_jump(&[1.5], &[1.5]).unwrap();
        assert_eq!((a[0], j[0]), (1.5, 0.0));
        let (a, j) = average_jump(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        assert_eq!(j, vec![1.0, -1.0]);
        assert!(matches!(average_jump(&[1.0], &[1.0, 2.0]), Err(DgError::ShapeMismatch(1, 2))));
    }

    #[test]
    fn reference_triangle_identity_map() {
        let mut tags = std::collections::HashMap::new();
        for f in 0..3 {
            tags.insert((0, f), BoundaryTag::ZTop);
        }
        let mesh = Mesh::from_parts(
            2,
            vec![[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]],
            vec![vec![0, 1, 2]],
            vec![crate::mesh::Region::Vacuum],
            &tags,
        )
        .unwrap();
        let re = reference_element(2, 3).unwrap();
        let ops = build_operators(&mesh, &re).unwrap();
        assert!((ops.geom[0].jac - 1.0).abs() < 1e-15);
        for axis in 0..2 {
            let d = ops.deriv_matrix(0, axis);
            assert!((d - &re.diff[axis]).abs().max() < 1e-13);
        }
        assert!((ops.mass(0) - &re.mass).abs().max() < 1e-14);
    }

    #[test]
    fn scaling_law() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 1.0, 0.0, 1.0, 0.5)).unwrap();
        let s = 3.0;
        let ms = m.scaled(s);
        let re = reference_element(2, 2).unwrap();
        let a = build_operators(&m, &re).unwrap();
        let b = build_operators(&ms, &re).unwrap();
        for k in 0..m.n_elements() {
            assert!((a.mass(k) * (s * s) - b.mass(k)).abs().max() < 1e-12);
            for axis in 0..2 {
                assert!((a.deriv_matrix(k, axis) / s - b.deriv_matrix(k, axis)).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_field_derivatives_exact() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 1.3, -0.2, 0.9, 0.3)).unwrap();
        let re = reference_element(2, 3).unwrap();
        let ops = build_operators(&m, &re).unwrap();
        let np = re.np;
        let u = ops.project(|p| 2.5 * p[0] - 0.75 * p[1]);
        let mut d = vec![0.0; np];
        for k in 0..m.n_elements() {
            ops.deriv(k, 0, &u[k * np..(k + 1) * np], &mut d);
            assert!(d.iter().all(|v| (v - 2.5).abs() < 1e-10));
            ops.deriv(k, 1, &u[k * np..(k + 1) * np], &mut d);
            assert!(d.iter().all(|v| (v + 0.75).abs() < 1e-10));
        }
    }

    #[test]
    fn mass_sums_to_volume() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 0.18, 0.0, 0.62, 0.05)).unwrap();
        let re = reference_element(2, 4).unwrap();
        let ops = build_operators(&m, &re).unwrap();
        let ones = vec![1.0; m.n_elements() * re.np];
        let vol = ops.integrate(&ones);
        assert!((vol - 0.18 * 0.62).abs() < 1e-12 * 0.18 * 0.62);
        for k in 0..m.n_elements() {
            let mk = ops.mass(k);
            assert!((&mk - mk.transpose()).abs().max() < 1e-15);
            assert!(mk.cholesky().is_some());
        }
    }

    #[test]
    fn integration_by_parts_identity() {
        // vᵀ M D u + uᵀ M D v = Σ_faces ∫ u v n  (boundary term via the lift)
        let m = build_structured(&StructuredSpec::rectangle(0.1, 0.7, 0.0, 0.5, 0.5)).unwrap();
        let re = reference_element(2, 3).unwrap();
        let ops = build_operators(&m, &re).unwrap();
        let np = re.np;
        let k = 1;
        let x = &ops.coords[k * np..(k + 1) * np];
        let u: Vec<f64> = x.iter().map(|p| p[0] * p[0] * p[1] + 0.3 * p[1] * p[1] * p[1]).collect();
        let v: Vec<f64> = x.iter().map(|p| 1.0 + p[0] - 2.0 * p[1] * p[0]).collect();
        let mk = ops.mass(k);
        for axis in 0..2 {
            let md = &mk * ops.deriv_matrix(k, axis);
            let lhs: f64 = {
                let du = &md * nalgebra::DVector::from_column_slice(&u);
                let dv = &md * nalgebra::DVector::from_column_slice(&v);
                (0..np).map(|i| v[i] * du[i] + u[i] * dv[i]).sum()
            };
            // boundary term: 1ᵀ M F̄ (n_axis u v) over faces
            let nfp = re.nfp;
            let mut flux = vec![0.0; 3 * nfp];
            for f in 0..3 {
                for (j, &i) in re.face_nodes[f].iter().enumerate() {
                    flux[f * nfp + j] = ops.geom[k].normals[f][axis] * u[i] * v[i];
                }
            }
            let mut lifted = vec![0.0; np];
            ops.lift_add(k, &flux, 1.0, &mut lifted);
            let mut ml = vec![0.0; np];
            matvec(&mk, &lifted, &mut ml);
            let rhs: f64 = ml.iter().sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn connectivity_periodic_nodes() {
        let m = build_structured(&StructuredSpec::rectangle(0.0, 1.0, 0.0, 1.0, 0.5)).unwrap();
        let px = pair_periodic_faces(&m, Axis::X).unwrap();
        let py = pair_periodic_faces(&m, Axis::Y).unwrap();
        let d = Discretization::new(m, 2, vec![px, py]).unwrap();
        let np = d.np();
        for k in 0..d.n_elements() {
            for f in 0..3 {
                let c = &d.faces[k][f];
                assert!(c.neighbor.is_some(), "fully periodic mesh has no boundary faces");
                let (k2, f2) = c.neighbor.unwrap();
                let back = &d.faces[k2][f2];
                assert_eq!(back.neighbor, Some((k, f)));
                assert_ne!(c.owner, back.owner);
                for (i, &g) in c.nb_nodes.iter().enumerate() {
                    let mine = d.face_node(k, f, i);
                    let j = back.nb_nodes.iter().position(|&h| h == mine).unwrap();
                    assert_eq!(d.face_node(k2, f2, j), g);
                    let _ = np;
                }
            }
        }
    }

    #[test]
    fn field_layout() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let f = Field::from_components("E", "V/m", 2, &[&a, &b]);
        assert_eq!(f.shape(), (2, 2, 2));
        assert_eq!(f.get(1, 0, 1), 7.0);
        assert_eq!(f.component(0), a.to_vec());
    }
}
