//! Mixed-form kernels shared by the Poisson and drift-diffusion solvers:
//! the element-blocked unknown layout, per-face flux rules, the alternate
//! flux gradient / divergence operators and assembly by column probing.

use rayon::prelude::*;

use super::{Discretization, FaceConn, FaceKind};
use crate::linalg::BlockSparseMatrix;
use crate::mesh::Axis;

/// Boundary treatment of one face in a mixed (scalar u, vector w) problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceRule {
    /// Interior or periodic face; the neighbor's scalar trace is shifted by
    /// `offset` before use.
    Connected { offset: f64 },
    /// u* = value, w* = w⁻.
    Dirichlet(f64),
    /// u* = u⁻, n̂·w* = value.
    Flux(f64),
}

/// Unknowns of element k: np scalar values then `dim` blocks of np vector
/// component values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedLayout {
    pub np: usize,
    pub dim: usize,
}

impl MixedLayout {
    pub fn block(&self) -> usize {
        self.np * (1 + self.dim)
    }

    pub fn scalar(&self, k: usize, i: usize) -> usize {
        k * self.block() + i
    }

    pub fn vector(&self, k: usize, c: usize, i: usize) -> usize {
        k * self.block() + (1 + c) * self.np + i
    }

    /// Scalar unknown at global node index `node = k*np + i`.
    pub fn scalar_at(&self, node: usize) -> usize {
        self.scalar(node / self.np, node % self.np)
    }

    pub fn vector_at(&self, node: usize, c: usize) -> usize {
        self.vector(node / self.np, c, node % self.np)
    }

    /// Splits an element-blocked vector into the nodal scalar and vector parts.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k_count = x.len() / self.block();
        let mut u = Vec::with_capacity(k_count * self.np);
        let mut w = vec![Vec::with_capacity(k_count * self.np); self.dim];
        for k in 0..k_count {
            u.extend_from_slice(&x[self.scalar(k, 0)..self.scalar(k, 0) + self.np]);
            for (c, wc) in w.iter_mut().enumerate() {
                let s = self.vector(k, c, 0);
                wc.extend_from_slice(&x[s..s + self.np]);
            }
        }
        (u, w)
    }

    pub fn join(&self, u: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
        let k_count = u.len() / self.np;
        let mut x = vec![0.0; k_count * self.block()];
        for n in 0..u.len() {
            x[self.scalar_at(n)] = u[n];
            for c in 0..self.dim {
                x[self.vector_at(n, c)] = w[c][n];
            }
        }
        x
    }

    /// Permutation from element-blocked order to "all scalar, then all
    /// vector components" order: `perm[blocked] = global`.
    pub fn global_order(&self, n_elements: usize) -> Vec<usize> {
        let nn = n_elements * self.np;
        let mut perm = vec![0; n_elements * self.block()];
        for node in 0..nn {
            perm[self.scalar_at(node)] = node;
            for c in 0..self.dim {
                perm[self.vector_at(node, c)] = nn * (1 + c) + node;
            }
        }
        perm
    }
}

/// Default rules: connected faces get zero offset, boundary faces follow
/// `boundary`.
pub fn face_rules(disc: &Discretization, boundary: impl Fn(usize, usize, &FaceConn) -> FaceRule) -> Vec<Vec<FaceRule>> {
    (0..disc.n_elements())
        .map(|k| {
            disc.faces[k]
                .iter()
                .enumerate()
                .map(|(f, c)| match c.kind {
                    FaceKind::Interior => FaceRule::Connected { offset: 0.0 },
                    _ => boundary(k, f, c),
                })
                .collect()
        })
        .collect()
}

/// Rules with all boundary data and offsets set to zero, for the linear
/// part of an affine residual.
pub fn homogeneous(rules: &[Vec<FaceRule>]) -> Vec<Vec<FaceRule>> {
    rules
        .iter()
        .map(|r| {
            r.iter()
                .map(|rule| match rule {
                    FaceRule::Connected { .. } => FaceRule::Connected { offset: 0.0 },
                    FaceRule::Dirichlet(_) => FaceRule::Dirichlet(0.0),
                    FaceRule::Flux(_) => FaceRule::Flux(0.0),
                })
                .collect()
        })
        .collect()
}

/// Scalar ghost offset for the potential-drop condition: crossing the
/// x seam from the low side picks up +drop, from the high side −drop.
pub fn drop_offset(kind: FaceKind, drop: f64) -> f64 {
    match kind {
        FaceKind::Periodic { axis: Axis::X, at_max } => {
            if at_max {
                -drop
            } else {
                drop
            }
        }
        _ => 0.0,
    }
}

/// Scalar flux value u* at face node j of (k, f).
#[inline]
fn scalar_star(conn: &FaceConn, rule: FaceRule, u_minus: f64, u: &dyn Fn(usize) -> f64, j: usize) -> f64 {
    match rule {
        FaceRule::Connected { offset } => {
            if conn.owner {
                u_minus
            } else {
                u(conn.nb_nodes[j]) + offset
            }
        }
        FaceRule::Dirichlet(v) => v,
        FaceRule::Flux(_) => u_minus,
    }
}

/// Strong-form gradient with the alternate flux:
/// out[c] = D_c u − F̄(n_c (u⁻ − u*)). `u` maps global node → value.
pub fn gradflux(disc: &Discretization, rules: &[FaceRule], k: usize, u: &dyn Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let ops = &disc.ops;
    let np = disc.np();
    let nfp = disc.nfp();
    let dim = disc.dim();
    let uk: Vec<f64> = (0..np).map(|i| u(k * np + i)).collect();
    let mut out = vec![vec![0.0; np]; dim];
    for (c, o) in out.iter_mut().enumerate() {
        ops.deriv(k, c, &uk, o);
    }
    let mut jump = vec![0.0; disc.nfaces() * nfp];
    let mut any = false;
    for f in 0..disc.nfaces() {
        let conn = &disc.faces[k][f];
        for j in 0..nfp {
            let i = ops.refel.face_nodes[f][j];
            let star = scalar_star(conn, rules[f], uk[i], u, j);
            jump[f * nfp + j] = uk[i] - star;
            any |= jump[f * nfp + j] != 0.0;
        }
    }
    if any {
        let mut flux = vec![0.0; jump.len()];
        for (c, o) in out.iter_mut().enumerate() {
            for f in 0..disc.nfaces() {
                let nc = ops.geom[k].normals[f][c];
                for j in 0..nfp {
                    flux[f * nfp + j] = nc * jump[f * nfp + j];
                }
            }
            ops.lift_add(k, &flux, -1.0, o);
        }
    }
    out
}

/// Strong-form divergence with the alternate flux:
/// Σ_c D_c w_c − F̄(n̂·w⁻ − n̂·w*). `w(node, c)` must already include the
/// element coefficient. On Dirichlet faces the flux carries the penalty
/// n̂·w* = n̂·w⁻ + τ(u⁻ − u_D) with τ = `penalty`·sJ/J, which keeps the
/// one-sided pairing nonsingular.
pub fn divflux(
    disc: &Discretization,
    rules: &[FaceRule],
    k: usize,
    w: &dyn Fn(usize, usize) -> f64,
    u: &dyn Fn(usize) -> f64,
    penalty: f64,
) -> Vec<f64> {
    let ops = &disc.ops;
    let np = disc.np();
    let nfp = disc.nfp();
    let dim = disc.dim();
    let mut out = vec![0.0; np];
    let mut tmp = vec![0.0; np];
    let mut wk = vec![vec![0.0; np]; dim];
    for c in 0..dim {
        for i in 0..np {
            wk[c][i] = w(k * np + i, c);
        }
        ops.deriv(k, c, &wk[c], &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    let mut flux = vec![0.0; disc.nfaces() * nfp];
    for f in 0..disc.nfaces() {
        let conn = &disc.faces[k][f];
        let n = ops.geom[k].normals[f];
        for j in 0..nfp {
            let i = ops.refel.face_nodes[f][j];
            let wn_minus: f64 = (0..dim).map(|c| n[c] * wk[c][i]).sum();
            let wn_star = match rules[f] {
                FaceRule::Connected { .. } => {
                    if conn.owner {
                        let g = conn.nb_nodes[j];
                        (0..dim).map(|c| n[c] * w(g, c)).sum()
                    } else {
                        wn_minus
                    }
                }
                FaceRule::Dirichlet(v) => wn_minus + penalty * ops.geom[k].fscale[f] * (u(k * np + i) - v),
                FaceRule::Flux(v) => v,
            };
            flux[f * nfp + j] = wn_minus - wn_star;
        }
    }
    ops.lift_add(k, &flux, -1.0, &mut out);
    out
}

/// Builds the block pattern (element plus face neighbors).
pub fn element_pattern(disc: &Discretization) -> Vec<Vec<usize>> {
    (0..disc.n_elements()).map(|k| disc.neighbors(k)).collect()
}

/// Assembles A and b of an affine element residual r_k(x) = A_k x − b_k.
/// `residual(k, x, homogeneous)` with `homogeneous = true` must drop all data
/// terms so that it returns A_k x exactly; columns are probed with unit
/// vectors on element k and its neighbors, and b_k = −r_k(0).
pub fn assemble_by_probing(
    disc: &Discretization,
    bs: usize,
    residual: &(dyn Fn(usize, &[f64], bool) -> Vec<f64> + Sync),
) -> (BlockSparseMatrix, Vec<f64>) {
    let pattern = element_pattern(disc);
    let mut a = BlockSparseMatrix::from_pattern(bs, &pattern);
    let n = disc.n_elements() * bs;
    let rows: Vec<(Vec<(usize, Vec<f64>)>, Vec<f64>)> = (0..disc.n_elements())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |x, k| {
                let r0 = residual(k, x, false);
                let mut cols = a.block_cols(k).to_vec();
                cols.sort_unstable();
                let mut blocks = Vec::with_capacity(cols.len());
                for m in cols {
                    let mut blk = vec![0.0; bs * bs];
                    for c in 0..bs {
                        x[m * bs + c] = 1.0;
                        let r = residual(k, x, true);
                        x[m * bs + c] = 0.0;
                        for row in 0..bs {
                            blk[row * bs + c] = r[row];
                        }
                    }
                    blocks.push((m, blk));
                }
                (blocks, r0.iter().map(|v| -v).collect())
            },
        )
        .collect();
    let mut b = vec![0.0; n];
    for (k, (blocks, rhs)) in rows.into_iter().enumerate() {
        for (m, blk) in blocks {
            a.block_mut(k, m).unwrap().copy_from_slice(&blk);
        }
        b[k * bs..(k + 1) * bs].copy_from_slice(&rhs);
    }
    (a, b)
}
