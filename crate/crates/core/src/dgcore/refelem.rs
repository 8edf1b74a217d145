//! Nodal reference elements on the 1D segment [-1, 1] and the triangle with
//! vertices (-1,-1), (1,-1), (-1,1). Nodes are Legendre–Gauss–Lobatto points
//! in 1D and warp-and-blend nodes in 2D.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::DgError;

const NODE_TOL: f64 = 1e-10;

/// Orthonormal Jacobi polynomial P_n^(α,β) evaluated at `x`.
pub fn jacobi_p(x: &[f64], alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    let ab = alpha + beta;
    let gamma0 = 2f64.powf(ab + 1.0) / (ab + 1.0) * gamma(alpha + 1.0) * gamma(beta + 1.0) / gamma(ab + 1.0);
    let p0: Vec<f64> = vec![1.0 / gamma0.sqrt(); x.len()];
    if n == 0 {
        return p0;
    }
    let gamma1 = (alpha + 1.0) * (beta + 1.0) / (ab + 3.0) * gamma0;
    let p1: Vec<f64> = x
        .iter()
        .map(|&xi| ((ab + 2.0) * xi / 2.0 + (alpha - beta) / 2.0) / gamma1.sqrt())
        .collect();
    if n == 1 {
        return p1;
    }
    let mut aold = 2.0 / (2.0 + ab) * ((alpha + 1.0) * (beta + 1.0) / (ab + 3.0)).sqrt();
    let (mut pm1, mut p) = (p0, p1);
    for i in 1..n {
        let fi = i as f64;
        let h1 = 2.0 * fi + ab;
        let anew = 2.0 / (h1 + 2.0)
            * ((fi + 1.0) * (fi + 1.0 + ab) * (fi + 1.0 + alpha) * (fi + 1.0 + beta) / (h1 + 1.0) / (h1 + 3.0)).sqrt();
        let bnew = -(alpha * alpha - beta * beta) / h1 / (h1 + 2.0);
        let next: Vec<f64> = x
            .iter()
            .zip(pm1.iter().zip(&p))
            .map(|(&xi, (&a, &b))| (-aold * a + (xi - bnew) * b) / anew)
            .collect();
        pm1 = p;
        p = next;
        aold = anew;
    }
    p
}

pub fn grad_jacobi_p(x: &[f64], alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![0.0; x.len()];
    }
    let s = ((n as f64) * (n as f64 + alpha + beta + 1.0)).sqrt();
    jacobi_p(x, alpha + 1.0, beta + 1.0, n - 1)
        .into_iter()
        .map(|v| v * s)
        .collect()
}

// Γ at the integer and half-integer arguments that occur here.
fn gamma(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-12 && x > 0.0 {
        (1..x.round() as u64).map(|i| i as f64).product()
    } else {
        // Lanczos approximation (g = 7)
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let xm = x - 1.0;
        let mut a = C[0];
        let t = xm + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (xm + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(xm + 0.5) * (-t).exp() * a
    }
}

/// Gauss–Jacobi quadrature nodes (N+1 points).
pub fn jacobi_gq_nodes(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![-(alpha - beta) / (alpha + beta + 2.0)];
    }
    let ab = alpha + beta;
    let m = n + 1;
    let mut j = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let h1 = 2.0 * i as f64 + ab;
        j[(i, i)] = if (h1).abs() < 1e-14 {
            0.0
        } else {
            -0.5 * (alpha * alpha - beta * beta) / (h1 + 2.0) / h1
        };
        if i + 1 < m {
            let fi = (i + 1) as f64;
            let v = 2.0 / (h1 + 2.0)
                * (fi * (fi + ab) * (fi + alpha) * (fi + beta) / (h1 + 1.0) / (h1 + 3.0)).sqrt();
            j[(i, i + 1)] = v;
            j[(i + 1, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut x: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x
}

/// Gauss–Lobatto–Jacobi nodes (N+1 points including ±1).
pub fn jacobi_gl(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![-1.0, 1.0];
    }
    let mut x = vec![-1.0];
    x.extend(jacobi_gq_nodes(alpha + 1.0, beta + 1.0, n - 2));
    x.push(1.0);
    x
}

fn vandermonde_1d(n: usize, r: &[f64]) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(r.len(), n + 1);
    for j in 0..=n {
        let p = jacobi_p(r, 0.0, 0.0, j);
        for (i, pi) in p.into_iter().enumerate() {
            v[(i, j)] = pi;
        }
    }
    v
}

fn grad_vandermonde_1d(n: usize, r: &[f64]) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(r.len(), n + 1);
    for j in 0..=n {
        let p = grad_jacobi_p(r, 0.0, 0.0, j);
        for (i, pi) in p.into_iter().enumerate() {
            v[(i, j)] = pi;
        }
    }
    v
}

fn warp_factor(n: usize, rout: &[f64]) -> Vec<f64> {
    let lgl = jacobi_gl(0.0, 0.0, n);
    let req: Vec<f64> = (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    let veq = vandermonde_1d(n, &req);
    let mut pmat = DMatrix::zeros(n + 1, rout.len());
    for i in 0..=n {
        let p = jacobi_p(rout, 0.0, 0.0, i);
        for (j, pj) in p.into_iter().enumerate() {
            pmat[(i, j)] = pj;
        }
    }
    let lmat = veq.transpose().lu().solve(&pmat).expect("equidistant Vandermonde is invertible");
    let diff = DVector::from_iterator(n + 1, lgl.iter().zip(&req).map(|(a, b)| a - b));
    let warp = lmat.transpose() * diff;
    rout.iter()
        .zip(warp.iter())
        .map(|(&r, &w)| {
            let zerof = if r.abs() < 1.0 - 1e-10 { 1.0 } else { 0.0 };
            let sf = 1.0 - (zerof * r).powi(2);
            w / sf + w * (zerof - 1.0)
        })
        .collect()
}

/// Warp-and-blend nodes on the equilateral triangle, mapped to (r, s).
fn nodes_2d(n: usize) -> Vec<[f64; 2]> {
    const ALPOPT: [f64; 15] = [
        0.0000, 0.0000, 1.4152, 0.1001, 0.2751, 0.9800, 1.0999, 1.2832, 1.3648, 1.4773, 1.4959, 1.5743, 1.5770,
        1.6223, 1.6258,
    ];
    let alpha = if n < 16 { ALPOPT[n - 1] } else { 5.0 / 3.0 };
    let np = (n + 1) * (n + 2) / 2;
    let (mut l1, mut l3) = (Vec::with_capacity(np), Vec::with_capacity(np));
    for i in 1..=n + 1 {
        for m in 1..=n + 2 - i {
            l1.push((i - 1) as f64 / n as f64);
            l3.push((m - 1) as f64 / n as f64);
        }
    }
    let l2: Vec<f64> = l1.iter().zip(&l3).map(|(a, c)| 1.0 - a - c).collect();
    let sq3 = 3f64.sqrt();
    let mut x: Vec<f64> = l2.iter().zip(&l3).map(|(b, c)| -b + c).collect();
    let mut y: Vec<f64> = (0..np).map(|i| (-l2[i] - l3[i] + 2.0 * l1[i]) / sq3).collect();
    let d1: Vec<f64> = (0..np).map(|i| l3[i] - l2[i]).collect();
    let d2: Vec<f64> = (0..np).map(|i| l1[i] - l3[i]).collect();
    let d3: Vec<f64> = (0..np).map(|i| l2[i] - l1[i]).collect();
    let (w1, w2, w3) = (warp_factor(n, &d1), warp_factor(n, &d2), warp_factor(n, &d3));
    let (c2, s2) = ((2.0 * std::f64::consts::PI / 3.0).cos(), (2.0 * std::f64::consts::PI / 3.0).sin());
    let (c3, s3) = ((4.0 * std::f64::consts::PI / 3.0).cos(), (4.0 * std::f64::consts::PI / 3.0).sin());
    for i in 0..np {
        let warp1 = 4.0 * l2[i] * l3[i] * w1[i] * (1.0 + (alpha * l1[i]).powi(2));
        let warp2 = 4.0 * l1[i] * l3[i] * w2[i] * (1.0 + (alpha * l2[i]).powi(2));
        let warp3 = 4.0 * l1[i] * l2[i] * w3[i] * (1.0 + (alpha * l3[i]).powi(2));
        x[i] += warp1 + c2 * warp2 + c3 * warp3;
        y[i] += s2 * warp2 + s3 * warp3;
    }
    (0..np)
        .map(|i| {
            let l1 = (sq3 * y[i] + 1.0) / 3.0;
            let l2 = (-3.0 * x[i] - sq3 * y[i] + 2.0) / 6.0;
            let l3 = (3.0 * x[i] - sq3 * y[i] + 2.0) / 6.0;
            [-l2 + l3 - l1, -l2 - l3 + l1]
        })
        .collect()
}

fn rs_to_ab(r: f64, s: f64) -> (f64, f64) {
    let a = if (s - 1.0).abs() > 1e-14 {
        2.0 * (1.0 + r) / (1.0 - s) - 1.0
    } else {
        -1.0
    };
    (a, s)
}

fn simplex_2d_p(a: &[f64], b: &[f64], i: usize, j: usize) -> Vec<f64> {
    let h1 = jacobi_p(a, 0.0, 0.0, i);
    let h2 = jacobi_p(b, 2.0 * i as f64 + 1.0, 0.0, j);
    (0..a.len())
        .map(|k| 2f64.sqrt() * h1[k] * h2[k] * (1.0 - b[k]).powi(i as i32))
        .collect()
}

fn grad_simplex_2d_p(a: &[f64], b: &[f64], id: usize, jd: usize) -> (Vec<f64>, Vec<f64>) {
    let fa = jacobi_p(a, 0.0, 0.0, id);
    let dfa = grad_jacobi_p(a, 0.0, 0.0, id);
    let gb = jacobi_p(b, 2.0 * id as f64 + 1.0, 0.0, jd);
    let dgb = grad_jacobi_p(b, 2.0 * id as f64 + 1.0, 0.0, jd);
    let scale = 2f64.powf(id as f64 + 0.5);
    let mut dr = Vec::with_capacity(a.len());
    let mut ds = Vec::with_capacity(a.len());
    for k in 0..a.len() {
        let half = 0.5 * (1.0 - b[k]);
        let mut vr = dfa[k] * gb[k];
        let mut vs = dfa[k] * (gb[k] * (0.5 * (1.0 + a[k])));
        if id > 0 {
            vr *= half.powi(id as i32 - 1);
            vs *= half.powi(id as i32 - 1);
        }
        let mut tmp = dgb[k] * half.powi(id as i32);
        if id > 0 {
            tmp -= 0.5 * id as f64 * gb[k] * half.powi(id as i32 - 1);
        }
        vs += fa[k] * tmp;
        dr.push(vr * scale);
        ds.push(vs * scale);
    }
    (dr, ds)
}

/// Orthonormal modal basis evaluated at reference points: returns the
/// Vandermonde matrix (points × modes).
pub fn vandermonde(dim: usize, order: usize, pts: &[[f64; 2]]) -> DMatrix<f64> {
    match dim {
        1 => {
            let r: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            vandermonde_1d(order, &r)
        }
        _ => {
            let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| rs_to_ab(p[0], p[1])).unzip();
            let np = (order + 1) * (order + 2) / 2;
            let mut v = DMatrix::zeros(pts.len(), np);
            let mut sk = 0;
            for i in 0..=order {
                for j in 0..=order - i {
                    for (row, val) in simplex_2d_p(&a, &b, i, j).into_iter().enumerate() {
                        v[(row, sk)] = val;
                    }
                    sk += 1;
                }
            }
            v
        }
    }
}

fn grad_vandermonde_2d(order: usize, pts: &[[f64; 2]]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| rs_to_ab(p[0], p[1])).unzip();
    let np = (order + 1) * (order + 2) / 2;
    let mut vr = DMatrix::zeros(pts.len(), np);
    let mut vs = DMatrix::zeros(pts.len(), np);
    let mut sk = 0;
    for i in 0..=order {
        for j in 0..=order - i {
            let (dr, ds) = grad_simplex_2d_p(&a, &b, i, j);
            for row in 0..pts.len() {
                vr[(row, sk)] = dr[row];
                vs[(row, sk)] = ds[row];
            }
            sk += 1;
        }
    }
    (vr, vs)
}

/// Reference-element tables shared by every element of a mesh.
#[derive(Debug, Clone)]
pub struct RefElement {
    pub dim: usize,
    pub order: usize,
    pub np: usize,
    pub nfp: usize,
    pub nfaces: usize,
    /// Node coordinates (r, s); s = 0 in 1D.
    pub nodes: Vec<[f64; 2]>,
    pub vandermonde: DMatrix<f64>,
    pub inv_vandermonde: DMatrix<f64>,
    /// Differentiation matrices, one per reference coordinate.
    pub diff: Vec<DMatrix<f64>>,
    /// Reference mass matrix (V Vᵀ)⁻¹.
    pub mass: DMatrix<f64>,
    /// Lift matrix M⁻¹E mapping stacked face-node values to volume nodes.
    pub lift: DMatrix<f64>,
    /// Volume-node indices of each face's nodes.
    pub face_nodes: Vec<Vec<usize>>,
}

pub fn reference_element(dim: usize, order: usize) -> Result<RefElement, DgError> {
    if !(1..=6).contains(&order) {
        return Err(DgError::UnsupportedOrder(order));
    }
    match dim {
        1 => Ok(build_1d(order)),
        2 => Ok(build_2d(order)),
        d => Err(DgError::UnsupportedDim(d)),
    }
}

fn build_1d(n: usize) -> RefElement {
    let r = jacobi_gl(0.0, 0.0, n);
    let v = vandermonde_1d(n, &r);
    let vinv = v.clone().try_inverse().expect("LGL Vandermonde is invertible");
    let dr = grad_vandermonde_1d(n, &r) * &vinv;
    let np = n + 1;
    let mut emat = DMatrix::zeros(np, 2);
    emat[(0, 0)] = 1.0;
    emat[(np - 1, 1)] = 1.0;
    let lift = &v * (v.transpose() * emat);
    let mass = (&v * v.transpose()).try_inverse().unwrap();
    RefElement {
        dim: 1,
        order: n,
        np,
        nfp: 1,
        nfaces: 2,
        nodes: r.iter().map(|&x| [x, 0.0]).collect(),
        vandermonde: v,
        inv_vandermonde: vinv,
        diff: vec![dr],
        mass,
        lift,
        face_nodes: vec![vec![0], vec![np - 1]],
    }
}

fn build_2d(n: usize) -> RefElement {
    let nodes = nodes_2d(n);
    let np = nodes.len();
    let nfp = n + 1;
    let v = vandermonde(2, n, &nodes);
    let vinv = v.clone().try_inverse().expect("warp-blend Vandermonde is invertible");
    let (vr, vs) = grad_vandermonde_2d(n, &nodes);
    let dr = &vr * &vinv;
    let ds = &vs * &vinv;
    let select = |pred: &dyn Fn([f64; 2]) -> bool| -> Vec<usize> {
        (0..np).filter(|&i| pred(nodes[i])).collect()
    };
    let face_nodes = vec![
        select(&|p| (p[1] + 1.0).abs() < NODE_TOL),
        select(&|p| (p[0] + p[1]).abs() < NODE_TOL),
        select(&|p| (p[0] + 1.0).abs() < NODE_TOL),
    ];
    let mut emat = DMatrix::zeros(np, 3 * nfp);
    for (f, fnodes) in face_nodes.iter().enumerate() {
        assert_eq!(fnodes.len(), nfp);
        let coord: Vec<f64> = fnodes
            .iter()
            .map(|&i| if f == 2 { nodes[i][1] } else { nodes[i][0] })
            .collect();
        let v1 = vandermonde_1d(n, &coord);
        let mass_edge = (&v1 * v1.transpose()).try_inverse().unwrap();
        for (a, &i) in fnodes.iter().enumerate() {
            for b in 0..nfp {
                emat[(i, f * nfp + b)] = mass_edge[(a, b)];
            }
        }
    }
    let lift = &v * (v.transpose() * emat);
    let mass = (&v * v.transpose()).try_inverse().unwrap();
    RefElement {
        dim: 2,
        order: n,
        np,
        nfp,
        nfaces: 3,
        nodes,
        vandermonde: v,
        inv_vandermonde: vinv,
        diff: vec![dr, ds],
        mass,
        lift,
        face_nodes,
    }
}

impl RefElement {
    /// Number of nodes for a given dimension and order.
    pub fn node_count(dim: usize, order: usize) -> usize {
        match dim {
            1 => order + 1,
            _ => (order + 1) * (order + 2) / 2,
        }
    }

    /// Interpolation matrix from nodal values to values at `pts`.
    pub fn interpolation_matrix(&self, pts: &[[f64; 2]]) -> DMatrix<f64> {
        vandermonde(self.dim, self.order, pts) * &self.inv_vandermonde
    }
}
