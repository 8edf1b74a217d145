use std::f64::consts::PI;

use unitcell_dg::dgcore::Discretization;
use unitcell_dg::linalg::LinearSolverHandle;
use unitcell_dg::mesh::{build_structured, pair_periodic_faces, Axis, Layer, Region, StructuredSpec};
use unitcell_dg::poisson::{l2_norm, solve_problem, PoissonProblem};

pub fn solver() -> LinearSolverHandle {
    LinearSolverHandle::new(200, 1e-13, 20000).unwrap()
}

pub fn periodic_square(h: f64, p: usize) -> Discretization {
    let m = build_structured(&StructuredSpec::rectangle(0.0, 1.0, 0.0, 1.0, h)).unwrap();
    let px = pair_periodic_faces(&m, Axis::X).unwrap();
    let py = pair_periodic_faces(&m, Axis::Y).unwrap();
    Discretization::new(m, p, vec![px, py]).unwrap()
}

/// L² errors of φ and E_x for −Δφ + φ = f with φ = sin 2πx sin 2πy.
pub fn manufactured_error(p: usize, h: f64) -> (f64, f64) {
    let disc = periodic_square(h, p);
    let k2 = 2.0 * (2.0 * PI).powi(2);
    let exact = |x: [f64; 2]| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
    let ex = |x: [f64; 2]| -2.0 * PI * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin();
    let mut prob = PoissonProblem::new(&disc);
    prob.g = vec![1.0; disc.n_nodes()];
    prob.f = disc.ops.project(|x| (k2 + 1.0) * exact(x));
    let sol = solve_problem(&prob, &mut solver()).unwrap();
    let ephi: Vec<f64> = sol.phi.iter().zip(&disc.ops.coords).map(|(v, &x)| v - exact(x)).collect();
    let ee: Vec<f64> = sol.e[0].iter().zip(&disc.ops.coords).map(|(v, &x)| v - ex(x)).collect();
    (l2_norm(&disc, &ephi), l2_norm(&disc, &ee))
}

/// Largest relative deviation of E from (φ_drop / w_x, 0) in a charge-free
/// periodic unit cell with φ_drop = 1 V.
pub fn linear_drop_deviation() -> f64 {
    let (wx, wz) = (0.18, 0.62);
    let m = build_structured(&StructuredSpec::rectangle(-wx / 2.0, wx / 2.0, 0.0, wz, 0.06)).unwrap();
    let px = pair_periodic_faces(&m, Axis::X).unwrap();
    let disc = Discretization::new(m, 2, vec![px]).unwrap();
    let mut prob = PoissonProblem::new(&disc);
    prob.phi_drop = 1.0;
    prob.pin = Some((0, 0.0));
    let sol = solve_problem(&prob, &mut solver()).unwrap();
    let ex = 1.0 / wx;
    (0..disc.n_nodes()).fold(0.0f64, |m, n| m.max((sol.e[0][n] - ex).abs() / ex).max(sol.e[1][n].abs() / ex))
}

/// Periodic strip of `cells` dielectric/semiconductor unit cells of width `w`.
pub fn strip(cells: usize, w: f64, p: usize) -> (Discretization, Vec<f64>) {
    let mut layers = Vec::new();
    for _ in 0..cells {
        layers.push(Layer { thickness: 0.3 * w, region: Region::Dielectric, h: 0.1 * w });
        layers.push(Layer { thickness: 0.7 * w, region: Region::Semiconductor, h: 0.1 * w });
    }
    let m = build_structured(&StructuredSpec::interval(0.0, cells as f64 * w, 0.1 * w).with_layers(layers)).unwrap();
    let eps: Vec<f64> = m.regions().iter().map(|r| if *r == Region::Dielectric { 13.26 } else { 10.7 }).collect();
    let px = pair_periodic_faces(&m, Axis::X).unwrap();
    (Discretization::new(m, p, vec![px]).unwrap(), eps)
}

/// One cell with drop φ_d tiled three times against a three-cell strip with
/// drop 3φ_d. Returns the largest deviation of φ and of E_x, both relative
/// to max |φ| of the single cell (E scaled by the cell width).
pub fn telescoping_deviation() -> (f64, f64) {
    let w = 0.18;
    let drop = 0.6667;
    let source = |x: [f64; 2]| 40.0 * (2.0 * PI * x[0] / w).sin();
    let solve = |cells: usize| {
        let (d, eps) = strip(cells, w, 3);
        let mut p = PoissonProblem::new(&d);
        p.eps = eps;
        p.f = d.ops.project(source);
        p.phi_drop = cells as f64 * drop;
        p.pin = Some((0, 0.0));
        let s = solve_problem(&p, &mut solver()).unwrap();
        (d.n_nodes(), s)
    };
    let (n1, s1) = solve(1);
    let (_, s3) = solve(3);
    let scale = s1.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut dphi, mut de) = (0.0f64, 0.0f64);
    for cell in 0..3 {
        for n in 0..n1 {
            let tiled = s1.phi[n] - cell as f64 * drop;
            dphi = dphi.max((tiled - s3.phi[cell * n1 + n]).abs() / scale);
            de = de.max((s1.e[0][n] - s3.e[0][cell * n1 + n]).abs() * w / scale);
        }
    }
    (dphi, de)
}
