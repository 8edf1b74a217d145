use std::collections::BTreeMap;
use std::f64::consts::PI;

use unitcell_dg::dd_steady::{equilibrium_contact_densities, gummel_solve, Device, GummelOptions, SteadyState};
use unitcell_dg::dd_td::{total_carriers, tvdrk3_step, Transport};
use unitcell_dg::dgcore::Discretization;
use unitcell_dg::materials::ltgaas_paper;
use unitcell_dg::maxwell_td::lsrk54_step;
use unitcell_dg::mesh::{build_structured, pair_periodic_faces, Axis, BoundaryTag, StructuredSpec};
use unitcell_dg::poisson::l2_norm;
use unitcell_dg::units::Q_OVER_EPS0_V_UM2_CM3;

pub fn interval(x1: f64, h: f64, order: usize, periodic: bool) -> Discretization {
    let m = build_structured(&StructuredSpec::interval(0.0, x1, h)).unwrap();
    let pairs = if periodic { vec![pair_periodic_faces(&m, Axis::X).unwrap()] } else { vec![] };
    Discretization::new(m, order, pairs).unwrap()
}

pub fn contacts(left: f64, right: f64) -> BTreeMap<BoundaryTag, f64> {
    BTreeMap::from([(BoundaryTag::XMin, left), (BoundaryTag::XMax, right)])
}

/// 1 µm LT-GaAs slab between two contacts, the right one at `bias`.
pub fn table_one_slab(h: f64, order: usize, bias: f64) -> Device {
    let m = build_structured(&StructuredSpec::interval(0.0, 1.0, h)).unwrap();
    Device::new(m, order, &[], ltgaas_paper(), 0.0, contacts(0.0, bias)).unwrap()
}

/// Unbiased slab: the Gummel result and the largest relative deviation of
/// n_e and n_h from the closed-form contact densities.
pub fn equilibrium() -> (SteadyState, f64, f64) {
    let dev = table_one_slab(0.1, 2, 0.0);
    let st = gummel_solve(&dev, &GummelOptions::default(), None).unwrap();
    let c = dev.materials.carriers;
    let (ne0, nh0) = equilibrium_contact_densities(c.doping, c.n_i);
    let de = st.n_e.iter().fold(0.0f64, |m, n| m.max((n - ne0).abs() / ne0));
    let dh = st.n_h.iter().fold(0.0f64, |m, n| m.max((n - nh0).abs() / nh0));
    (st, de, dh)
}

/// Equilibrium potential of a 1D abrupt junction by Newton on a fine
/// finite-difference grid: ε φ'' = K (n_i e^{φ/V_T} − n_i e^{−φ/V_T} − C).
#[allow(clippy::too_many_arguments)]
pub fn poisson_boltzmann_fd(len: f64, cells: usize, eps: f64, n_i: f64, v_t: f64, doping: impl Fn(f64) -> f64, left: f64, right: f64) -> Vec<f64> {
    let k = Q_OVER_EPS0_V_UM2_CM3;
    let h = len / cells as f64;
    let n = cells + 1;
    let mut phi: Vec<f64> = (0..n).map(|i| left + (right - left) * i as f64 / cells as f64).collect();
    for _ in 0..200 {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut r = vec![0.0; n];
        b[0] = 1.0;
        b[n - 1] = 1.0;
        for i in 1..n - 1 {
            let x = i as f64 * h;
            let ex = (phi[i] / v_t).exp();
            let rho = k * (n_i / ex - n_i * ex + doping(x));
            r[i] = eps * (phi[i - 1] - 2.0 * phi[i] + phi[i + 1]) / (h * h) + rho;
            a[i] = eps / (h * h);
            c[i] = eps / (h * h);
            b[i] = -2.0 * eps / (h * h) - k * (n_i / ex + n_i * ex) / v_t;
        }
        // Thomas solve of J δ = −r
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        for i in 1..n {
            let m = a[i] / b[i - 1];
            b[i] -= m * c[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        let mut delta = vec![0.0; n];
        delta[n - 1] = rhs[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            delta[i] = (rhs[i] - c[i] * delta[i + 1]) / b[i];
        }
        let step = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        for i in 0..n {
            phi[i] += delta[i].clamp(-v_t, v_t);
        }
        if step < 1e-12 {
            break;
        }
    }
    phi
}

/// n⁺n junction at equilibrium against the fine-grid oracle. Returns the
/// largest potential deviation and the built-in voltage [V].
pub fn diode_deviation() -> (f64, f64) {
    let len = 1.0;
    let (c_left, c_right) = (1e17, 1e16);
    let doping = move |x: f64| if x < 0.5 * len { c_left } else { c_right };
    let m = build_structured(&StructuredSpec::interval(0.0, len, 0.0125)).unwrap();
    let mut dev = Device::new(m, 2, &[], ltgaas_paper(), 0.0, contacts(0.0, 0.0)).unwrap();
    let np = dev.semi.np();
    for node in 0..dev.semi.n_nodes() {
        // element centroid decides the side, so the step sits on a face
        let k = node / np;
        let xc = (0..np).map(|i| dev.semi.ops.coords[k * np + i][0]).sum::<f64>() / np as f64;
        dev.doping[node] = doping(xc);
    }
    let opts = GummelOptions { tol: 1e-8, ..GummelOptions::default() };
    let st = gummel_solve(&dev, &opts, None).unwrap();

    let c = dev.materials.carriers;
    let (ne_l, _) = equilibrium_contact_densities(c_left, c.n_i);
    let (ne_r, _) = equilibrium_contact_densities(c_right, c.n_i);
    let left = c.v_t * (ne_l / c.n_i).ln();
    let right = c.v_t * (ne_r / c.n_i).ln();
    let built_in = left - right;

    let cells = 20000;
    let fd = poisson_boltzmann_fd(len, cells, dev.materials.semiconductor.eps_static, c.n_i, c.v_t, doping, left, right);
    let mut worst = 0.0f64;
    for (node, x) in dev.disc.ops.coords.iter().enumerate() {
        let s = x[0] / len * cells as f64;
        let i = (s.floor() as usize).min(cells - 1);
        let t = s - i as f64;
        let oracle = (1.0 - t) * fd[i] + t * fd[i + 1];
        worst = worst.max((st.phi[node] - oracle).abs());
    }
    (worst, built_in)
}

// ----- transient -----

pub fn periodic_line(h: f64, p: usize) -> Discretization {
    interval(1.0, h, p, true)
}

/// Runs ∂t n = ∇·(d∇n) + ∇·(vn) with TVD-RK3 and fixed coefficients.
pub fn evolve(tr: &Transport, d: &[f64], v: &[Vec<f64>], n: &mut Vec<f64>, t_end: f64, dt_max: f64) {
    let steps = (t_end / dt_max).ceil() as usize;
    let dt = t_end / steps as f64;
    for i in 0..steps {
        tvdrk3_step(n, i as f64 * dt, dt, |_, y, o| -> Result<(), ()> {
            tr.apply(d, v, y, o);
            Ok(())
        })
        .unwrap();
    }
}

/// L² error of a decaying periodic cosine under pure diffusion.
pub fn heat_error(p: usize, h: f64) -> f64 {
    let disc = periodic_line(h, p);
    let tr = Transport::new(&disc, &BTreeMap::new(), 0.0);
    let k = 2.0 * PI;
    let d = 1.0 / (k * k);
    let nn = disc.n_nodes();
    let mut n = disc.ops.project(|x| (k * x[0]).cos());
    let t_end = 0.2;
    let dt = 0.2 * h * h / (d * ((p + 1) as f64).powi(4));
    evolve(&tr, &vec![d; nn], &[vec![0.0; nn]], &mut n, t_end, dt);
    let err: Vec<f64> = n.iter().zip(&disc.ops.coords).map(|(u, x)| u - (-t_end).exp() * (k * x[0]).cos()).collect();
    l2_norm(&disc, &err)
}

/// L² error of a periodic sine under pure advection.
pub fn advection_error(p: usize, h: f64) -> f64 {
    let disc = periodic_line(h, p);
    let tr = Transport::new(&disc, &BTreeMap::new(), 0.0);
    let k = 2.0 * PI;
    let nn = disc.n_nodes();
    let mut n = disc.ops.project(|x| (k * x[0]).sin());
    let t_end = 0.25;
    let dt = 0.1 * h / (2 * p + 1) as f64;
    evolve(&tr, &vec![0.0; nn], &[vec![1.0; nn]], &mut n, t_end, dt);
    // ∂t n = ∂x n moves the profile towards −x at unit speed
    let err: Vec<f64> = n.iter().zip(&disc.ops.coords).map(|(u, x)| u - (k * (x[0] + t_end)).sin()).collect();
    l2_norm(&disc, &err)
}

/// Relative change of the carrier total over 1000 steps of variable
/// coefficient drift-diffusion on a periodic domain.
pub fn mass_drift(disc: &Discretization) -> f64 {
    let tr = Transport::new(disc, &BTreeMap::new(), 0.0);
    let dim = disc.dim();
    let d: Vec<f64> = disc.ops.coords.iter().map(|x| 0.01 * (1.0 + 0.5 * (2.0 * PI * x[0]).sin())).collect();
    let v: Vec<Vec<f64>> = (0..dim)
        .map(|a| disc.ops.coords.iter().map(|x| 0.3 + 0.2 * (2.0 * PI * x[1 - a.min(1)]).cos()).collect())
        .collect();
    let mut n: Vec<f64> = disc.ops.coords.iter().map(|x| 1e16 * (1.0 + 0.5 * (2.0 * PI * (x[0] + x[1])).cos())).collect();
    let m0 = total_carriers(disc, &n);
    let p = disc.ops.refel.order as f64;
    let h = disc.mesh.min_edge();
    let dt = 0.2 * (h / (0.5 * (2.0 * p + 1.0))).min(h * h / (0.015 * (p + 1.0).powi(4)));
    evolve(&tr, &d, &v, &mut n, 1000.0 * dt, dt);
    ((total_carriers(disc, &n) - m0) / m0).abs()
}

/// Observed order of a one-step method on y′ = −y, y(0) = 1, over [0, 1]
/// from step sizes 1/20 and 1/40.
pub fn scalar_slope(step: impl Fn(&mut Vec<f64>, f64, f64)) -> f64 {
    let err = |n: usize| {
        let dt = 1.0 / n as f64;
        let mut y = vec![1.0];
        for i in 0..n {
            step(&mut y, i as f64 * dt, dt);
        }
        (y[0] - (-1.0f64).exp()).abs()
    };
    (err(20) / err(40)).log2()
}

pub fn tvdrk3_scalar_slope() -> f64 {
    scalar_slope(|y, t, dt| {
        tvdrk3_step(y, t, dt, |_, y, o| -> Result<(), ()> {
            o[0] = -y[0];
            Ok(())
        })
        .unwrap()
    })
}

pub fn lsrk54_scalar_slope() -> f64 {
    scalar_slope(|y, t, dt| {
        lsrk54_step(y, t, dt, |_, y, o| -> Result<(), ()> {
            o[0] = -y[0];
            Ok(())
        })
        .unwrap()
    })
}
