mod common;

use std::f64::consts::TAU;

use common::maxwell::{
    energy_max_increase, fresnel, lsrk_pde_slope, periodic_line, plane_wave_error_1d, plane_wave_error_2d, pml_reflection_db, reflection, set_wave_1d, vacuum, C,
};
use num_complex::Complex64;
use unitcell_dg::dgcore::Discretization;
use unitcell_dg::materials::{permittivity, GOLD_DRUDE, LTGAAS_LORENTZ};
use unitcell_dg::maxwell_td::{
    ade_rhs, lsrk54_step, Ade, MaxwellOptions, Medium,
};
use unitcell_dg::mesh::{build_structured, StructuredSpec};

#[test]
fn plane_wave_converges_1d() {
    for p in 1..=3 {
        let errs: Vec<f64> = [0.125, 0.0625, 0.03125].iter().map(|&h| plane_wave_error_1d(p, h)).collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate >= p as f64 + 1.0 - 0.2, "p={p} rate {rate} {errs:?}");
        }
    }
}

#[test]
fn plane_wave_converges_2d() {
    let p = 2;
    let errs: Vec<f64> = [0.125, 0.0625, 0.03125].iter().map(|&h| plane_wave_error_2d(p, h)).collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= p as f64 + 1.0 - 0.2, "rate {rate} {errs:?}");
    }
}

#[test]
fn upwind_energy_is_monotone_over_many_steps() {
    let worst = energy_max_increase(10_000);
    assert!(worst <= 1e-13, "energy grew by {worst:e}");
}

#[test]
fn central_flux_conserves_energy() {
    let disc = periodic_line(0.0, 1.0, 0.1, 3);
    let opts = MaxwellOptions { alpha: 0.0, ..Default::default() };
    let solver = vacuum(&disc, opts);
    let mut s = solver.zeros();
    set_wave_1d(&mut s, &disc, |x| (TAU * x).sin());
    let e0 = solver.energy(&s);
    let dt = 0.5 * solver.stable_dt();
    for _ in 0..2000 {
        solver.step(&mut s, dt, None).unwrap();
    }
    let drift = (solver.energy(&s) - e0).abs() / e0;
    assert!(drift < 1e-6, "{drift}");
}

#[test]
fn lsrk_error_drops_sixteenfold_when_dt_halves() {
    let slope = lsrk_pde_slope();
    assert!((slope - 4.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn pulse_crosses_periodic_seam_unchanged() {
    let pulse = |x: f64| (-((x - 0.8) / 0.05).powi(2)).exp();
    let t_end = 0.3 / C;
    let periodic = periodic_line(0.0, 1.0, 0.05, 3);
    let ps = vacuum(&periodic, MaxwellOptions::default());
    let mut a = ps.zeros();
    // the tail beyond x = 1 wraps around
    set_wave_1d(&mut a, &periodic, |x| pulse(x) + pulse(x + 1.0));

    let open = build_structured(&StructuredSpec::interval(-1.0, 2.0, 0.05)).unwrap();
    let open = Discretization::new(open, 3, vec![]).unwrap();
    let os = vacuum(&open, MaxwellOptions::default());
    let mut b = os.zeros();
    set_wave_1d(&mut b, &open, pulse);

    let dt = ps.stable_dt();
    let steps = (t_end / dt).ceil() as usize;
    for _ in 0..steps {
        ps.step(&mut a, t_end / steps as f64, None).unwrap();
        os.step(&mut b, t_end / steps as f64, None).unwrap();
    }
    // the periodic solution is the sum of the open solution's images
    let np = periodic.np();
    let node_at = |n: usize, x: f64| (0..open.n_nodes()).find(|&m| m % np == n % np && (open.ops.coords[m][0] - x).abs() < 1e-9);
    let mut worst = 0.0f64;
    for n in 0..periodic.n_nodes() {
        let x = periodic.ops.coords[n][0];
        let images: f64 = [-1.0, 0.0, 1.0].iter().filter_map(|s| node_at(n, x + s)).map(|m| b.e(m)[1]).sum();
        worst = worst.max((a.e(n)[1] - images).abs());
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn impedance_step_reflects_one_third() {
    // Z = 2 below: μr = 2, ε = 0.5
    let lower = Medium { eps_inf: 0.5, mu_r: 2.0, ade: Ade::None };
    let r = reflection(lower, 2.0, 0.05, 375.0, 0.004, 0.03);
    assert!((r - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-3, "{r}");
}

#[test]
fn drude_half_space_matches_fresnel() {
    let f0 = 375.0;
    let eps = permittivity(&GOLD_DRUDE, TAU * f0 * 1e12);
    assert!((eps - Complex64::new(-32.87, 1.16)).norm() < 0.02);
    let lower = Medium::from_region(&unitcell_dg::materials::RegionMaterial {
        eps_static: 1e4,
        dispersion: GOLD_DRUDE,
        mu_r: 1.0,
    });
    let r = reflection(lower, 0.2, 0.01, f0, 0.01, 0.075);
    let exact = fresnel(eps);
    let rel = (r - exact).norm() / exact.norm();
    assert!(rel < 0.02, "r = {r}, Fresnel {exact}, rel {rel}");
}

#[test]
fn lorentz_half_space_matches_fresnel() {
    let f0 = 375.0;
    let eps = permittivity(&LTGAAS_LORENTZ, TAU * f0 * 1e12);
    assert!((eps - Complex64::new(12.26, 0.40)).norm() < 0.02);
    let lower = Medium::from_region(&unitcell_dg::materials::RegionMaterial {
        eps_static: 10.7,
        dispersion: LTGAAS_LORENTZ,
        mu_r: 1.0,
    });
    let r = reflection(lower, 4.0, 0.05, f0, 0.01, 0.075);
    let exact = fresnel(eps);
    let rel = (r - exact).norm() / exact.norm();
    assert!(rel < 0.02, "r = {r}, Fresnel {exact}, rel {rel}");
}

#[test]
fn pml_reflects_less_than_minus_40_db() {
    let db = pml_reflection_db();
    assert!(db < -40.0, "reflection {db} dB");
}

#[test]
fn drude_ade_phasor_admittance() {
    // drive ∂t J = ωp² cos ωt − γ J to periodic steady state
    let (wp2, gamma, w) = (4.0, 0.5, 3.0);
    let ade = Ade::Drude { wp2, gamma };
    let mut y = vec![0.0, 0.0];
    let dt = 1e-3;
    let mut t = 0.0;
    while t < 40.0 {
        lsrk54_step::<()>(&mut y, t, dt, |t, y, o| {
            let (dj, dp) = ade_rhs(ade, (w * t).cos(), y[0], y[1]);
            o[0] = dj;
            o[1] = dp;
            Ok(())
        })
        .unwrap();
        t += dt;
    }
    // J = Re{Y e^{iωt}} with Y = ωp²/(iω + γ)
    let yadm = Complex64::new(wp2, 0.0) / Complex64::new(gamma, w);
    let expect = (yadm * Complex64::from_polar(1.0, w * t)).re;
    assert!((y[0] - expect).abs() < 1e-6, "{} vs {expect}", y[0]);
    // Y = iω(ε − ε∞) with the Drude susceptibility −ωp²/(ω² − iγω)
    let chi = -wp2 / Complex64::new(w * w, -gamma * w);
    assert!((yadm - Complex64::new(0.0, w) * chi).norm() < 1e-12);
}
