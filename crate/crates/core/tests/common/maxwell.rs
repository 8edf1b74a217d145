use std::f64::consts::TAU;

use num_complex::Complex64;
use unitcell_dg::dgcore::Discretization;
use unitcell_dg::maxwell_td::{EmState, MaxwellOptions, MaxwellSolver, Medium, PmlSpec, PumpSpec, Waveform, VAR_E, VAR_H};
use unitcell_dg::mesh::{build_structured, BoundaryTag, Layer, Region, StructuredSpec};
use unitcell_dg::poisson::l2_norm;
use unitcell_dg::units::C_UM_PER_PS;

use super::poisson::periodic_square;

pub const C: f64 = C_UM_PER_PS;

pub fn periodic_line(x0: f64, x1: f64, h: f64, p: usize) -> Discretization {
    let m = build_structured(&StructuredSpec::interval(x0, x1, h)).unwrap();
    let px = unitcell_dg::mesh::pair_periodic_faces(&m, unitcell_dg::mesh::Axis::X).unwrap();
    Discretization::new(m, p, vec![px]).unwrap()
}

pub fn vacuum(disc: &Discretization, opts: MaxwellOptions) -> MaxwellSolver<'_> {
    MaxwellSolver::new(disc, vec![Medium::vacuum(); disc.n_elements()], opts, None).unwrap()
}

/// Right-going wave E_1 = H̃_2 = f(x − ct).
pub fn set_wave_1d(s: &mut EmState, disc: &Discretization, f: impl Fn(f64) -> f64) {
    for (n, x) in disc.ops.coords.iter().enumerate() {
        let v = f(x[0]);
        s.set(n, VAR_E, [0.0, v, 0.0]);
        s.set(n, VAR_H, [0.0, 0.0, v]);
    }
}

pub fn run(solver: &MaxwellSolver, s: &mut EmState, t_end: f64, dt_max: f64) {
    let steps = (t_end / dt_max).ceil() as usize;
    let dt = t_end / steps as f64;
    for _ in 0..steps {
        solver.step(s, dt, None).unwrap();
    }
}

pub fn plane_wave_error_1d(p: usize, h: f64) -> f64 {
    let disc = periodic_line(0.0, 1.0, h, p);
    let solver = vacuum(&disc, MaxwellOptions::default());
    let mut s = solver.zeros();
    set_wave_1d(&mut s, &disc, |x| (TAU * x).sin());
    let t_end = 0.5 / C;
    run(&solver, &mut s, t_end, solver.stable_dt());
    let err: Vec<f64> = (0..disc.n_nodes()).map(|n| s.e(n)[1] - (TAU * (disc.ops.coords[n][0] - C * t_end)).sin()).collect();
    l2_norm(&disc, &err)
}

pub fn plane_wave_error_2d(p: usize, h: f64) -> f64 {
    let disc = periodic_square(h, p);
    let solver = vacuum(&disc, MaxwellOptions::default());
    let mut s = solver.zeros();
    // wave along the diagonal k = 2π(1, 1), E out of plane, H̃ = k̂ × E
    let phase = |x: [f64; 2], t: f64| TAU * (x[0] + x[1]) - TAU * 2f64.sqrt() * C * t;
    let r = 0.5f64.sqrt();
    for (n, x) in disc.ops.coords.iter().enumerate() {
        let v = phase(*x, 0.0).sin();
        s.set(n, VAR_E, [0.0, 0.0, v]);
        s.set(n, VAR_H, [r * v, -r * v, 0.0]);
    }
    let t_end = 0.25 / C;
    run(&solver, &mut s, t_end, solver.stable_dt());
    let err: Vec<f64> = (0..disc.n_nodes()).map(|n| s.e(n)[2] - phase(disc.ops.coords[n], t_end).sin()).collect();
    l2_norm(&disc, &err)
}

/// Runs a downward pulse onto a half-space below z = 0 and returns the
/// complex reflection coefficient at `f0` from the scattered field above
/// the injection plane.
pub fn reflection(lower: Medium, lower_depth: f64, h_lower: f64, f0_thz: f64, width: f64, t_end: f64) -> Complex64 {
    let (z_inj, z_probe, top) = (1.0, 2.0, 2.5);
    let m = build_structured(
        &StructuredSpec::interval(-lower_depth, top, 0.05)
            .with_layers(vec![
                Layer { thickness: lower_depth, region: Region::Metal, h: h_lower },
                Layer { thickness: top, region: Region::Vacuum, h: 0.05 },
            ])
            .with_tags([BoundaryTag::ZBottom, BoundaryTag::ZTop, BoundaryTag::YMin, BoundaryTag::YMax]),
    )
    .unwrap();
    let disc = Discretization::new(m, 4, vec![]).unwrap();
    let media: Vec<Medium> = disc.mesh.regions().iter().map(|r| if *r == Region::Metal { lower } else { Medium::vacuum() }).collect();
    let pump = PumpSpec {
        waveform: Waveform::Pulse { f0_thz, width_ps: width, delay_ps: 3.0 * width },
        amplitude: 1.0,
        z_inject: z_inj,
        polarization: [0.0, 1.0, 0.0],
    };
    let solver = MaxwellSolver::new(&disc, media, MaxwellOptions::default(), Some(pump)).unwrap();
    let probe = solver.nearest_node([z_probe, 0.0]);
    let zp = disc.ops.coords[probe][0];
    let mut s = solver.zeros();
    let steps = (t_end / solver.stable_dt()).ceil() as usize;
    let dt = t_end / steps as f64;
    let w = TAU * f0_thz;
    let (mut refl, mut inc) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for _ in 0..steps {
        solver.step(&mut s, dt, None).unwrap();
        let ph = Complex64::from_polar(dt, w * s.t);
        refl += ph * s.e(probe)[1];
        inc += ph * pump.signal(s.t);
    }
    let delay = (z_inj + zp) / C;
    refl / inc * Complex64::from_polar(1.0, -w * delay)
}

pub fn fresnel(eps: Complex64) -> Complex64 {
    let n = eps.sqrt();
    (1.0 - n) / (1.0 + n)
}

/// Largest relative energy increase between consecutive upwind steps of a
/// Gaussian pulse on a periodic line.
pub fn energy_max_increase(steps: usize) -> f64 {
    let disc = periodic_line(0.0, 1.0, 0.1, 3);
    let solver = vacuum(&disc, MaxwellOptions::default());
    let mut s = solver.zeros();
    set_wave_1d(&mut s, &disc, |x| (-((x - 0.5) / 0.08).powi(2)).exp());
    let dt = solver.stable_dt();
    let mut last = solver.energy(&s);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        solver.step(&mut s, dt, None).unwrap();
        let e = solver.energy(&s);
        worst = worst.max((e - last) / last);
        last = e;
    }
    worst
}

/// Temporal order of LSRK(5,4) on a p = 6 plane wave against a reference
/// with 16 times smaller steps.
pub fn lsrk_pde_slope() -> f64 {
    let disc = periodic_line(0.0, 1.0, 0.25, 6);
    let solver = vacuum(&disc, MaxwellOptions::default());
    let mut init = solver.zeros();
    set_wave_1d(&mut init, &disc, |x| (TAU * x).sin());
    let t_end = 0.25 / C;
    let solve = |steps: usize| {
        let mut s = init.clone();
        let dt = t_end / steps as f64;
        for _ in 0..steps {
            solver.step(&mut s, dt, None).unwrap();
        }
        s
    };
    let base = (t_end / solver.stable_dt()).ceil() as usize;
    let reference = solve(base * 16);
    let err = |s: &EmState| s.y.iter().zip(&reference.y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    (err(&solve(base)) / err(&solve(base * 2))).log2()
}

/// Reflected over incident energy [dB] of a pulse hitting a 10-element PML
/// backed by PEC.
pub fn pml_reflection_db() -> f64 {
    let m = build_structured(
        &StructuredSpec::interval(-1.0, 10.0, 0.1).with_tags([BoundaryTag::ZBottom, BoundaryTag::ZTop, BoundaryTag::YMin, BoundaryTag::YMax]),
    )
    .unwrap();
    let disc = Discretization::new(m, 4, vec![]).unwrap();
    let width = 0.004;
    let pump = PumpSpec {
        waveform: Waveform::Pulse { f0_thz: 375.0, width_ps: width, delay_ps: 3.0 * width },
        amplitude: 1.0,
        z_inject: 9.0,
        polarization: [0.0, 1.0, 0.0],
    };
    let opts = MaxwellOptions {
        pml: PmlSpec { bottom: 1.0, ..Default::default() },
        pec: vec![BoundaryTag::ZBottom],
        ..Default::default()
    };
    let solver = MaxwellSolver::new(&disc, vec![Medium::vacuum(); disc.n_elements()], opts, Some(pump)).unwrap();
    assert!(solver.sigma().iter().any(|s| *s > 0.0));
    let mut s = solver.zeros();
    let dt = solver.stable_dt();
    let (mut incident, mut reflected) = (0.0f64, 0.0f64);
    while s.t < 0.07 {
        solver.step(&mut s, dt, None).unwrap();
        let e = solver.interior_energy(&s);
        if (0.028..0.032).contains(&s.t) {
            incident = incident.max(e);
        }
        if s.t > 0.06 {
            reflected = reflected.max(e);
        }
    }
    assert!(incident > 0.0);
    10.0 * (reflected / incident).log10()
}
