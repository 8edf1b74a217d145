#![allow(dead_code)]

pub mod dd;
pub mod maxwell;
pub mod poisson;

use std::collections::BTreeMap;

use unitcell_dg::coupler::{CoSim, CoSimConfig, DriveSampling, ExchangePolicy};
use unitcell_dg::dd_steady::{gummel_solve, Device, GummelOptions, SteadyState};
use unitcell_dg::dd_td::TransientOptions;
use unitcell_dg::materials::ltgaas_paper;
use unitcell_dg::maxwell_td::{x_component, MaxwellOptions, PmlSpec, PumpSpec};
use unitcell_dg::mesh::{build_structured, BoundaryTag, Layer, Region, StructuredSpec};

/// Vertical 1D stack: substrate with a 10-element PML, 0.5 µm LT-GaAs,
/// vacuum with the injection plane and a 10-element PML on top.
pub struct Slab {
    pub dev: Device,
    pub steady: SteadyState,
    pub h: f64,
    pub z_inject: f64,
}

pub fn slab(order: usize, h: f64) -> Slab {
    let pml = 10.0 * h;
    let layers = vec![
        Layer { thickness: pml + 0.2, region: Region::Dielectric, h },
        Layer { thickness: 0.5, region: Region::Semiconductor, h },
        Layer { thickness: 0.4 + pml, region: Region::Vacuum, h },
    ];
    let total: f64 = layers.iter().map(|l| l.thickness).sum();
    let spec = StructuredSpec::interval(0.0, total, h)
        .with_layers(layers)
        .with_tags([BoundaryTag::ZBottom, BoundaryTag::ZTop, BoundaryTag::YMin, BoundaryTag::YMax]);
    let mesh = build_structured(&spec).unwrap();
    let dev = Device::new(mesh, order, &[], ltgaas_paper(), 0.0, BTreeMap::new()).unwrap();
    let steady = gummel_solve(&dev, &GummelOptions::default(), None).unwrap();
    Slab {
        dev,
        steady,
        h,
        z_inject: pml + 0.2 + 0.5 + 0.2,
    }
}

pub fn maxwell_opts(s: &Slab) -> MaxwellOptions {
    MaxwellOptions {
        pml: PmlSpec {
            top: 10.0 * s.h,
            bottom: 10.0 * s.h,
            ..PmlSpec::default()
        },
        ..MaxwellOptions::default()
    }
}

/// Uniform lateral bias [V/µm] along x.
pub fn lateral_bias(v_per_um: f64) -> [f64; 3] {
    let mut b = [0.0; 3];
    b[x_component(1)] = v_per_um;
    b
}

pub fn two_tone(s: &Slab, amplitude: f64) -> PumpSpec {
    PumpSpec::two_tone(374.5, 375.5, amplitude, s.z_inject, 1)
}

/// Co-simulation with the largest integer ratio honoring the DD limit.
pub fn cosim<'a>(s: &'a Slab, pump: Option<PumpSpec>, bias: [f64; 3], duration: f64) -> (CoSim<'a>, CoSimConfig) {
    let sim = CoSim::new(&s.dev, &s.steady, pump, maxwell_opts(s), TransientOptions::default(), bias).unwrap();
    let dt_em = sim.maxwell.stable_dt();
    let dt_dd_max = sim.dd.stable_dt(&sim.e_static, 0.3);
    let r = ((dt_dd_max / dt_em).floor() as usize).max(1);
    let cfg = CoSimConfig {
        duration,
        dt_em,
        dt_dd: r as f64 * dt_em,
        policy: ExchangePolicy::Frozen,
        sampling: DriveSampling::default(),
        snapshot_stride: 0,
    };
    (sim, cfg)
}

/// Observed orders log2(e_k / e_{k+1}) of errors on meshes halved in turn.
pub fn rates(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
