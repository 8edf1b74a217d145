//! Command implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;
use unitcell_dg::coupler::{CoSim, CoSimConfig, CouplerError};
use unitcell_dg::dd_steady::{gummel_solve, DDError, Device, GummelOptions, SteadyState};
use unitcell_dg::dd_td::{CarrierState, TransientOptions};
use unitcell_dg::materials::{ltgaas_paper, MaterialParams};
use unitcell_dg::maxwell_td::{x_component, EmState, MaxwellOptions, PmlSpec, PumpSpec, Waveform, VAR_E, VAR_H};
use unitcell_dg::mesh::{build_structured, Axis, BoundaryTag, Layer, Mesh, StructuredSpec};
use unitcell_dg::vtk::{write_vtk, Field};

use crate::config::{ConfigError, Potential, PumpKind, RunConfig, Step};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_NAN: i32 = 3;

/// A failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Failure {
        Failure { code: EXIT_CONFIG, msg: msg.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(format!("I/O error: {e}"))
    }
}

pub fn build_mesh(cfg: &RunConfig) -> Result<Mesh, Failure> {
    if let Some(p) = &cfg.mesh_file {
        let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("`mesh.file`: {}: {e}", p.display())))?;
        return Mesh::parse(&text).map_err(|e| Failure::config(format!("`mesh.file`: {e}")));
    }
    let layers: Vec<Layer> = cfg.layers.iter().map(|&(region, thickness)| Layer { thickness, region, h: cfg.h_um }).collect();
    let total: f64 = cfg.layers.iter().map(|l| l.1).sum();
    // the last mesh axis is the vertical one
    let spec = if cfg.dim == 1 {
        StructuredSpec::interval(0.0, total, cfg.h_um).with_tags([BoundaryTag::ZBottom, BoundaryTag::ZTop, BoundaryTag::YMin, BoundaryTag::YMax])
    } else {
        StructuredSpec::rectangle(0.0, cfg.w_x_um, 0.0, total, cfg.h_um).with_tags([BoundaryTag::XMin, BoundaryTag::XMax, BoundaryTag::ZBottom, BoundaryTag::ZTop])
    };
    build_structured(&spec.with_layers(layers)).map_err(|e| Failure::config(format!("`mesh.layers`: {e}")))
}

pub fn materials(cfg: &RunConfig) -> MaterialParams {
    let mut m = ltgaas_paper();
    m.carriers.doping = cfg.doping_cm3;
    m.carriers.generation.eta = cfg.eta;
    m
}

pub fn build_device(cfg: &RunConfig) -> Result<Device, Failure> {
    let mesh = build_mesh(cfg)?;
    let periodic = if cfg.periodic_x { vec![Axis::X] } else { vec![] };
    let electrodes: BTreeMap<BoundaryTag, f64> = cfg
        .electrodes
        .iter()
        .map(|&(t, p)| {
            (
                t,
                match p {
                    Potential::Bias => cfg.v_bias,
                    Potential::Volts(v) => v,
                },
            )
        })
        .collect();
    Device::new(mesh, cfg.order, &periodic, materials(cfg), cfg.phi_drop(), electrodes).map_err(|e| Failure::config(format!("device: {e}")))
}

pub fn gummel_options(cfg: &RunConfig) -> GummelOptions {
    GummelOptions {
        tol: cfg.gummel_tol,
        max_iter: cfg.gummel_max_iter,
        linear_tol: cfg.linear_tol,
        restart: cfg.linear_restart,
        linear_max_iter: cfg.linear_max_iter,
        damping: cfg.gummel_damping,
        pseudo_dt: cfg.gummel_pseudo_dt_ps,
        field_dependent_mobility: cfg.field_dependent_mobility,
        reuse_preconditioner: cfg.linear_reuse,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::config(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn steady_snapshots(dev: &Device, st: &SteadyState, dir: &Path) -> Result<(), Failure> {
    let e: Vec<[f64; 3]> = (0..dev.disc.n_nodes())
        .map(|n| {
            let mut v = [0.0; 3];
            for (a, comp) in st.e.iter().enumerate() {
                v[a] = comp[n];
            }
            v
        })
        .collect();
    let mut w = create(&dir.join("steady_potential.vtk"))?;
    write_vtk(&mut w, &dev.disc, "steady potential [V], field [V/um]", &[Field::Scalar("phi", &st.phi), Field::Vector("E", &e)])?;
    let mut w = create(&dir.join("steady_carriers.vtk"))?;
    write_vtk(&mut w, &dev.semi, "steady carriers [cm^-3]", &[Field::Scalar("n_e", &st.n_e), Field::Scalar("n_h", &st.n_h)])?;
    Ok(())
}

pub fn cmd_steady(cfg: &RunConfig) -> Result<i32, Failure> {
    let dev = build_device(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("effective.cfg"), cfg.dump())?;
    info!("steady state: {} elements, {} semiconductor elements, phi_drop = {} V", dev.disc.n_elements(), dev.semi.n_elements(), dev.phi_drop);
    let (st, converged) = match gummel_solve(&dev, &gummel_options(cfg), None) {
        Ok(st) => (st, true),
        Err(DDError::NotConverged { state, iterations, update }) => {
            warn!("Gummel iteration stopped after {iterations} iterations, last update {update:e}");
            (*state, false)
        }
        Err(e) => return Err(Failure::config(format!("steady solve failed: {e}"))),
    };
    let mut w = create(&cfg.out_dir.join("gummel_history.csv"))?;
    st.write_history_csv(&mut w)?;
    let mut w = create(&cfg.out_dir.join("steady.json"))?;
    serde_json::to_writer(&mut w, &st).map_err(|e| Failure::config(e.to_string()))?;
    drop(w);
    steady_snapshots(&dev, &st, &cfg.out_dir)?;
    write_json(
        &cfg.out_dir.join("summary.json"),
        &json!({
            "converged": converged,
            "iterations": st.iterations,
            "phi_drop": st.phi_drop,
            "v_bias": cfg.v_bias,
            "clamped": st.clamped,
            "elements": dev.disc.n_elements(),
            "order": cfg.order,
        }),
    )?;
    println!("steady: converged={converged} iterations={} phi_drop={}", st.iterations, st.phi_drop);
    Ok(if converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn pump_spec(cfg: &RunConfig) -> Option<PumpSpec> {
    let dim = cfg.dim;
    match cfg.pump {
        PumpKind::None => None,
        PumpKind::TwoTone => {
            let mut p = PumpSpec::two_tone(cfg.f1_thz, cfg.f2_thz, cfg.amplitude_v_per_m, cfg.z_inject_um, dim);
            if let (Step::Ps(r), Waveform::TwoTone { f1_thz, f2_thz, .. }) = (cfg.ramp_ps, p.waveform) {
                p.waveform = Waveform::TwoTone { f1_thz, f2_thz, ramp_ps: r };
            }
            Some(p)
        }
        PumpKind::Pulse => {
            let mut p = PumpSpec::two_tone(cfg.f1_thz, cfg.f2_thz, cfg.amplitude_v_per_m, cfg.z_inject_um, dim);
            p.waveform = Waveform::Pulse {
                f0_thz: 0.5 * (cfg.f1_thz + cfg.f2_thz),
                width_ps: cfg.pulse_width_ps,
                delay_ps: cfg.pulse_delay_ps,
            };
            Some(p)
        }
    }
}

pub fn maxwell_options(cfg: &RunConfig) -> MaxwellOptions {
    MaxwellOptions {
        alpha: cfg.flux_alpha,
        cfl: cfg.cfl,
        pml: PmlSpec {
            top: cfg.pml_top_um,
            bottom: cfg.pml_bottom_um,
            reflection: cfg.pml_reflection,
            grading: cfg.pml_grading,
            ..PmlSpec::default()
        },
        pec: cfg.pec.clone(),
    }
}

/// Uniform lateral bias field [V/µm] for 1D slabs. In 2D the bias enters
/// through the potential drop of the steady state.
pub fn lateral_bias(cfg: &RunConfig) -> [f64; 3] {
    let mut b = [0.0; 3];
    if cfg.dim == 1 {
        b[x_component(1)] = cfg.v_bias / cfg.w_sd_um;
    }
    b
}

/// Resolves automatic step sizes against the stability limits.
pub fn cosim_config(cfg: &RunConfig, sim: &CoSim) -> Result<CoSimConfig, Failure> {
    let em_max = sim.maxwell.stable_dt();
    let dd_max = sim.dd.stable_dt(&sim.e_static, cfg.dd_cfl);
    let (dt_em, dt_dd) = match (cfg.dt_em, cfg.dt_dd) {
        (Step::Ps(a), Step::Ps(b)) => (a, b),
        (Step::Ps(a), Step::Auto) => (a, a * (dd_max / a).floor().max(1.0)),
        (Step::Auto, Step::Ps(b)) => (b / (b / em_max).ceil(), b),
        (Step::Auto, Step::Auto) => (em_max, em_max * (dd_max / em_max).floor().max(1.0)),
    };
    if dt_em > em_max * (1.0 + 1e-12) {
        warn!("dt_em = {dt_em:e} ps exceeds the Maxwell stability estimate {em_max:e} ps");
    }
    if dt_dd > dd_max * (1.0 + 1e-12) {
        warn!("dt_dd = {dt_dd:e} ps exceeds the drift-diffusion stability estimate {dd_max:e} ps");
    }
    let c = CoSimConfig {
        duration: cfg.duration_ps,
        dt_em,
        dt_dd,
        policy: cfg.policy,
        sampling: cfg.sampling,
        snapshot_stride: cfg.snapshot_stride,
    };
    c.validate().map_err(|e| Failure::config(format!("`cosim.dt_dd_ps`: {e}")))?;
    Ok(c)
}

fn em_snapshot(dev: &Device, em: &EmState, path: &Path) -> Result<(), Failure> {
    let nn = dev.disc.n_nodes();
    let e: Vec<[f64; 3]> = (0..nn).map(|n| em.get(n, VAR_E)).collect();
    let h: Vec<[f64; 3]> = (0..nn).map(|n| em.get(n, VAR_H)).collect();
    let mut w = create(path)?;
    write_vtk(&mut w, &dev.disc, &format!("fields at t = {} ps, E and Z0*H in V/m", em.t), &[Field::Vector("E", &e), Field::Vector("H_scaled", &h)])?;
    Ok(())
}

fn carrier_snapshot(dev: &Device, c: &CarrierState, path: &Path) -> Result<(), Failure> {
    let mut w = create(path)?;
    write_vtk(&mut w, &dev.semi, &format!("carriers at t = {} ps [cm^-3]", c.t), &[Field::Scalar("n_e", &c.n_e), Field::Scalar("n_h", &c.n_h)])?;
    Ok(())
}

pub fn load_steady(path: &Path, dev: &Device) -> Result<SteadyState, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("steady state {}: {e} (run `steady` first)", path.display())))?;
    let st: SteadyState = serde_json::from_str(&text).map_err(|e| Failure::config(format!("steady state {}: {e}", path.display())))?;
    if st.n_e.len() != dev.semi.n_nodes() || st.phi.len() != dev.disc.n_nodes() {
        return Err(Failure::config(format!("steady state {} does not match the configured mesh", path.display())));
    }
    Ok(st)
}

pub fn cmd_transient(cfg: &RunConfig, steady_path: Option<PathBuf>) -> Result<i32, Failure> {
    let dev = build_device(cfg)?;
    let steady_path = steady_path.unwrap_or_else(|| cfg.out_dir.join("steady.json"));
    let steady = load_steady(&steady_path, &dev)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("effective.cfg"), cfg.dump())?;
    let transient = TransientOptions {
        mobility: cfg.transient_mobility,
        field_dependent_mobility: cfg.field_dependent_mobility,
        clamp_negative: cfg.clamp_negative,
    };
    let pump = pump_spec(cfg);
    let sim = CoSim::new(&dev, &steady, pump, maxwell_options(cfg), transient, lateral_bias(cfg)).map_err(|e| Failure::config(format!("transient setup: {e}")))?;
    let co = cosim_config(cfg, &sim)?;
    let r = co.ratio().map_err(|e| Failure::config(e.to_string()))?;
    info!("transient: dt_em = {:e} ps, dt_dd = {:e} ps (r = {r}), {} macro-steps", co.dt_em, co.dt_dd, co.macro_steps());

    let dir = cfg.out_dir.clone();
    let mut io_error: Option<Failure> = None;
    let mut snap = |step: usize, c: &CarrierState, em: &EmState| -> Result<(), String> {
        let res = em_snapshot(&dev, em, &dir.join(format!("snap_{step:07}_em.vtk"))).and_then(|_| carrier_snapshot(&dev, c, &dir.join(format!("snap_{step:07}_carriers.vtk"))));
        res.map_err(|f| {
            let m = f.msg.clone();
            io_error = Some(f);
            m
        })
    };
    let result = sim.run(&steady, &co, Some(&mut snap));
    let write_series = |ts: &unitcell_dg::coupler::TimeSeries| -> Result<(), Failure> {
        let mut w = create(&cfg.out_dir.join("timeseries.csv"))?;
        ts.write_csv(&mut w)?;
        Ok(())
    };
    let summary = |status: &str, samples: usize, t_end: f64| {
        json!({
            "status": status,
            "samples": samples,
            "t_end_ps": t_end,
            "dt_em_ps": co.dt_em,
            "dt_dd_ps": co.dt_dd,
            "ratio": r,
            "macro_steps": co.macro_steps(),
        })
    };
    match result {
        Ok(ts) => {
            write_series(&ts)?;
            write_json(&cfg.out_dir.join("transient_summary.json"), &summary("ok", ts.len(), *ts.t.last().unwrap()))?;
            println!("transient: {} samples up to t = {} ps", ts.len(), ts.t.last().unwrap());
            Ok(EXIT_OK)
        }
        Err(CouplerError::Aborted { time, reason, series }) => {
            write_series(&series)?;
            write_json(&cfg.out_dir.join("transient_summary.json"), &summary("aborted", series.len(), time))?;
            Err(Failure {
                code: EXIT_NAN,
                msg: format!("aborted at t = {time} ps: {reason}"),
            })
        }
        Err(CouplerError::Output(m)) => Err(io_error.unwrap_or(Failure::config(m))),
        Err(e) => Err(Failure::config(e.to_string())),
    }
}

pub fn cmd_mesh_info(cfg: &RunConfig) -> Result<i32, Failure> {
    let mesh = build_mesh(cfg)?;
    let mut regions: BTreeMap<&str, usize> = BTreeMap::new();
    for r in mesh.regions() {
        *regions.entry(r.name()).or_default() += 1;
    }
    let mut tags: BTreeMap<String, usize> = BTreeMap::new();
    for t in BoundaryTag::ALL {
        let n = mesh.faces_with_tag(t).len();
        if n > 0 {
            tags.insert(t.to_string(), n);
        }
    }
    let (lo, hi) = mesh.bounds();
    let info = json!({
        "dim": mesh.dim(),
        "vertices": mesh.n_vertices(),
        "elements": mesh.n_elements(),
        "min_edge_um": mesh.min_edge(),
        "max_edge_um": mesh.max_edge(),
        "volume": mesh.total_volume(),
        "bounds_um": [lo, hi],
        "regions": regions,
        "boundary_faces": tags,
    });
    println!("{}", serde_json::to_string_pretty(&info).unwrap());
    Ok(EXIT_OK)
}
