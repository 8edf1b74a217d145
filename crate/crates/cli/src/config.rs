//! Flat `section.key = value` run configuration.

use std::fmt;
use std::path::PathBuf;

use unitcell_dg::coupler::{DriveSampling, ExchangePolicy};
use unitcell_dg::dd_td::MobilityMode;
use unitcell_dg::mesh::{BoundaryTag, Region};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.msg)
        } else {
            write!(f, "`{}`: {}", self.key, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Electrode potential: a fixed voltage or the bias voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Volts(f64),
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PumpKind {
    None,
    TwoTone,
    Pulse,
}

/// A time step given explicitly or derived from the stability limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Auto,
    Ps(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh_file: Option<PathBuf>,
    pub dim: usize,
    pub order: usize,
    pub h_um: f64,
    /// Stack from bottom to top.
    pub layers: Vec<(Region, f64)>,
    pub periodic_x: bool,

    pub v_bias: f64,
    pub w_sd_um: f64,
    pub w_x_um: f64,
    pub w_y_um: f64,
    pub electrodes: Vec<(BoundaryTag, Potential)>,
    pub doping_cm3: f64,
    pub material_preset: String,
    pub eta: f64,
    pub field_dependent_mobility: bool,
    pub transient_mobility: MobilityMode,

    pub gummel_tol: f64,
    pub gummel_max_iter: usize,
    pub gummel_damping: f64,
    pub gummel_pseudo_dt_ps: f64,
    pub linear_tol: f64,
    pub linear_restart: usize,
    pub linear_max_iter: usize,
    pub linear_reuse: bool,

    pub cfl: f64,
    pub flux_alpha: f64,
    pub pml_top_um: f64,
    pub pml_bottom_um: f64,
    pub pml_reflection: f64,
    pub pml_grading: f64,
    pub pec: Vec<BoundaryTag>,

    pub pump: PumpKind,
    pub f1_thz: f64,
    pub f2_thz: f64,
    pub amplitude_v_per_m: f64,
    pub z_inject_um: f64,
    pub ramp_ps: Step,
    pub pulse_width_ps: f64,
    pub pulse_delay_ps: f64,

    pub clamp_negative: bool,
    pub duration_ps: f64,
    pub dt_em: Step,
    pub dt_dd: Step,
    pub dd_cfl: f64,
    pub policy: ExchangePolicy,
    pub sampling: DriveSampling,
    pub snapshot_stride: usize,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh_file: None,
            dim: 1,
            order: 2,
            h_um: 0.05,
            layers: vec![(Region::Semiconductor, 1.0)],
            periodic_x: false,
            v_bias: 0.0,
            w_sd_um: 10.0,
            w_x_um: 1.0,
            w_y_um: 1.0,
            electrodes: Vec::new(),
            doping_cm3: 1.3e16,
            material_preset: "ltgaas-paper".into(),
            eta: 1.0,
            field_dependent_mobility: true,
            transient_mobility: MobilityMode::Instantaneous,
            gummel_tol: 1e-5,
            gummel_max_iter: 300,
            gummel_damping: 1.0,
            gummel_pseudo_dt_ps: 1.0,
            linear_tol: 1e-10,
            linear_restart: 100,
            linear_max_iter: 5000,
            linear_reuse: true,
            cfl: 0.5,
            flux_alpha: 1.0,
            pml_top_um: 0.0,
            pml_bottom_um: 0.0,
            pml_reflection: 1e-6,
            pml_grading: 3.0,
            pec: Vec::new(),
            pump: PumpKind::None,
            f1_thz: 374.5,
            f2_thz: 375.5,
            amplitude_v_per_m: 1e6,
            z_inject_um: 0.0,
            ramp_ps: Step::Auto,
            pulse_width_ps: 0.01,
            pulse_delay_ps: 0.03,
            clamp_negative: true,
            duration_ps: 1.0,
            dt_em: Step::Auto,
            dt_dd: Step::Auto,
            dd_cfl: 0.3,
            policy: ExchangePolicy::Frozen,
            sampling: DriveSampling::Average,
            snapshot_stride: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| err(key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(err(key, "must be finite"));
    }
    Ok(x)
}

fn int(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| err(key, format!("expected a non-negative integer, got `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(key, format!("expected true or false, got `{v}`"))),
    }
}

fn step(key: &str, v: &str) -> Result<Step, ConfigError> {
    if v == "auto" {
        Ok(Step::Auto)
    } else {
        Ok(Step::Ps(num(key, v)?))
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn show_step(s: Step) -> String {
    match s {
        Step::Auto => "auto".into(),
        Step::Ps(x) => x.to_string(),
    }
}

fn show_policy(p: ExchangePolicy) -> &'static str {
    match p {
        ExchangePolicy::Frozen => "frozen",
        ExchangePolicy::Linear => "linear",
    }
}

fn show_mobility(m: MobilityMode) -> &'static str {
    match m {
        MobilityMode::Frozen => "frozen",
        MobilityMode::Instantaneous => "instantaneous",
    }
}

/// Splits config text into (key, value, line) entries.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("", format!("line {}: expected `section.key = value`", i + 1)))?;
        let k = k.trim();
        if !k.contains('.') {
            return Err(err(k, format!("line {}: keys have the form section.key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "mesh.file" => self.mesh_file = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "mesh.dim" => self.dim = int(key, v)?,
            "mesh.order" => self.order = int(key, v)?,
            "mesh.h_um" => self.h_um = num(key, v)?,
            "mesh.layers" => {
                self.layers = list(v)
                    .map(|item| {
                        let (r, t) = item.split_once(':').ok_or_else(|| err(key, format!("expected region:thickness, got `{item}`")))?;
                        let region: Region = r.trim().parse().map_err(|e: String| err(key, e))?;
                        Ok((region, num(key, t.trim())?))
                    })
                    .collect::<Result<_, ConfigError>>()?
            }
            "mesh.periodic_x" => self.periodic_x = boolean(key, v)?,
            "device.v_bias" => self.v_bias = num(key, v)?,
            "device.w_sd_um" => self.w_sd_um = num(key, v)?,
            "device.w_x_um" => self.w_x_um = num(key, v)?,
            "device.w_y_um" => self.w_y_um = num(key, v)?,
            "device.electrodes" => {
                self.electrodes = list(v)
                    .map(|item| {
                        let (t, p) = item.split_once(':').ok_or_else(|| err(key, format!("expected tag:volts or tag:bias, got `{item}`")))?;
                        let tag: BoundaryTag = t.trim().parse().map_err(|e: String| err(key, e))?;
                        let pot = match p.trim() {
                            "bias" => Potential::Bias,
                            s => Potential::Volts(num(key, s)?),
                        };
                        Ok((tag, pot))
                    })
                    .collect::<Result<_, ConfigError>>()?
            }
            "device.doping_cm3" => self.doping_cm3 = num(key, v)?,
            "materials.preset" => self.material_preset = v.to_string(),
            "materials.eta" => self.eta = num(key, v)?,
            "mobility.field_dependent" => self.field_dependent_mobility = boolean(key, v)?,
            "mobility.transient" => self.transient_mobility = v.parse().map_err(|e: String| err(key, e))?,
            "gummel.tol" => self.gummel_tol = num(key, v)?,
            "gummel.max_iter" => self.gummel_max_iter = int(key, v)?,
            "gummel.damping" => self.gummel_damping = num(key, v)?,
            "gummel.pseudo_dt_ps" => self.gummel_pseudo_dt_ps = num(key, v)?,
            "linear.tol" => self.linear_tol = num(key, v)?,
            "linear.restart" => self.linear_restart = int(key, v)?,
            "linear.max_iter" => self.linear_max_iter = int(key, v)?,
            "linear.reuse_preconditioner" => self.linear_reuse = boolean(key, v)?,
            "maxwell.cfl" => self.cfl = num(key, v)?,
            "maxwell.flux_alpha" => self.flux_alpha = num(key, v)?,
            "maxwell.pml_top_um" => self.pml_top_um = num(key, v)?,
            "maxwell.pml_bottom_um" => self.pml_bottom_um = num(key, v)?,
            "maxwell.pml_reflection" => self.pml_reflection = num(key, v)?,
            "maxwell.pml_grading" => self.pml_grading = num(key, v)?,
            "maxwell.pec" => self.pec = list(v).map(|t| t.parse().map_err(|e: String| err(key, e))).collect::<Result<_, _>>()?,
            "pump.kind" => {
                self.pump = match v {
                    "none" => PumpKind::None,
                    "two_tone" => PumpKind::TwoTone,
                    "pulse" => PumpKind::Pulse,
                    _ => return Err(err(key, format!("expected none, two_tone or pulse, got `{v}`"))),
                }
            }
            "pump.f1_thz" => self.f1_thz = num(key, v)?,
            "pump.f2_thz" => self.f2_thz = num(key, v)?,
            "pump.amplitude_v_per_m" => self.amplitude_v_per_m = num(key, v)?,
            "pump.z_inject_um" => self.z_inject_um = num(key, v)?,
            "pump.ramp_ps" => self.ramp_ps = step(key, v)?,
            "pump.width_ps" => self.pulse_width_ps = num(key, v)?,
            "pump.delay_ps" => self.pulse_delay_ps = num(key, v)?,
            "transient.clamp_negative" => self.clamp_negative = boolean(key, v)?,
            "cosim.duration_ps" => self.duration_ps = num(key, v)?,
            "cosim.dt_em_ps" => self.dt_em = step(key, v)?,
            "cosim.dt_dd_ps" => self.dt_dd = step(key, v)?,
            "cosim.dd_cfl" => self.dd_cfl = num(key, v)?,
            "cosim.policy" => self.policy = v.parse().map_err(|e: String| err(key, e))?,
            "cosim.sampling" => self.sampling = v.parse().map_err(|e: String| err(key, e))?,
            "cosim.snapshot_stride" => self.snapshot_stride = int(key, v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(err(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies config text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v, line) in parse_entries(text)? {
            self.set(&k, &v).map_err(|e| err(&e.key, format!("{} (line {line})", e.msg)))?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key with its effective value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let tags = |v: &[BoundaryTag]| v.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ");
        vec![
            ("mesh.file", self.mesh_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("mesh.dim", self.dim.to_string()),
            ("mesh.order", self.order.to_string()),
            ("mesh.h_um", self.h_um.to_string()),
            ("mesh.layers", self.layers.iter().map(|(r, t)| format!("{}:{t}", r.name())).collect::<Vec<_>>().join(", ")),
            ("mesh.periodic_x", self.periodic_x.to_string()),
            ("device.v_bias", self.v_bias.to_string()),
            ("device.w_sd_um", self.w_sd_um.to_string()),
            ("device.w_x_um", self.w_x_um.to_string()),
            ("device.w_y_um", self.w_y_um.to_string()),
            (
                "device.electrodes",
                self.electrodes
                    .iter()
                    .map(|(t, p)| match p {
                        Potential::Bias => format!("{t}:bias"),
                        Potential::Volts(v) => format!("{t}:{v}"),
                    })
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("device.doping_cm3", self.doping_cm3.to_string()),
            ("materials.preset", self.material_preset.clone()),
            ("materials.eta", self.eta.to_string()),
            ("mobility.field_dependent", self.field_dependent_mobility.to_string()),
            ("mobility.transient", show_mobility(self.transient_mobility).into()),
            ("gummel.tol", self.gummel_tol.to_string()),
            ("gummel.max_iter", self.gummel_max_iter.to_string()),
            ("gummel.damping", self.gummel_damping.to_string()),
            ("gummel.pseudo_dt_ps", self.gummel_pseudo_dt_ps.to_string()),
            ("linear.tol", self.linear_tol.to_string()),
            ("linear.restart", self.linear_restart.to_string()),
            ("linear.max_iter", self.linear_max_iter.to_string()),
            ("linear.reuse_preconditioner", self.linear_reuse.to_string()),
            ("maxwell.cfl", self.cfl.to_string()),
            ("maxwell.flux_alpha", self.flux_alpha.to_string()),
            ("maxwell.pml_top_um", self.pml_top_um.to_string()),
            ("maxwell.pml_bottom_um", self.pml_bottom_um.to_string()),
            ("maxwell.pml_reflection", self.pml_reflection.to_string()),
            ("maxwell.pml_grading", self.pml_grading.to_string()),
            ("maxwell.pec", tags(&self.pec)),
            (
                "pump.kind",
                match self.pump {
                    PumpKind::None => "none",
                    PumpKind::TwoTone => "two_tone",
                    PumpKind::Pulse => "pulse",
                }
                .into(),
            ),
            ("pump.f1_thz", self.f1_thz.to_string()),
            ("pump.f2_thz", self.f2_thz.to_string()),
            ("pump.amplitude_v_per_m", self.amplitude_v_per_m.to_string()),
            ("pump.z_inject_um", self.z_inject_um.to_string()),
            ("pump.ramp_ps", show_step(self.ramp_ps)),
            ("pump.width_ps", self.pulse_width_ps.to_string()),
            ("pump.delay_ps", self.pulse_delay_ps.to_string()),
            ("transient.clamp_negative", self.clamp_negative.to_string()),
            ("cosim.duration_ps", self.duration_ps.to_string()),
            ("cosim.dt_em_ps", show_step(self.dt_em)),
            ("cosim.dt_dd_ps", show_step(self.dt_dd)),
            ("cosim.dd_cfl", self.dd_cfl.to_string()),
            ("cosim.policy", show_policy(self.policy).into()),
            (
                "cosim.sampling",
                match self.sampling {
                    DriveSampling::Midpoint => "midpoint",
                    DriveSampling::Average => "average",
                }
                .into(),
            ),
            ("cosim.snapshot_stride", self.snapshot_stride.to_string()),
            ("output.dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let sec = k.split('.').next().unwrap();
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                section = sec;
            }
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, x: f64| if x > 0.0 { Ok(()) } else { Err(err(key, format!("must be positive, got {x}"))) };
        if let Some(p) = &self.mesh_file {
            if !p.is_file() {
                return Err(err("mesh.file", format!("{} does not exist", p.display())));
            }
        } else {
            if !(1..=2).contains(&self.dim) {
                return Err(err("mesh.dim", "must be 1 or 2"));
            }
            positive("mesh.h_um", self.h_um)?;
            if self.layers.is_empty() {
                return Err(err("mesh.layers", "at least one layer is required"));
            }
            for &(_, t) in &self.layers {
                positive("mesh.layers", t)?;
            }
            if !self.layers.iter().any(|(r, _)| *r == Region::Semiconductor) {
                return Err(err("mesh.layers", "no semiconductor layer"));
            }
        }
        if !(1..=8).contains(&self.order) {
            return Err(err("mesh.order", "must be between 1 and 8"));
        }
        positive("device.w_sd_um", self.w_sd_um)?;
        positive("device.w_x_um", self.w_x_um)?;
        positive("device.w_y_um", self.w_y_um)?;
        positive("device.doping_cm3", self.doping_cm3)?;
        if self.material_preset != "ltgaas-paper" {
            return Err(err("materials.preset", format!("unknown preset `{}` (ltgaas-paper)", self.material_preset)));
        }
        if !(self.eta >= 0.0) {
            return Err(err("materials.eta", "must be non-negative"));
        }
        if !(self.gummel_tol > 0.0 && self.gummel_tol < 1.0) {
            return Err(err("gummel.tol", format!("must lie in (0, 1), got {}", self.gummel_tol)));
        }
        if self.gummel_max_iter == 0 {
            return Err(err("gummel.max_iter", "must be at least 1"));
        }
        if !(self.gummel_damping > 0.0 && self.gummel_damping <= 1.0) {
            return Err(err("gummel.damping", "must lie in (0, 1]"));
        }
        positive("gummel.pseudo_dt_ps", self.gummel_pseudo_dt_ps)?;
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return Err(err("linear.tol", "must lie in (0, 1)"));
        }
        if self.linear_restart == 0 {
            return Err(err("linear.restart", "must be at least 1"));
        }
        positive("maxwell.cfl", self.cfl)?;
        if !(0.0..=1.0).contains(&self.flux_alpha) {
            return Err(err("maxwell.flux_alpha", "must lie in [0, 1]"));
        }
        if self.pml_top_um < 0.0 || self.pml_bottom_um < 0.0 {
            return Err(err("maxwell.pml_top_um", "PML thickness must be non-negative"));
        }
        if !(self.pml_reflection > 0.0 && self.pml_reflection < 1.0) {
            return Err(err("maxwell.pml_reflection", "must lie in (0, 1)"));
        }
        if self.pump == PumpKind::TwoTone && self.f1_thz == self.f2_thz {
            return Err(err("pump.f2_thz", "the two tones must differ"));
        }
        positive("cosim.duration_ps", self.duration_ps)?;
        positive("cosim.dd_cfl", self.dd_cfl)?;
        if let Step::Ps(x) = self.dt_em {
            positive("cosim.dt_em_ps", x)?;
        }
        if let Step::Ps(x) = self.dt_dd {
            positive("cosim.dt_dd_ps", x)?;
        }
        if let (Step::Ps(a), Step::Ps(b)) = (self.dt_em, self.dt_dd) {
            let r = b / a;
            if r < 1.0 || (r - r.round()).abs() > 1e-9 * r {
                return Err(err("cosim.dt_dd_ps", format!("dt_dd / dt_em = {r} is not a positive integer")));
            }
        }
        Ok(())
    }

    /// φ_drop = w_x V_bias / w_sd across a periodic unit cell.
    pub fn phi_drop(&self) -> f64 {
        if self.periodic_x && self.dim == 2 {
            self.w_x_um * self.v_bias / self.w_sd_um
        } else {
            0.0
        }
    }
}
