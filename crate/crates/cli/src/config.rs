//! Experiment configuration.
//!
//! Files are TOML; tables and dotted keys are flattened to `section.key`
//! names and applied over the defaults for the selected plant. The
//! resolved configuration is written back as one `key = value` line per
//! setting, which reads back to the same configuration.

use std::fmt::Write as _;
use std::path::Path;

use mampc_core::mampc::HatInit;
use mampc_core::plants::{calibrate_pump_gains, SofcParams, TankParams};
use mampc_core::HorizonConfig;
use nalgebra::DVector;
use toml::Value;

use crate::CliError;

pub const TANK_NOMINAL_INPUT: [f64; 2] = [50.0, 50.0];
pub const TANK_NOMINAL_LEVELS: [f64; 4] = [16.3, 13.7, 6.0, 8.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Tank,
    Sofc,
}

impl PlantKind {
    pub fn name(self) -> &'static str {
        match self {
            PlantKind::Tank => "tank",
            PlantKind::Sofc => "sofc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantKind,
    /// RK4 step of the plant simulator, seconds.
    pub plant_step: f64,
    pub tank: TankParams,
    pub tank_nominal_input: [f64; 2],
    pub tank_nominal_levels: [f64; 4],
    pub sofc: SofcParams,

    pub prbs_order: u32,
    pub prbs_hold: usize,
    pub prbs_low: Vec<f64>,
    pub prbs_high: Vec<f64>,

    pub ident_samples: usize,
    /// Samples at the nominal input before the excitation starts.
    pub ident_settle: usize,
    /// 0 selects the order from the singular values.
    pub ident_order: usize,
    /// 0 uses `2 order + 2`.
    pub ident_block_rows: usize,

    pub horizon: HorizonConfig,

    /// Step at which each reference segment starts (first must be 0).
    pub reference_starts: Vec<usize>,
    /// Per segment, the reference as an offset from the nominal output.
    pub reference_offsets: Vec<Vec<f64>>,

    pub steps: usize,
    pub bootstrap: usize,
    pub sample_time: f64,
    pub seed: u64,
    /// Default artifact directory; `--out` overrides it.
    pub out_dir: String,

    pub threshold: f64,
    pub drop: usize,
}

impl ExperimentConfig {
    pub fn defaults(plant: PlantKind) -> Self {
        match plant {
            PlantKind::Tank => {
                let mut tank = TankParams::uncalibrated();
                tank.pump_gain = calibrate_pump_gains(&tank, TANK_NOMINAL_INPUT, TANK_NOMINAL_LEVELS)
                    .expect("published tank constants calibrate")
                    .gains;
                let mut horizon = HorizonConfig::new(2, 2);
                horizon.u_min = DVector::from_element(2, 0.0);
                horizon.u_max = DVector::from_element(2, 100.0);
                horizon.lambda = 1.0;
                horizon.mu = 10.0;
                ExperimentConfig {
                    plant,
                    plant_step: 1.0,
                    tank,
                    tank_nominal_input: TANK_NOMINAL_INPUT,
                    tank_nominal_levels: TANK_NOMINAL_LEVELS,
                    sofc: SofcParams::default(),
                    prbs_order: 8,
                    prbs_hold: 3,
                    prbs_low: vec![37.5, 37.5],
                    prbs_high: vec![62.5, 62.5],
                    ident_samples: 1530,
                    ident_settle: 100,
                    ident_order: 4,
                    ident_block_rows: 0,
                    horizon,
                    reference_starts: vec![0, 30, 120],
                    reference_offsets: vec![vec![1.0, 1.0], vec![3.0, 3.0], vec![2.0, 2.0]],
                    steps: 250,
                    bootstrap: 15,
                    sample_time: 10.0,
                    seed: 1,
                    out_dir: "out".into(),
                    threshold: 0.1,
                    drop: 15,
                }
            }
            PlantKind::Sofc => {
                let sofc = SofcParams::default();
                let (f, a) = (sofc.nominal_fuel, sofc.nominal_air);
                let mut horizon = HorizonConfig::new(2, 1);
                horizon.u_min = DVector::from_vec(vec![0.5 * f, 0.5 * a]);
                horizon.u_max = DVector::from_vec(vec![1.5 * f, 1.5 * a]);
                horizon.lambda = 1.0;
                horizon.mu = 10.0;
                ExperimentConfig {
                    plant,
                    plant_step: 2e-4,
                    tank: TankParams::nominal(),
                    tank_nominal_input: TANK_NOMINAL_INPUT,
                    tank_nominal_levels: TANK_NOMINAL_LEVELS,
                    sofc,
                    prbs_order: 8,
                    prbs_hold: 3,
                    prbs_low: vec![0.95 * f, 0.9 * a],
                    prbs_high: vec![1.05 * f, 1.1 * a],
                    ident_samples: 1530,
                    ident_settle: 50,
                    ident_order: 4,
                    ident_block_rows: 0,
                    horizon,
                    reference_starts: vec![0, 30, 120],
                    reference_offsets: vec![vec![1.0], vec![3.0], vec![2.0]],
                    steps: 250,
                    bootstrap: 15,
                    sample_time: 0.02,
                    seed: 1,
                    out_dir: "out".into(),
                    threshold: 0.01,
                    drop: 15,
                }
            }
        }
    }

    pub fn inputs(&self) -> usize {
        2
    }

    pub fn outputs(&self) -> usize {
        match self.plant {
            PlantKind::Tank => 2,
            PlantKind::Sofc => 1,
        }
    }

    /// PRBS register seed for input `i`, derived from `seed`.
    pub fn prbs_seed(&self, i: usize) -> u32 {
        let mask = (1u64 << self.prbs_order) - 1;
        let mut z = self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        ((z % mask) + 1) as u32
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &Value::Table(table), &mut flat);
        let plant = match flat.iter().find(|(k, _)| k == "plant.kind") {
            None => PlantKind::Tank,
            Some((_, Value::String(s))) if s == "tank" => PlantKind::Tank,
            Some((_, Value::String(s))) if s == "sofc" => PlantKind::Sofc,
            Some((_, v)) => return Err(CliError::Config(format!("plant.kind must be \"tank\" or \"sofc\", got {v}"))),
        };
        let mut cfg = Self::defaults(plant);
        let gains_given = flat.iter().any(|(k, _)| k == "tank.pump_gain");
        for (k, v) in &flat {
            if k != "plant.kind" {
                cfg.set(k, v)?;
            }
        }
        if plant == PlantKind::Tank && !gains_given {
            let cal = calibrate_pump_gains(&cfg.tank, cfg.tank_nominal_input, cfg.tank_nominal_levels)
                .map_err(|e| CliError::Config(format!("pump gain calibration: {e}")))?;
            cfg.tank.pump_gain = cal.gains;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let (m, l) = (self.inputs(), self.outputs());
        match self.plant {
            PlantKind::Tank => self.tank.validate(),
            PlantKind::Sofc => self.sofc.validate(),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        self.horizon.validate(m, l).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.plant_step > 0.0) || !(self.sample_time > 0.0) {
            return bad("plant.step and run.sample_time must be positive".into());
        }
        if self.prbs_low.len() != m || self.prbs_high.len() != m {
            return bad(format!("prbs.low and prbs.high need {m} entries"));
        }
        if self.prbs_hold == 0 || !(2..=16).contains(&self.prbs_order) {
            return bad("prbs.hold must be >= 1 and prbs.order in 2..=16".into());
        }
        if self.ident_samples == 0 {
            return bad("ident.samples must be positive".into());
        }
        if self.reference_starts.is_empty()
            || self.reference_starts[0] != 0
            || self.reference_starts.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("reference.starts must begin at 0 and increase".into());
        }
        if self.reference_offsets.len() != self.reference_starts.len()
            || self.reference_offsets.iter().any(|o| o.len() != l)
        {
            return bad(format!(
                "reference.offsets needs one {l}-vector per entry of reference.starts"
            ));
        }
        if self.steps == 0 {
            return bad("run.steps must be positive".into());
        }
        if self.bootstrap < self.horizon.n_s {
            return bad(format!("run.bootstrap must be at least horizon.n_s ({})", self.horizon.n_s));
        }
        if !(self.threshold >= 0.0) {
            return bad("metrics.threshold must be non-negative".into());
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<(), CliError> {
        let h = &mut self.horizon;
        match key {
            "plant.step" => self.plant_step = float(key, v)?,
            "tank.area" => self.tank.area = array(key, v)?,
            "tank.outlet" => self.tank.outlet = array(key, v)?,
            "tank.g" => self.tank.g = float(key, v)?,
            "tank.k_c" => self.tank.k_c = float(key, v)?,
            "tank.gamma" => self.tank.gamma = array(key, v)?,
            "tank.pump_gain" => self.tank.pump_gain = array(key, v)?,
            "tank.nominal_input" => self.tank_nominal_input = array(key, v)?,
            "tank.nominal_levels" => self.tank_nominal_levels = array(key, v)?,
            "sofc.n_cells" => self.sofc.n_cells = float(key, v)?,
            "sofc.anode_area" => self.sofc.anode_area = float(key, v)?,
            "sofc.cathode_area" => self.sofc.cathode_area = float(key, v)?,
            "sofc.discharge_coefficient" => self.sofc.discharge_coefficient = float(key, v)?,
            "sofc.temperature" => self.sofc.temperature = float(key, v)?,
            "sofc.limiting_current_density" => self.sofc.limiting_current_density = float(key, v)?,
            "sofc.exchange_current_density" => self.sofc.exchange_current_density = float(key, v)?,
            "sofc.faraday" => self.sofc.faraday = float(key, v)?,
            "sofc.gas_constant" => self.sofc.gas_constant = float(key, v)?,
            "sofc.anode_volume" => self.sofc.anode_volume = float(key, v)?,
            "sofc.cathode_volume" => self.sofc.cathode_volume = float(key, v)?,
            "sofc.cell_area" => self.sofc.cell_area = float(key, v)?,
            "sofc.diameter_ratio" => self.sofc.diameter_ratio = float(key, v)?,
            "sofc.molar_mass" => self.sofc.molar_mass = array(key, v)?,
            "sofc.p_atm" => self.sofc.p_atm = float(key, v)?,
            "sofc.fuel_h2_fraction" => self.sofc.fuel_h2_fraction = float(key, v)?,
            "sofc.air_o2_fraction" => self.sofc.air_o2_fraction = float(key, v)?,
            "sofc.nominal_fuel" => self.sofc.nominal_fuel = float(key, v)?,
            "sofc.nominal_air" => self.sofc.nominal_air = float(key, v)?,
            "sofc.current" => self.sofc.current = float(key, v)?,
            "prbs.order" => self.prbs_order = uint(key, v)? as u32,
            "prbs.hold" => self.prbs_hold = uint(key, v)?,
            "prbs.low" => self.prbs_low = floats(key, v)?,
            "prbs.high" => self.prbs_high = floats(key, v)?,
            "ident.samples" => self.ident_samples = uint(key, v)?,
            "ident.settle" => self.ident_settle = uint(key, v)?,
            "ident.order" => self.ident_order = uint(key, v)?,
            "ident.block_rows" => self.ident_block_rows = uint(key, v)?,
            "horizon.n_p" => h.n_p = uint(key, v)?,
            "horizon.n_c" => h.n_c = uint(key, v)?,
            "horizon.n_s" => h.n_s = uint(key, v)?,
            "horizon.s" => h.s = uint(key, v)?,
            "horizon.lambda" => h.lambda = float(key, v)?,
            "horizon.mu" => h.mu = float(key, v)?,
            "horizon.u_min" => h.u_min = DVector::from_vec(floats(key, v)?),
            "horizon.u_max" => h.u_max = DVector::from_vec(floats(key, v)?),
            "horizon.y_min" => h.y_min = DVector::from_vec(floats(key, v)?),
            "horizon.y_max" => h.y_max = DVector::from_vec(floats(key, v)?),
            "horizon.eps1" => h.eps1 = float(key, v)?,
            "horizon.max_alt_iter" => h.max_alt_iter = uint(key, v)?,
            "horizon.init" => {
                h.init = match v.as_str() {
                    Some("zero") => HatInit::Zero,
                    Some("warm") => HatInit::WarmStart,
                    _ => return Err(CliError::Config(format!("{key} must be \"zero\" or \"warm\", got {v}"))),
                }
            }
            "horizon.exclude_past_differences" => {
                h.exclude_past_differences =
                    v.as_bool().ok_or_else(|| CliError::Config(format!("{key} must be a boolean, got {v}")))?
            }
            "horizon.qp_tol" => h.qp_tol = float(key, v)?,
            "horizon.qp_max_iter" => h.qp_max_iter = uint(key, v)?,
            "reference.starts" => {
                self.reference_starts = array_of(key, v)?.iter().map(|x| uint(key, x)).collect::<Result<_, _>>()?
            }
            "reference.offsets" => {
                self.reference_offsets = array_of(key, v)?.iter().map(|x| floats(key, x)).collect::<Result<_, _>>()?
            }
            "run.steps" => self.steps = uint(key, v)?,
            "run.bootstrap" => self.bootstrap = uint(key, v)?,
            "run.sample_time" => self.sample_time = float(key, v)?,
            "run.seed" => self.seed = uint(key, v)? as u64,
            "run.out_dir" => {
                self.out_dir = v
                    .as_str()
                    .ok_or_else(|| CliError::Config(format!("{key} must be a string, got {v}")))?
                    .to_string()
            }
            "metrics.threshold" => self.threshold = float(key, v)?,
            "metrics.drop" => self.drop = uint(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` lines.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let f = |x: f64| {
            if x.is_nan() {
                "nan".to_string()
            } else if x.is_infinite() {
                if x > 0.0 { "inf".into() } else { "-inf".into() }
            } else {
                format!("{x:?}")
            }
        };
        let fs = |xs: &[f64]| format!("[{}]", xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", "));
        let t = &self.tank;
        let s = &self.sofc;
        let h = &self.horizon;
        line("plant.kind", format!("\"{}\"", self.plant.name()));
        line("plant.step", f(self.plant_step));
        line("tank.area", fs(&t.area));
        line("tank.outlet", fs(&t.outlet));
        line("tank.g", f(t.g));
        line("tank.k_c", f(t.k_c));
        line("tank.gamma", fs(&t.gamma));
        line("tank.pump_gain", fs(&t.pump_gain));
        line("tank.nominal_input", fs(&self.tank_nominal_input));
        line("tank.nominal_levels", fs(&self.tank_nominal_levels));
        line("sofc.n_cells", f(s.n_cells));
        line("sofc.anode_area", f(s.anode_area));
        line("sofc.cathode_area", f(s.cathode_area));
        line("sofc.discharge_coefficient", f(s.discharge_coefficient));
        line("sofc.temperature", f(s.temperature));
        line("sofc.limiting_current_density", f(s.limiting_current_density));
        line("sofc.exchange_current_density", f(s.exchange_current_density));
        line("sofc.faraday", f(s.faraday));
        line("sofc.gas_constant", f(s.gas_constant));
        line("sofc.anode_volume", f(s.anode_volume));
        line("sofc.cathode_volume", f(s.cathode_volume));
        line("sofc.cell_area", f(s.cell_area));
        line("sofc.diameter_ratio", f(s.diameter_ratio));
        line("sofc.molar_mass", fs(&s.molar_mass));
        line("sofc.p_atm", f(s.p_atm));
        line("sofc.fuel_h2_fraction", f(s.fuel_h2_fraction));
        line("sofc.air_o2_fraction", f(s.air_o2_fraction));
        line("sofc.nominal_fuel", f(s.nominal_fuel));
        line("sofc.nominal_air", f(s.nominal_air));
        line("sofc.current", f(s.current));
        line("prbs.order", self.prbs_order.to_string());
        line("prbs.hold", self.prbs_hold.to_string());
        line("prbs.low", fs(&self.prbs_low));
        line("prbs.high", fs(&self.prbs_high));
        line("ident.samples", self.ident_samples.to_string());
        line("ident.settle", self.ident_settle.to_string());
        line("ident.order", self.ident_order.to_string());
        line("ident.block_rows", self.ident_block_rows.to_string());
        line("horizon.n_p", h.n_p.to_string());
        line("horizon.n_c", h.n_c.to_string());
        line("horizon.n_s", h.n_s.to_string());
        line("horizon.s", h.s.to_string());
        line("horizon.lambda", f(h.lambda));
        line("horizon.mu", f(h.mu));
        line("horizon.u_min", fs(h.u_min.as_slice()));
        line("horizon.u_max", fs(h.u_max.as_slice()));
        line("horizon.y_min", fs(h.y_min.as_slice()));
        line("horizon.y_max", fs(h.y_max.as_slice()));
        line("horizon.eps1", f(h.eps1));
        line("horizon.max_alt_iter", h.max_alt_iter.to_string());
        line(
            "horizon.init",
            match h.init {
                HatInit::Zero => "\"zero\"".into(),
                HatInit::WarmStart => "\"warm\"".into(),
            },
        );
        line("horizon.exclude_past_differences", h.exclude_past_differences.to_string());
        line("horizon.qp_tol", f(h.qp_tol));
        line("horizon.qp_max_iter", h.qp_max_iter.to_string());
        line(
            "reference.starts",
            format!("[{}]", self.reference_starts.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")),
        );
        line(
            "reference.offsets",
            format!("[{}]", self.reference_offsets.iter().map(|o| fs(o)).collect::<Vec<_>>().join(", ")),
        );
        line("run.steps", self.steps.to_string());
        line("run.bootstrap", self.bootstrap.to_string());
        line("run.sample_time", f(self.sample_time));
        line("run.seed", self.seed.to_string());
        line("run.out_dir", Value::String(self.out_dir.clone()).to_string());
        line("metrics.threshold", f(self.threshold));
        line("metrics.drop", self.drop.to_string());
        out
    }

    /// Flat pairs for log headers.
    pub fn header(&self) -> Vec<(String, String)> {
        self.to_flat()
            .lines()
            .filter_map(|l| l.split_once(" = ").map(|(k, v)| (format!("config.{k}"), v.to_string())))
            .collect()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn float(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(CliError::Config(format!("{key} must be a number, got {v}"))),
    }
}

fn uint(key: &str, v: &Value) -> Result<usize, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(CliError::Config(format!("{key} must be a non-negative integer, got {v}"))),
    }
}

fn array_of<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>, CliError> {
    v.as_array().ok_or_else(|| CliError::Config(format!("{key} must be an array, got {v}")))
}

fn floats(key: &str, v: &Value) -> Result<Vec<f64>, CliError> {
    array_of(key, v)?.iter().map(|x| float(key, x)).collect()
}

fn array<const N: usize>(key: &str, v: &Value) -> Result<[f64; N], CliError> {
    let xs = floats(key, v)?;
    xs.try_into()
        .map_err(|xs: Vec<f64>| CliError::Config(format!("{key} needs {N} entries, got {}", xs.len())))
}
