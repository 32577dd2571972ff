use nalgebra::{dvector, DVector};

use super::PlantModel;
use crate::error::{Error, Result};

/// Solid oxide fuel cell stack parameters (SI units, pressures in Pa).
#[derive(Debug, Clone, PartialEq)]
pub struct SofcParams {
    pub n_cells: f64,
    /// Anode and cathode outlet areas, m².
    pub anode_area: f64,
    pub cathode_area: f64,
    pub discharge_coefficient: f64,
    /// Stack temperature, K.
    pub temperature: f64,
    /// Limiting and exchange current densities, A/m².
    pub limiting_current_density: f64,
    pub exchange_current_density: f64,
    pub faraday: f64,
    pub gas_constant: f64,
    /// Compartment volumes, m³.
    pub anode_volume: f64,
    pub cathode_volume: f64,
    /// Active cell area, m².
    pub cell_area: f64,
    /// Orifice to manifold diameter ratio `D2/D1`.
    pub diameter_ratio: f64,
    /// Molar masses of H2, H2O, O2, N2 in kg/mol.
    pub molar_mass: [f64; 4],
    pub p_atm: f64,
    /// H2 mole fraction of the fuel feed (rest is H2O).
    pub fuel_h2_fraction: f64,
    /// O2 mole fraction of the air feed (rest is N2).
    pub air_o2_fraction: f64,
    /// Nominal feeds, mol/s, and stack current, A.
    pub nominal_fuel: f64,
    pub nominal_air: f64,
    pub current: f64,
}

impl Default for SofcParams {
    fn default() -> Self {
        SofcParams {
            n_cells: 384.0,
            anode_area: 0.0025,
            cathode_area: 0.0025,
            discharge_coefficient: 0.75,
            temperature: 1273.15,
            limiting_current_density: 1500.0,
            exchange_current_density: 10000.0,
            faraday: 96485.0,
            gas_constant: 8.314,
            anode_volume: 0.01,
            cathode_volume: 0.01,
            cell_area: 0.5,
            diameter_ratio: 0.5,
            molar_mass: [2.016e-3, 18.015e-3, 31.998e-3, 28.014e-3],
            p_atm: 101325.0,
            fuel_h2_fraction: 0.9,
            air_o2_fraction: 0.21,
            nominal_fuel: 1.2,
            nominal_air: 5.0,
            current: 400.0,
        }
    }
}

impl SofcParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_cells", self.n_cells),
            ("anode_area", self.anode_area),
            ("cathode_area", self.cathode_area),
            ("discharge_coefficient", self.discharge_coefficient),
            ("temperature", self.temperature),
            ("limiting_current_density", self.limiting_current_density),
            ("exchange_current_density", self.exchange_current_density),
            ("faraday", self.faraday),
            ("gas_constant", self.gas_constant),
            ("anode_volume", self.anode_volume),
            ("cathode_volume", self.cathode_volume),
            ("cell_area", self.cell_area),
            ("p_atm", self.p_atm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("sofc.{name} must be positive, got {v}")));
            }
        }
        if !(self.diameter_ratio > 0.0 && self.diameter_ratio < 1.0) {
            return Err(Error::InvalidParameter("sofc.diameter_ratio must lie in (0, 1)".into()));
        }
        for (name, v) in [("fuel_h2_fraction", self.fuel_h2_fraction), ("air_o2_fraction", self.air_o2_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("sofc.{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.current < 0.0 {
            return Err(Error::InvalidParameter("sofc.current must be non-negative".into()));
        }
        Ok(())
    }

    /// `K_r = N_o / 4F`.
    pub fn k_r(&self) -> f64 {
        self.n_cells / (4.0 * self.faraday)
    }

    /// Orifice flow coefficient `C_d / sqrt(1 - (D2/D1)^4)`.
    pub fn flow_coefficient(&self) -> f64 {
        self.discharge_coefficient / (1.0 - self.diameter_ratio.powi(4)).sqrt()
    }

    /// Gibbs free energy change magnitude `-dg`, J/mol.
    pub fn gibbs(&self) -> f64 {
        188600.0 - 56.0 * (self.temperature - 1073.15)
    }

    /// Ohmic resistance, ohm.
    pub fn resistance(&self) -> f64 {
        0.2 * (-2870.0 * (1.0 / 1196.15 - 1.0 / self.temperature)).exp()
    }
}

/// Both activation-loss expressions evaluated at `j`: `(linear, log)`.
pub fn activation_loss_branches(j: f64, temperature: f64, p: &SofcParams) -> (f64, f64) {
    let rt = p.gas_constant * temperature;
    let ratio = j / p.exchange_current_density;
    let linear = rt / (4.0 * p.faraday) * ratio;
    let log = rt / (2.0 * p.faraday) * ratio.ln() + rt / (4.0 * p.faraday) * ratio;
    (linear, log)
}

/// Piecewise activation loss: linear up to `j_0`, logarithmic above.
pub fn activation_loss(j: f64, temperature: f64, p: &SofcParams) -> f64 {
    let (linear, log) = activation_loss_branches(j, temperature, p);
    if j <= p.exchange_current_density {
        linear
    } else {
        log
    }
}

fn check_pressures(x: &DVector<f64>) -> Result<()> {
    if x.len() != 4 {
        return Err(Error::dim("sofc pressures", 4, x.len()));
    }
    const NAMES: [&str; 4] = ["H2", "H2O", "O2", "N2"];
    for (i, v) in x.iter().enumerate() {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("partial pressure of {} must be positive, got {v}", NAMES[i])));
        }
    }
    Ok(())
}

/// Stack voltage for partial pressures `[P_H2, P_H2O, P_O2, P_N2]` and current.
pub fn sofc_output(x: &DVector<f64>, current: f64, p: &SofcParams) -> Result<f64> {
    check_pressures(x)?;
    let j = current / p.cell_area;
    if j >= p.limiting_current_density {
        return Err(Error::InvalidParameter(format!(
            "current density {j} A/m2 is at or above the limiting density {}",
            p.limiting_current_density
        )));
    }
    let t = p.temperature;
    let rt = p.gas_constant * t;
    let nernst = (x[0] * x[2].sqrt() / (x[1] * p.p_atm.sqrt())).ln();
    let e = p.n_cells / (2.0 * p.faraday) * (p.gibbs() + rt * nernst);
    let ohm = p.resistance() * current;
    let conc = -rt / (4.0 * p.faraday) * (1.0 - j / p.limiting_current_density).ln();
    let act = activation_loss(j, t, p);
    Ok(e - ohm - conc - act)
}

/// Outlet molar flows of one compartment holding species pressures `pa`, `pb`.
fn outlet(pa: f64, pb: f64, ma: f64, mb: f64, area: f64, p: &SofcParams, side: &str) -> Result<(f64, f64)> {
    let excess = pa + pb - p.p_atm;
    if !(excess > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{side} pressure {} Pa is not above ambient, outlet flow undefined",
            pa + pb
        )));
    }
    let rt = p.gas_constant * p.temperature;
    let root = (2.0 * excess / (rt * (pa * ma + pb * mb))).sqrt();
    let c = p.flow_coefficient() * area;
    Ok((c * pa * root, c * pb * root))
}

/// Pressure dynamics for `inputs = [fuel, air, current]` (mol/s, mol/s, A).
pub fn sofc_derivative(x: &DVector<f64>, inputs: [f64; 3], p: &SofcParams) -> Result<DVector<f64>> {
    check_pressures(x)?;
    let [fuel, air, current] = inputs;
    if fuel < 0.0 || air < 0.0 {
        return Err(Error::InvalidParameter(format!("feed flows must be non-negative, got {fuel}, {air}")));
    }
    let m = p.molar_mass;
    let (h2_out, h2o_out) = outlet(x[0], x[1], m[0], m[1], p.anode_area, p, "anode")?;
    let (o2_out, n2_out) = outlet(x[2], x[3], m[2], m[3], p.cathode_area, p, "cathode")?;
    let rt = p.gas_constant * p.temperature;
    let kri = p.k_r() * current;
    let an = rt / p.anode_volume;
    let cat = rt / p.cathode_volume;
    Ok(dvector![
        an * (p.fuel_h2_fraction * fuel - h2_out - 2.0 * kri),
        an * ((1.0 - p.fuel_h2_fraction) * fuel - h2o_out + 2.0 * kri),
        cat * (p.air_o2_fraction * air - o2_out - kri),
        cat * ((1.0 - p.air_o2_fraction) * air - n2_out)
    ])
}

/// SOFC stack with fuel and air feeds as inputs, voltage as output and a
/// fixed stack current.
#[derive(Debug, Clone)]
pub struct Sofc {
    pub params: SofcParams,
    /// RK4 step, seconds.
    pub step: f64,
}

impl Sofc {
    pub fn new(params: SofcParams, step: f64) -> Result<Self> {
        params.validate()?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("integration step must be positive, got {step}")));
        }
        Ok(Sofc { params, step })
    }

    pub fn nominal() -> Self {
        Sofc { params: SofcParams::default(), step: 2e-4 }
    }

    pub fn nominal_input(&self) -> DVector<f64> {
        dvector![self.params.nominal_fuel, self.params.nominal_air]
    }

    /// Equilibrium pressures for constant feeds, by integrating from a
    /// pressurised guess until the derivative vanishes.
    pub fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        let mut x = dvector![
            0.3 * (p.p_atm + 1000.0),
            0.7 * (p.p_atm + 1000.0),
            0.15 * (p.p_atm + 10000.0),
            0.85 * (p.p_atm + 10000.0)
        ];
        for _ in 0..200 {
            x = self.advance(&x, u, 0.1)?;
            let d = self.derivative(&x, u)?;
            if d.amax() < 1e-6 {
                return Ok(x);
            }
        }
        Err(Error::NonFinite("sofc steady state did not settle".into()))
    }
}

impl PlantModel for Sofc {
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != 2 {
            return Err(Error::dim("sofc inputs", 2, u.len()));
        }
        sofc_derivative(x, [u[0], u[1], self.params.current], &self.params)
    }
    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(dvector![sofc_output(x, self.params.current, &self.params)?])
    }
    fn integration_step(&self) -> f64 {
        self.step
    }
    fn describe(&self) -> Vec<(String, String)> {
        let p = &self.params;
        vec![
            ("plant".into(), "sofc".into()),
            ("sofc.n_cells".into(), p.n_cells.to_string()),
            ("sofc.anode_area".into(), p.anode_area.to_string()),
            ("sofc.cathode_area".into(), p.cathode_area.to_string()),
            ("sofc.discharge_coefficient".into(), p.discharge_coefficient.to_string()),
            ("sofc.temperature".into(), p.temperature.to_string()),
            ("sofc.limiting_current_density".into(), p.limiting_current_density.to_string()),
            ("sofc.exchange_current_density".into(), p.exchange_current_density.to_string()),
            ("sofc.anode_volume".into(), p.anode_volume.to_string()),
            ("sofc.cathode_volume".into(), p.cathode_volume.to_string()),
            ("sofc.cell_area".into(), p.cell_area.to_string()),
            ("sofc.diameter_ratio".into(), p.diameter_ratio.to_string()),
            ("sofc.fuel_h2_fraction".into(), p.fuel_h2_fraction.to_string()),
            ("sofc.air_o2_fraction".into(), p.air_o2_fraction.to_string()),
            ("sofc.current".into(), p.current.to_string()),
            ("sofc.step".into(), self.step.to_string()),
        ]
    }
}
