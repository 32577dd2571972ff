use nalgebra::{dvector, DVector, Matrix2, Vector2};

use super::PlantModel;
use crate::error::{Error, Result};

/// Physical constants of the quadruple tank (cm, s).
#[derive(Debug, Clone, PartialEq)]
pub struct TankParams {
    /// Tank cross-sections `A_i`, cm².
    pub area: [f64; 4],
    /// Outlet cross-sections `a_i`, cm².
    pub outlet: [f64; 4],
    pub g: f64,
    /// Level sensor gain.
    pub k_c: f64,
    pub gamma: [f64; 2],
    /// Pump gains `k_i`, cm³/(s %).
    pub pump_gain: [f64; 2],
}

pub const NOMINAL_INPUT: [f64; 2] = [50.0, 50.0];
pub const NOMINAL_LEVELS: [f64; 4] = [16.3, 13.7, 6.0, 8.1];

impl TankParams {
    /// Published constants with pump gains calibrated to the nominal
    /// steady state.
    pub fn nominal() -> Self {
        let mut p = Self::uncalibrated();
        let cal = calibrate_pump_gains(&p, NOMINAL_INPUT, NOMINAL_LEVELS)
            .expect("nominal tank constants calibrate");
        p.pump_gain = cal.gains;
        p
    }

    /// Published constants with placeholder unit pump gains.
    pub fn uncalibrated() -> Self {
        TankParams {
            area: [730.0; 4],
            outlet: [2.05, 2.26, 2.37, 2.07],
            g: 981.0,
            k_c: 2.0,
            gamma: [0.3, 0.3],
            pump_gain: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.area.iter().chain(&self.outlet).any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter("tank areas must be positive".into()));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::InvalidParameter(format!("flow splits must lie in (0, 1), got {:?}", self.gamma)));
        }
        if !(self.g > 0.0) || self.pump_gain.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter("gravity and pump gains must be positive".into()));
        }
        Ok(())
    }

    /// `gamma_1 + gamma_2 < 1` places the transmission zero in the left half plane.
    pub fn is_minimum_phase(&self) -> bool {
        self.gamma[0] + self.gamma[1] < 1.0
    }

    /// Analytic equilibrium levels for constant valve openings.
    pub fn steady_state_levels(&self, nu: [f64; 2]) -> [f64; 4] {
        levels_for_flows(self, [self.pump_gain[0] * nu[0], self.pump_gain[1] * nu[1]])
    }
}

fn levels_for_flows(p: &TankParams, f: [f64; 2]) -> [f64; 4] {
    let [g1, g2] = p.gamma;
    let h = |q: f64, a: f64| (q / a).powi(2) / (2.0 * p.g);
    [
        h(g1 * f[0] + (1.0 - g2) * f[1], p.outlet[0]),
        h(g2 * f[1] + (1.0 - g1) * f[0], p.outlet[1]),
        h((1.0 - g2) * f[1], p.outlet[2]),
        h((1.0 - g1) * f[0], p.outlet[3]),
    ]
}

/// Level dynamics of the four tanks. Levels are clamped at zero inside the
/// square roots.
pub fn tank_derivative(h: &DVector<f64>, nu: &DVector<f64>, p: &TankParams) -> Result<DVector<f64>> {
    if h.len() != 4 {
        return Err(Error::dim("tank levels", 4, h.len()));
    }
    if nu.len() != 2 {
        return Err(Error::dim("tank inputs", 2, nu.len()));
    }
    if nu.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParameter(format!("valve openings must be non-negative, got {nu:?}")));
    }
    let q = |i: usize| p.outlet[i] * (2.0 * p.g * h[i].max(0.0)).sqrt();
    let f1 = p.pump_gain[0] * nu[0];
    let f2 = p.pump_gain[1] * nu[1];
    let [g1, g2] = p.gamma;
    Ok(dvector![
        (-q(0) + q(2) + g1 * f1) / p.area[0],
        (-q(1) + q(3) + g2 * f2) / p.area[1],
        (-q(2) + (1.0 - g2) * f2) / p.area[2],
        (-q(3) + (1.0 - g1) * f1) / p.area[3]
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpCalibration {
    /// Least-squares gains over all four equilibrium levels.
    pub gains: [f64; 2],
    /// Gains balancing tanks 3 and 4 exactly.
    pub closed_form: [f64; 2],
    /// Largest level mismatch of the least-squares gains, cm.
    pub max_level_error: f64,
    /// Largest `|dh/dt|` at the target point with the least-squares gains, cm/s.
    pub max_derivative: f64,
}

/// Pump gains that make `h_ss` an equilibrium for `nu_ss`.
///
/// The four-level balance is overdetermined in two gains. The lower-tank
/// balances give a closed form; the returned `gains` refine it by
/// Gauss-Newton on the squared level mismatch of all four tanks.
pub fn calibrate_pump_gains(p: &TankParams, nu_ss: [f64; 2], h_ss: [f64; 4]) -> Result<PumpCalibration> {
    if nu_ss.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!("steady inputs must be positive, got {nu_ss:?}")));
    }
    if h_ss.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidParameter(format!("steady levels must be positive, got {h_ss:?}")));
    }
    let split = |g: f64| -> Result<f64> {
        let c = 1.0 - g;
        if c < 1e-9 {
            Err(Error::InvalidParameter(format!(
                "flow split {g} leaves no flow to the upper tank, gain is unbounded"
            )))
        } else {
            Ok(c)
        }
    };
    let c1 = split(p.gamma[0])?;
    let c2 = split(p.gamma[1])?;
    let closed_form = [
        p.outlet[3] * (2.0 * p.g * h_ss[3]).sqrt() / (c1 * nu_ss[0]),
        p.outlet[2] * (2.0 * p.g * h_ss[2]).sqrt() / (c2 * nu_ss[1]),
    ];

    let residual = |f: Vector2<f64>| -> [f64; 4] {
        let h = levels_for_flows(p, [f[0], f[1]]);
        [h[0] - h_ss[0], h[1] - h_ss[1], h[2] - h_ss[2], h[3] - h_ss[3]]
    };
    let mut f = Vector2::new(closed_form[0] * nu_ss[0], closed_form[1] * nu_ss[1]);
    for _ in 0..50 {
        let r0 = residual(f);
        let mut jac = [[0.0; 2]; 4];
        for j in 0..2 {
            let step = 1e-6 * f[j].abs().max(1.0);
            let mut fp = f;
            fp[j] += step;
            let mut fm = f;
            fm[j] -= step;
            let (rp, rm) = (residual(fp), residual(fm));
            for i in 0..4 {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for i in 0..4 {
            for a in 0..2 {
                jtr[a] += jac[i][a] * r0[i];
                for b in 0..2 {
                    jtj[(a, b)] += jac[i][a] * jac[i][b];
                }
            }
        }
        let delta = jtj
            .lu()
            .solve(&jtr)
            .ok_or_else(|| Error::RankDeficient("pump calibration normal equations".into()))?;
        f -= delta;
        if delta.amax() < 1e-12 * f.amax() {
            break;
        }
    }
    if f.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::NonFinite("pump calibration".into()));
    }
    let gains = [f[0] / nu_ss[0], f[1] / nu_ss[1]];
    let max_level_error = residual(f).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let calibrated = TankParams { pump_gain: gains, ..p.clone() };
    let max_derivative = tank_derivative(
        &DVector::from_row_slice(&h_ss),
        &DVector::from_row_slice(&nu_ss),
        &calibrated,
    )?
    .amax();
    Ok(PumpCalibration { gains, closed_form, max_level_error, max_derivative })
}

/// Quadruple tank with two valve inputs and the two lower levels measured.
#[derive(Debug, Clone)]
pub struct QuadrupleTank {
    pub params: TankParams,
    /// RK4 step, seconds.
    pub step: f64,
}

impl QuadrupleTank {
    pub fn new(params: TankParams, step: f64) -> Result<Self> {
        params.validate()?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("integration step must be positive, got {step}")));
        }
        Ok(QuadrupleTank { params, step })
    }

    pub fn nominal() -> Self {
        QuadrupleTank { params: TankParams::nominal(), step: 1.0 }
    }
}

impl PlantModel for QuadrupleTank {
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        tank_derivative(x, u, &self.params)
    }
    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(dvector![self.params.k_c * x[0], self.params.k_c * x[1]])
    }
    fn integration_step(&self) -> f64 {
        self.step
    }
    fn describe(&self) -> Vec<(String, String)> {
        let p = &self.params;
        vec![
            ("plant".into(), "quadruple_tank".into()),
            ("tank.area".into(), format!("{:?}", p.area)),
            ("tank.outlet".into(), format!("{:?}", p.outlet)),
            ("tank.g".into(), p.g.to_string()),
            ("tank.k_c".into(), p.k_c.to_string()),
            ("tank.gamma".into(), format!("{:?}", p.gamma)),
            ("tank.pump_gain".into(), format!("{:?}", p.pump_gain)),
            ("tank.step".into(), self.step.to_string()),
        ]
    }
}
