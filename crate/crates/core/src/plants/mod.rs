//! Continuous-time nonlinear plant simulators and excitation signals.

mod prbs;
mod sofc;
mod tank;

pub use prbs::{max_length_taps, prbs, prbs_bits, PrbsConfig};
pub use sofc::{
    activation_loss, activation_loss_branches, sofc_derivative, sofc_output, Sofc, SofcParams,
};
pub use tank::{calibrate_pump_gains, tank_derivative, PumpCalibration, QuadrupleTank, TankParams};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lti::LtiModel;

/// A plant advanced in sampled time by the closed loop.
///
/// Continuous plants provide `derivative` and get `advance` from repeated
/// [`rk4_step`] calls at `integration_step`; discrete plants override
/// `advance` directly.
pub trait PlantModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn integration_step(&self) -> f64;

    /// State after holding `u` for `duration` seconds.
    fn advance(&self, x: &DVector<f64>, u: &DVector<f64>, duration: f64) -> Result<DVector<f64>> {
        let h = self.integration_step();
        let steps = ((duration / h) - 1e-9).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        let mut state = x.clone();
        for _ in 0..steps {
            state = rk4_step(self, &state, u, dt)?;
        }
        Ok(state)
    }

    /// Parameter record for log headers.
    fn describe(&self) -> Vec<(String, String)> {
        Vec::new()
    }
}

/// Classical four-stage Runge-Kutta step with `u` held over the step.
pub fn rk4_step<P: PlantModel + ?Sized>(
    plant: &P,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("integration step must be positive, got {dt}")));
    }
    let check = |v: DVector<f64>, stage: &str| -> Result<DVector<f64>> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("RK4 stage {stage}")))
        }
    };
    let k1 = check(plant.derivative(x, u)?, "k1")?;
    let k2 = check(plant.derivative(&(x + &k1 * (dt / 2.0)), u)?, "k2")?;
    let k3 = check(plant.derivative(&(x + &k2 * (dt / 2.0)), u)?, "k3")?;
    let k4 = check(plant.derivative(&(x + &k3 * dt), u)?, "k4")?;
    check(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0), "result")
}

/// A discrete LTI model used as its own plant (exact one-sample steps).
#[derive(Debug, Clone)]
pub struct DiscreteLtiPlant {
    pub model: LtiModel,
}

impl PlantModel for DiscreteLtiPlant {
    fn state_dim(&self) -> usize {
        self.model.states()
    }
    fn input_dim(&self) -> usize {
        self.model.inputs()
    }
    fn output_dim(&self) -> usize {
        self.model.outputs()
    }
    fn derivative(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::InvalidParameter("a discrete-time plant has no derivative".into()))
    }
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.model.output(x, u))
    }
    fn integration_step(&self) -> f64 {
        self.model.dt()
    }
    fn advance(&self, x: &DVector<f64>, u: &DVector<f64>, duration: f64) -> Result<DVector<f64>> {
        if (duration - self.model.dt()).abs() > 1e-12 * self.model.dt() {
            return Err(Error::InvalidParameter(format!(
                "discrete plant advances by its sample time {} only, asked for {duration}",
                self.model.dt()
            )));
        }
        Ok(self.model.step(x, u))
    }
}

/// `dx/dt = A x + B u`, `y = C x + D u` as a continuous plant.
#[derive(Debug, Clone)]
pub struct ContinuousLtiPlant {
    pub a: nalgebra::DMatrix<f64>,
    pub b: nalgebra::DMatrix<f64>,
    pub c: nalgebra::DMatrix<f64>,
    pub d: nalgebra::DMatrix<f64>,
    pub step: f64,
}

impl PlantModel for ContinuousLtiPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.c * x + &self.d * u)
    }
    fn integration_step(&self) -> f64 {
        self.step
    }
}
