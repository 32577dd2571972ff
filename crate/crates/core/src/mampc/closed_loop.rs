use nalgebra::{DMatrix, DVector};

use super::assemble::{exempt_rows, PastInputs};
use super::config::{HatInit, HorizonConfig};
use super::controller::{mampc_step_with, mpc_step_detailed};
use super::sparse::best_s_sparse_masked;
use super::window::{build_difference_matrix, StackedInput};
use crate::error::{Error, Result};
use crate::lti::LtiModel;
use crate::metrics::{ClosedLoopLog, ControllerTag, LogRow};
use crate::plants::PlantModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Mpc,
    Mampc,
}

/// A receding-horizon experiment.
///
/// `model` works in deviation variables around `(u_offset, y_offset)`;
/// `reference`, bounds in `cfg`, `x0` and `u_initial` are in plant units.
/// Row `k` of `reference` is the target for the output measured at step
/// `k`; the last row is held beyond the end.
pub struct ClosedLoopSetup<'a> {
    pub plant: &'a dyn PlantModel,
    pub model: &'a LtiModel,
    pub cfg: HorizonConfig,
    pub controller: ControllerKind,
    pub reference: DMatrix<f64>,
    pub steps: usize,
    /// Steps run with plain MPC before switching to MAMPC.
    pub bootstrap: usize,
    pub sample_time: f64,
    pub x0: DVector<f64>,
    pub u_initial: DVector<f64>,
    pub u_offset: DVector<f64>,
    pub y_offset: DVector<f64>,
    /// Extra `key=value` pairs recorded in the log header.
    pub header: Vec<(String, String)>,
}

#[derive(Debug)]
pub struct ClosedLoopRun {
    pub log: ClosedLoopLog,
    /// Set when the run stopped early; `log` holds the steps completed.
    pub failure: Option<Error>,
    /// Largest objective increase inside any MAMPC step.
    pub max_ascent: f64,
    pub unconverged_steps: usize,
}

impl ClosedLoopSetup<'_> {
    fn validate(&self) -> Result<()> {
        let (m, l) = (self.model.inputs(), self.model.outputs());
        if self.plant.input_dim() != m || self.plant.output_dim() != l {
            return Err(Error::dim(
                "plant vs model (inputs, outputs)",
                format!("({m}, {l})"),
                format!("({}, {})", self.plant.input_dim(), self.plant.output_dim()),
            ));
        }
        if self.x0.len() != self.plant.state_dim() {
            return Err(Error::dim("plant initial state", self.plant.state_dim(), self.x0.len()));
        }
        for (name, v, n) in [
            ("u_initial", &self.u_initial, m),
            ("u_offset", &self.u_offset, m),
            ("y_offset", &self.y_offset, l),
        ] {
            if v.len() != n {
                return Err(Error::dim(if name == "y_offset" { "y_offset" } else { "input vector" }, n, v.len()));
            }
        }
        if self.reference.ncols() != l || self.reference.nrows() == 0 {
            return Err(Error::dim(
                "reference",
                format!("at least 1x{l}"),
                format!("{}x{}", self.reference.nrows(), self.reference.ncols()),
            ));
        }
        if !(self.sample_time > 0.0) {
            return Err(Error::InvalidParameter(format!("sample time must be positive, got {}", self.sample_time)));
        }
        if self.controller == ControllerKind::Mampc && self.bootstrap < self.cfg.n_s {
            return Err(Error::InvalidParameter(format!(
                "bootstrap ({}) must cover the sparsity horizon n_s ({})",
                self.bootstrap, self.cfg.n_s
            )));
        }
        self.cfg.validate(m, l)
    }

    fn header(&self) -> Vec<(String, String)> {
        let mut h = self.header.clone();
        let vec = |v: &DVector<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        h.push((
            "run.controller".into(),
            match self.controller {
                ControllerKind::Mpc => "mpc".into(),
                ControllerKind::Mampc => "mampc".into(),
            },
        ));
        h.push(("run.steps".into(), self.steps.to_string()));
        h.push(("run.bootstrap".into(), self.bootstrap.to_string()));
        h.push(("run.sample_time".into(), self.sample_time.to_string()));
        h.push(("run.u_offset".into(), vec(&self.u_offset)));
        h.push(("run.y_offset".into(), vec(&self.y_offset)));
        h.extend(self.cfg.describe());
        h.extend(self.plant.describe());
        h
    }
}

/// Runs the loop for `setup.steps` samples.
///
/// The model state is tracked open loop from the applied inputs, starting
/// at the model equilibrium for `u_initial`, and the measured output
/// mismatch is added to predictions as a constant bias. Errors in the setup
/// are returned directly; failures during the run end it early and are
/// reported in [`ClosedLoopRun::failure`].
pub fn closed_loop(setup: &ClosedLoopSetup) -> Result<ClosedLoopRun> {
    setup.validate()?;
    let model = setup.model;
    let (m, l) = (model.inputs(), model.outputs());
    let cfg_dev = setup.cfg.shifted(&setup.u_offset, &setup.y_offset);
    let n_p = cfg_dev.n_p;

    let mut log = ClosedLoopLog::new(setup.header(), setup.u_initial.clone());
    let mut x = setup.x0.clone();
    let mut u_prev = &setup.u_initial - &setup.u_offset;
    let mut x_hat = model.steady_state(&u_prev)?;
    let mut history = vec![u_prev.clone()];
    let mut last_window: Option<StackedInput> = None;
    let mut max_ascent = 0.0f64;
    let mut unconverged = 0;
    let last_ref = setup.reference.nrows() - 1;

    for k in 0..setup.steps {
        let u_plant_prev = &u_prev + &setup.u_offset;
        let y = match setup.plant.output(&x, &u_plant_prev) {
            Ok(y) if y.iter().all(|v| v.is_finite()) => y,
            Ok(_) => return Ok(failed(log, Error::Plant { step: k, source: Box::new(Error::NonFinite("plant output".into())) }, max_ascent, unconverged)),
            Err(e) => return Ok(failed(log, Error::Plant { step: k, source: Box::new(e) }, max_ascent, unconverged)),
        };
        let bias = &y - &setup.y_offset - model.output(&x_hat, &u_prev);
        let r_dev = DMatrix::from_fn(n_p, l, |i, j| {
            setup.reference[((k + 1 + i).min(last_ref), j)] - setup.y_offset[j] - bias[j]
        });

        let use_mpc = setup.controller == ControllerKind::Mpc || k < setup.bootstrap;
        let step = if use_mpc {
            mpc_step_detailed(model, &cfg_dev, &x_hat, &r_dev, &u_prev).map(|r| {
                last_window = None;
                (r.u_applied, ControllerTag::Mpc, 0, r.objective)
            })
        } else {
            PastInputs::from_history(&history, cfg_dev.n_s).and_then(|past| {
                let init = match (cfg_dev.init, &last_window) {
                    (HatInit::WarmStart, Some(prev)) => Some(warm_start(prev, &cfg_dev, m)?),
                    _ => None,
                };
                let r = mampc_step_with(model, &cfg_dev, &x_hat, &r_dev, &past, init.as_ref())?;
                max_ascent = max_ascent.max(r.max_ascent);
                if !r.converged {
                    unconverged += 1;
                }
                let out = (r.u_applied.clone(), ControllerTag::Mampc, r.alt_iterations, r.objective());
                last_window = Some(r.v_star);
                Ok(out)
            })
        };
        let (u_dev, tag, alt_iterations, objective) = match step {
            Ok(s) => s,
            Err(e) => return Ok(failed(log, Error::Controller { step: k, source: Box::new(e) }, max_ascent, unconverged)),
        };

        let u_plant = &u_dev + &setup.u_offset;
        log.push(LogRow {
            step: k,
            tag,
            reference: setup.reference.row(k.min(last_ref)).transpose(),
            output: y,
            input: u_plant.clone(),
            alt_iterations,
            objective,
        })?;

        x = match setup.plant.advance(&x, &u_plant, setup.sample_time) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => x,
            Ok(_) => return Ok(failed(log, Error::Plant { step: k, source: Box::new(Error::NonFinite("plant state".into())) }, max_ascent, unconverged)),
            Err(e) => return Ok(failed(log, Error::Plant { step: k, source: Box::new(e) }, max_ascent, unconverged)),
        };
        x_hat = model.step(&x_hat, &u_dev);
        u_prev = u_dev.clone();
        history.push(u_dev);
        if history.len() > cfg_dev.n_s + 1 {
            history.remove(0);
        }
    }

    Ok(ClosedLoopRun { log, failure: None, max_ascent, unconverged_steps: unconverged })
}

fn failed(log: ClosedLoopLog, error: Error, max_ascent: f64, unconverged_steps: usize) -> ClosedLoopRun {
    ClosedLoopRun { log, failure: Some(error), max_ascent, unconverged_steps }
}

/// Sparse target from the previous optimum shifted forward one sample.
fn warm_start(prev: &StackedInput, cfg: &HorizonConfig, m: usize) -> Result<DVector<f64>> {
    let w = prev.window();
    let v = prev.as_vector();
    let shifted = DVector::from_fn(v.len(), |i, _| {
        let (c, t) = (i / w, i % w);
        v[c * w + (t + 1).min(w - 1)]
    });
    let psi = build_difference_matrix(m, cfg.n_c, cfg.n_s)?;
    Ok(best_s_sparse_masked(&psi.apply(&shifted), cfg.s, &exempt_rows(cfg, m)))
}
