use nalgebra::{DMatrix, DVector};

use super::assemble::{PastInputs, StepProblem};
use super::config::HorizonConfig;
use super::window::StackedInput;
use crate::error::{Error, Result};
use crate::lti::LtiModel;
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};

/// Outcome of one alternating-minimization control step.
#[derive(Debug, Clone)]
pub struct AttentionStepResult {
    pub u_applied: DVector<f64>,
    pub v_star: StackedInput,
    pub v_hat: DVector<f64>,
    pub alt_iterations: usize,
    /// Objective after every half-step (QP step, then threshold step).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Largest increase between consecutive trace entries (0 when monotone).
    pub max_ascent: f64,
    pub qp_iterations: usize,
}

impl AttentionStepResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct MpcStepResult {
    pub u_applied: DVector<f64>,
    pub v: DVector<f64>,
    pub objective: f64,
    pub qp_iterations: usize,
}

/// QPs that stop at the iteration cap are still used if their KKT residual
/// is within this multiple of the requested tolerance.
const MAX_ITER_ACCEPT: f64 = 1e3;

pub(crate) fn solve_checked(problem: &QpProblem, cfg: &HorizonConfig, iteration: usize) -> Result<QpSolution> {
    let settings = QpSettings {
        tol: cfg.qp_tol,
        max_iter: cfg.qp_max_iter,
        ..QpSettings::default()
    };
    let sol = qp::solve(problem, &settings, None);
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::Infeasible => Err(Error::Infeasible {
            iteration,
            certificate: sol.certificate_residual.unwrap_or(f64::NAN),
        }),
        QpStatus::MaxIter if sol.kkt_residual <= MAX_ITER_ACCEPT * cfg.qp_tol => Ok(sol),
        QpStatus::MaxIter => Err(Error::QpNotConverged {
            iteration,
            residual: sol.kkt_residual,
        }),
    }
}

/// One MAMPC step from zero-initialized `v_hat`.
pub fn mampc_step(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    past: &PastInputs,
) -> Result<AttentionStepResult> {
    mampc_step_with(model, cfg, x0, reference, past, None)
}

/// One MAMPC step: alternate the QP in the stacked inputs with the sparse
/// projection of their differences until the inputs move by at most `eps1`
/// in the 1-norm, or `max_alt_iter` QP solves have been made.
pub fn mampc_step_with(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    past: &PastInputs,
    v_hat_init: Option<&DVector<f64>>,
) -> Result<AttentionStepResult> {
    let problem = StepProblem::new(model, cfg, x0, reference, past)?;
    if problem.psi().is_none() {
        return Err(Error::InvalidParameter(
            "MAMPC needs a window of at least two samples (n_c + n_s >= 2)".into(),
        ));
    }
    let mut v_hat = match v_hat_init {
        Some(v) if v.len() == problem.hat_len() => v.clone(),
        Some(v) => return Err(Error::dim("initial v_hat", problem.hat_len(), v.len())),
        None => DVector::zeros(problem.hat_len()),
    };

    let mut trace = Vec::with_capacity(2 * cfg.max_alt_iter);
    let mut previous: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut qp_iterations = 0;
    let mut iterations = 0;

    for i in 0..cfg.max_alt_iter {
        iterations = i + 1;
        let qp = problem.qp(Some(&v_hat))?;
        let sol = solve_checked(&qp, cfg, i)?;
        qp_iterations += sol.iterations;
        let v = sol.v;
        trace.push(problem.objective(&v, Some(&v_hat)));

        v_hat = problem.threshold(&v);
        trace.push(problem.objective(&v, Some(&v_hat)));

        let moved = previous.as_ref().map(|p| (&v - p).lp_norm(1));
        previous = Some(v);
        if matches!(moved, Some(d) if d <= cfg.eps1) {
            converged = true;
            break;
        }
    }

    let v = previous.expect("at least one alternating iteration");
    let max_ascent = trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let v_star = problem.stacked(v)?;
    Ok(AttentionStepResult {
        u_applied: v_star.first_free(),
        v_star,
        v_hat,
        alt_iterations: iterations,
        objective_trace: trace,
        converged,
        max_ascent,
        qp_iterations,
    })
}

/// Standard MPC input for time `k`; `u_prev` anchors the first input change.
pub fn mpc_step(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    u_prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(mpc_step_detailed(model, cfg, x0, reference, u_prev)?.u_applied)
}

pub fn mpc_step_detailed(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    u_prev: &DVector<f64>,
) -> Result<MpcStepResult> {
    let problem = StepProblem::for_mpc(model, cfg, x0, reference, u_prev)?;
    let qp = problem.qp(None)?;
    let sol = solve_checked(&qp, cfg, 0)?;
    let objective = problem.objective(&sol.v, None);
    let stacked = problem.stacked(sol.v.clone())?;
    Ok(MpcStepResult {
        u_applied: stacked.first_free(),
        v: sol.v,
        objective,
        qp_iterations: sol.iterations,
    })
}
