use nalgebra::{DMatrix, DVector};

use super::assemble::{PastInputs, StepProblem};
use super::config::HorizonConfig;
use super::controller::solve_checked;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lti::LtiModel;
use crate::qp::QpProblem;

/// Global optimum of the `l0`-constrained problem found by enumeration.
#[derive(Debug, Clone)]
pub struct P0Solution {
    pub objective: f64,
    pub v: DVector<f64>,
    /// Difference rows allowed to be nonzero in the optimal pattern.
    pub support: Vec<usize>,
    pub patterns_solved: usize,
}

/// Solves the exact sparse problem by brute force: for every support of
/// `min(s, d)` difference rows, the remaining differences are forced to
/// zero and the resulting QP is solved. Exponential in the window; meant
/// for small instances.
pub fn solve_p0_brute_force(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    past: &PastInputs,
    exec: Execution,
) -> Result<P0Solution> {
    let problem = StepProblem::new(model, cfg, x0, reference, past)?;
    let psi = problem
        .psi()
        .ok_or_else(|| Error::InvalidParameter("window too short for a sparsity pattern".into()))?
        .matrix()
        .clone();
    let d = psi.nrows();
    if d > 20 {
        return Err(Error::InvalidParameter(format!("{d} difference rows is too many to enumerate")));
    }
    let k = cfg.s.min(d);
    let supports: Vec<u32> = (0u32..(1 << d)).filter(|m| m.count_ones() as usize == k).collect();
    let base = problem.qp(None)?;

    let results = exec::map(exec, &supports, |&mask| -> Option<(f64, DVector<f64>)> {
        let zeroed: Vec<usize> = (0..d).filter(|i| mask & (1 << i) == 0).collect();
        let n_eq = base.a_eq().nrows();
        let mut a_eq = DMatrix::zeros(n_eq + zeroed.len(), base.dim());
        a_eq.view_mut((0, 0), (n_eq, base.dim())).copy_from(base.a_eq());
        for (j, &row) in zeroed.iter().enumerate() {
            a_eq.row_mut(n_eq + j).copy_from(&psi.row(row));
        }
        let mut b_eq = DVector::zeros(a_eq.nrows());
        b_eq.rows_mut(0, n_eq).copy_from(base.b_eq());
        let qp = QpProblem::new(
            base.h().clone(),
            base.f().clone(),
            base.a_ineq().clone(),
            base.b_ineq().clone(),
            a_eq,
            b_eq,
        )
        .ok()?;
        // infeasible patterns (e.g. a nonzero pinned past difference forced to zero) are skipped
        let sol = solve_checked(&qp, cfg, 0).ok()?;
        if problem.pinning_residual(&sol.v) > 1e-7 {
            return None;
        }
        Some((problem.objective(&sol.v, None), sol.v))
    });

    let patterns_solved = results.iter().filter(|r| r.is_some()).count();
    let (best_idx, (objective, v)) = results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|x| (i, x)))
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .ok_or(Error::Infeasible {
            iteration: 0,
            certificate: f64::NAN,
        })?;
    let mask = supports[best_idx];
    Ok(P0Solution {
        objective,
        v,
        support: (0..d).filter(|i| mask & (1 << i) != 0).collect(),
        patterns_solved,
    })
}
