//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 v'Hv + f'v
//! subject to  A_ineq v <= b_ineq
//!             A_eq v    = b_eq
//! ```
//!
//! with an operator-splitting (ADMM) iteration over the slack form
//! `l <= A v = z <= u`, followed by an active-set polish that solves the
//! reduced KKT system exactly once the active set has settled.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    h: DMatrix<f64>,
    f: DVector<f64>,
    a_ineq: DMatrix<f64>,
    b_ineq: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
}

impl QpProblem {
    /// Builds a problem, symmetrizing `H` as `(H + H')/2`.
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> Result<Self> {
        let d = f.len();
        if h.nrows() != d || h.ncols() != d {
            return Err(Error::dim("QpProblem H", format!("{d}x{d}"), format!("{}x{}", h.nrows(), h.ncols())));
        }
        if a_ineq.ncols() != d || a_ineq.nrows() != b_ineq.len() {
            return Err(Error::dim(
                "QpProblem inequality block",
                format!("{}x{d}", b_ineq.len()),
                format!("{}x{}", a_ineq.nrows(), a_ineq.ncols()),
            ));
        }
        if a_eq.ncols() != d || a_eq.nrows() != b_eq.len() {
            return Err(Error::dim(
                "QpProblem equality block",
                format!("{}x{d}", b_eq.len()),
                format!("{}x{}", a_eq.nrows(), a_eq.ncols()),
            ));
        }
        let all = h
            .iter()
            .chain(f.iter())
            .chain(a_ineq.iter())
            .chain(b_ineq.iter())
            .chain(a_eq.iter())
            .chain(b_eq.iter());
        for v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("QpProblem data".into()));
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        Ok(QpProblem { h, f, a_ineq, b_ineq, a_eq, b_eq })
    }

    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let d = f.len();
        Self::new(h, f, DMatrix::zeros(0, d), DVector::zeros(0), DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }
    pub fn a_ineq(&self) -> &DMatrix<f64> {
        &self.a_ineq
    }
    pub fn b_ineq(&self) -> &DVector<f64> {
        &self.b_ineq
    }
    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }
    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.h * v)) + self.f.dot(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub v: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Multipliers of `A_ineq v <= b_ineq` (non-negative at optimality).
    pub y_ineq: DVector<f64>,
    /// Multipliers of `A_eq v = b_eq`.
    pub y_eq: DVector<f64>,
    /// Inequality rows treated as active by the final iterate.
    pub active: Vec<usize>,
    /// Set when `status == Infeasible`: `||A' dy|| / ||dy||` of the certificate.
    pub certificate_residual: Option<f64>,
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    /// Equality rows use `rho * rho_eq_scale`.
    pub rho_eq_scale: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
    pub check_every: usize,
    /// Dual-residual level treated as divergence.
    pub divergence_limit: f64,
    /// Iterations before the divergence rule applies.
    pub divergence_after: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-8,
            max_iter: 20_000,
            rho: 1.0,
            rho_eq_scale: 1e3,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            check_every: 10,
            divergence_limit: 1e6,
            divergence_after: 1_000,
        }
    }
}

/// Per-iteration diagnostics passed to the trace hook.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Squared step length of the splitting iterate `(x, z + y/rho)` in the
    /// `(sigma, rho)`-weighted norm. Non-increasing for a firmly
    /// nonexpansive iteration.
    pub fixed_point_residual: f64,
}

/// Components of the KKT residual for a primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual_feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_feasibility)
    }
}

/// KKT residual of `(v, y_ineq, y_eq)` for `p`, all in the infinity norm.
pub fn kkt_residual(p: &QpProblem, v: &DVector<f64>, y_ineq: &DVector<f64>, y_eq: &DVector<f64>) -> KktResidual {
    let grad = &p.h * v + &p.f + p.a_ineq.transpose() * y_ineq + p.a_eq.transpose() * y_eq;
    let slack = &p.b_ineq - &p.a_ineq * v;
    let eq_gap = &p.a_eq * v - &p.b_eq;
    let primal = slack
        .iter()
        .map(|s| (-s).max(0.0))
        .chain(eq_gap.iter().map(|g| g.abs()))
        .fold(0.0, f64::max);
    let complementarity = slack
        .iter()
        .zip(y_ineq.iter())
        .map(|(s, y)| (s * y).abs())
        .fold(0.0, f64::max);
    let dual_feasibility = y_ineq.iter().map(|y| (-y).max(0.0)).fold(0.0, f64::max);
    KktResidual {
        stationarity: inf_norm(&grad),
        primal,
        complementarity,
        dual_feasibility,
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Solve with default settings at the given tolerance and iteration cap.
pub fn qp_solve(p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    let settings = QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    };
    solve(p, &settings, None)
}

/// Solve with explicit settings and an optional per-iteration hook.
pub fn solve(
    p: &QpProblem,
    settings: &QpSettings,
    mut trace: Option<&mut dyn FnMut(&IterationRecord)>,
) -> QpSolution {
    let d = p.dim();
    let n_eq = p.a_eq.nrows();
    let n_in = p.a_ineq.nrows();
    let rows = n_eq + n_in;

    let mut a = DMatrix::zeros(rows, d);
    a.view_mut((0, 0), (n_eq, d)).copy_from(&p.a_eq);
    a.view_mut((n_eq, 0), (n_in, d)).copy_from(&p.a_ineq);
    let mut lower = DVector::from_element(rows, f64::NEG_INFINITY);
    let mut upper = DVector::zeros(rows);
    lower.rows_mut(0, n_eq).copy_from(&p.b_eq);
    upper.rows_mut(0, n_eq).copy_from(&p.b_eq);
    upper.rows_mut(n_eq, n_in).copy_from(&p.b_ineq);
    let rho = DVector::from_fn(rows, |i, _| {
        if i < n_eq {
            settings.rho * settings.rho_eq_scale
        } else {
            settings.rho
        }
    });

    let mut kmat = &p.h + DMatrix::identity(d, d) * settings.sigma;
    for i in 0..rows {
        let ai = a.row(i);
        kmat += ai.transpose() * ai * rho[i];
    }
    let chol = kmat.clone().cholesky();
    let lu = if chol.is_none() { Some(kmat.lu()) } else { None };
    let solve_k = |rhs: &DVector<f64>| -> DVector<f64> {
        match (&chol, &lu) {
            (Some(c), _) => c.solve(rhs),
            (None, Some(l)) => l.solve(rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
            _ => unreachable!(),
        }
    };

    let mut x = DVector::zeros(d);
    // z = proj(0) with y = 0 is a consistent splitting state
    let mut z = DVector::from_fn(rows, |i, _| 0.0f64.clamp(lower[i], upper[i]));
    let mut y = DVector::zeros(rows);
    let alpha = settings.alpha;

    let split = |y: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        (y.rows(n_eq, n_in).into_owned(), y.rows(0, n_eq).into_owned())
    };

    let mut best: Option<QpSolution> = None;
    let mut last_active: Option<Vec<usize>> = None;
    let mut y_prev_check = y.clone();

    for k in 1..=settings.max_iter {
        let x_old = x.clone();
        let v_old = &z + y.component_div(&rho);
        let y_old = y.clone();

        let rhs = &x * settings.sigma - &p.f + a.transpose() * (rho.component_mul(&z) - &y);
        let x_tilde = solve_k(&rhs);
        let z_tilde = &a * &x_tilde;
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let w = &z_relaxed + y.component_div(&rho);
        let z_new = DVector::from_fn(rows, |i, _| w[i].clamp(lower[i], upper[i]));
        y += rho.component_mul(&(&z_relaxed - &z_new));
        z = z_new;

        if x.iter().any(|v| !v.is_finite()) {
            break;
        }

        let ax = &a * &x;
        let primal_residual = inf_norm(&(&ax - &z));
        let dual_residual = inf_norm(&(&p.h * &x + &p.f + a.transpose() * &y));

        if let Some(hook) = trace.as_deref_mut() {
            let v_new = &z + y.component_div(&rho);
            let dx = &x - &x_old;
            let dv = &v_new - &v_old;
            let fpr = settings.sigma * dx.norm_squared()
                + dv.iter().zip(rho.iter()).map(|(e, r)| r * e * e).sum::<f64>();
            hook(&IterationRecord {
                iteration: k,
                objective: p.objective(&x),
                primal_residual,
                dual_residual,
                fixed_point_residual: fpr,
            });
        }

        let checkpoint = k == 1 || k % settings.check_every == 0 || k == settings.max_iter;
        if !checkpoint {
            continue;
        }

        let active: Vec<usize> = (0..n_in)
            .filter(|&i| upper[n_eq + i] - z[n_eq + i] < y[n_eq + i])
            .collect();

        let (y_in, y_eq) = split(&y);
        let res = kkt_residual(p, &x, &y_in, &y_eq).max();
        let candidate = QpSolution {
            v: x.clone(),
            objective: p.objective(&x),
            kkt_residual: res,
            iterations: k,
            status: QpStatus::MaxIter,
            y_ineq: y_in,
            y_eq,
            active: active.clone(),
            certificate_residual: None,
            polished: false,
        };
        if res <= settings.tol {
            return QpSolution {
                status: QpStatus::Optimal,
                ..candidate
            };
        }

        if settings.polish && last_active.as_ref() != Some(&active) {
            if let Some(sol) = polish(p, &active, k) {
                if sol.kkt_residual <= settings.tol {
                    return QpSolution {
                        status: QpStatus::Optimal,
                        ..sol
                    };
                }
                keep_best(&mut best, sol);
            }
            last_active = Some(active);
        }
        keep_best(&mut best, candidate);

        // Primal infeasibility certificate on the dual increment.
        let dy = &y - &y_prev_check;
        y_prev_check = y.clone();
        let dy_norm = inf_norm(&dy);
        if dy_norm > 1e-12 {
            let at_dy = inf_norm(&(a.transpose() * &dy));
            let mut support = 0.0;
            let mut unbounded = false;
            for i in 0..rows {
                if dy[i] > 0.0 {
                    support += upper[i] * dy[i];
                } else if dy[i] < 0.0 {
                    if lower[i].is_finite() {
                        support += lower[i] * dy[i];
                    } else if dy[i] < -1e-12 * dy_norm {
                        unbounded = true;
                    }
                }
            }
            let eps = 1e-9;
            if !unbounded && at_dy <= eps * dy_norm && support < -eps * dy_norm {
                return infeasible(p, &x, k, at_dy / dy_norm, y_old);
            }
        }
        if k > settings.divergence_after && dual_residual > settings.divergence_limit {
            return infeasible(p, &x, k, inf_norm(&(a.transpose() * &dy)) / dy_norm.max(1e-300), y_old);
        }
    }

    best.unwrap_or_else(|| {
        let y_in = DVector::zeros(n_in);
        let y_eq = DVector::zeros(n_eq);
        let res = kkt_residual(p, &x, &y_in, &y_eq).max();
        QpSolution {
            objective: p.objective(&x),
            v: x,
            kkt_residual: res,
            iterations: settings.max_iter,
            status: QpStatus::MaxIter,
            y_ineq: y_in,
            y_eq,
            active: Vec::new(),
            certificate_residual: None,
            polished: false,
        }
    })
}

fn keep_best(best: &mut Option<QpSolution>, sol: QpSolution) {
    let better = match best {
        Some(b) => sol.kkt_residual.is_finite() && sol.kkt_residual < b.kkt_residual,
        None => sol.kkt_residual.is_finite(),
    };
    if better {
        *best = Some(sol);
    }
}

fn infeasible(p: &QpProblem, x: &DVector<f64>, k: usize, certificate: f64, y: DVector<f64>) -> QpSolution {
    let n_eq = p.a_eq.nrows();
    let n_in = p.a_ineq.nrows();
    let y_in = y.rows(n_eq, n_in).into_owned();
    let y_eq = y.rows(0, n_eq).into_owned();
    QpSolution {
        v: x.clone(),
        objective: p.objective(x),
        kkt_residual: kkt_residual(p, x, &y_in, &y_eq).max(),
        iterations: k,
        status: QpStatus::Infeasible,
        y_ineq: y_in,
        y_eq,
        active: Vec::new(),
        certificate_residual: Some(certificate),
        polished: false,
    }
}

/// Solve the equality-constrained problem on the guessed active set.
fn polish(p: &QpProblem, active: &[usize], iteration: usize) -> Option<QpSolution> {
    let d = p.dim();
    let n_eq = p.a_eq.nrows();
    let n_act = active.len();
    let c = n_eq + n_act;
    let size = d + c;

    let mut kkt = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    kkt.view_mut((0, 0), (d, d)).copy_from(&p.h);
    rhs.rows_mut(0, d).copy_from(&(-&p.f));
    for i in 0..n_eq {
        let row = p.a_eq.row(i);
        kkt.view_mut((d + i, 0), (1, d)).copy_from(&row);
        kkt.view_mut((0, d + i), (d, 1)).copy_from(&row.transpose());
        rhs[d + i] = p.b_eq[i];
    }
    for (j, &i) in active.iter().enumerate() {
        let row = p.a_ineq.row(i);
        kkt.view_mut((d + n_eq + j, 0), (1, d)).copy_from(&row);
        kkt.view_mut((0, d + n_eq + j), (d, 1)).copy_from(&row.transpose());
        rhs[d + n_eq + j] = p.b_ineq[i];
    }

    // Quasi-definite regularization with iterative refinement against the
    // exact system; copes with dependent active rows.
    let delta = 1e-9 * (1.0 + p.h.amax());
    let mut reg = kkt.clone();
    for i in 0..d {
        reg[(i, i)] += delta;
    }
    for i in d..size {
        reg[(i, i)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..25 {
        let r = &rhs - &kkt * &sol;
        if inf_norm(&r) < 1e-15 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let v = sol.rows(0, d).into_owned();
    let y_eq = sol.rows(d, n_eq).into_owned();
    let mut y_in = DVector::zeros(p.a_ineq.nrows());
    for (j, &i) in active.iter().enumerate() {
        y_in[i] = sol[d + n_eq + j];
    }
    let res = kkt_residual(p, &v, &y_in, &y_eq).max();
    Some(QpSolution {
        objective: p.objective(&v),
        v,
        kkt_residual: res,
        iterations: iteration,
        status: QpStatus::MaxIter,
        y_ineq: y_in,
        y_eq,
        active: active.to_vec(),
        certificate_residual: None,
        polished: true,
    })
}
