use nalgebra::{DMatrix, DVector};

use super::config::HorizonConfig;
use super::sparse::best_s_sparse_masked;
use super::window::{build_difference_matrix, DifferenceMatrix, StackedInput};
use crate::error::{Error, Result};
use crate::lti::{lift, LtiModel};
use crate::qp::QpProblem;

/// Inputs applied before time `k`: the `n_s` samples pinned in the window
/// (oldest first) and the most recent one, which anchors `Delta u[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PastInputs {
    window: Vec<DVector<f64>>,
    previous: DVector<f64>,
}

impl PastInputs {
    pub fn new(window: Vec<DVector<f64>>, previous: DVector<f64>) -> Result<Self> {
        if let Some(last) = window.last() {
            if *last != previous {
                return Err(Error::InvalidParameter(
                    "previous input must equal the last pinned past input".into(),
                ));
            }
        }
        if window.iter().any(|u| u.len() != previous.len()) {
            return Err(Error::dim("PastInputs sample", previous.len(), "mixed lengths"));
        }
        Ok(PastInputs { window, previous })
    }

    /// The last `n_s` entries of an applied-input history (oldest first).
    pub fn from_history(history: &[DVector<f64>], n_s: usize) -> Result<Self> {
        let previous = history
            .last()
            .ok_or_else(|| Error::InvalidParameter("input history is empty".into()))?
            .clone();
        if history.len() < n_s {
            return Err(Error::InvalidParameter(format!(
                "need {n_s} past inputs, history has {}",
                history.len()
            )));
        }
        Self::new(history[history.len() - n_s..].to_vec(), previous)
    }

    pub fn window(&self) -> &[DVector<f64>] {
        &self.window
    }
    pub fn previous(&self) -> &DVector<f64> {
        &self.previous
    }
    pub fn n_s(&self) -> usize {
        self.window.len()
    }
}

/// Everything about one control step that does not depend on `v_hat`.
///
/// The first-step QP over the stacked window is
///
/// ```text
/// ||G v - q||^2 + lambda ||E v + e0||^2 + mu ||v_hat - Psi v||^2
/// ```
///
/// with `G v - q` the output tracking error over `k+1 ..= k+n_p`, `E v + e0`
/// the free-window input changes and the pinned past block as equalities.
#[derive(Debug, Clone)]
pub struct StepProblem {
    model: LtiModel,
    x0: DVector<f64>,
    reference: DMatrix<f64>,
    past: PastInputs,
    n_p: usize,
    n_c: usize,
    n_s: usize,
    s: usize,
    lambda: f64,
    mu: f64,
    g: DMatrix<f64>,
    q: DVector<f64>,
    e_mat: DMatrix<f64>,
    e0: DVector<f64>,
    psi: Option<DifferenceMatrix>,
    exempt: Vec<usize>,
    base_h: DMatrix<f64>,
    base_f: DVector<f64>,
    a_ineq: DMatrix<f64>,
    b_ineq: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
}

impl StepProblem {
    /// `reference` is `n_p x l`; row `i` is the target for `y[k+1+i]`.
    pub fn new(
        model: &LtiModel,
        cfg: &HorizonConfig,
        x0: &DVector<f64>,
        reference: &DMatrix<f64>,
        past: &PastInputs,
    ) -> Result<Self> {
        let (n, m, l) = (model.states(), model.inputs(), model.outputs());
        cfg.validate(m, l)?;
        if past.n_s() != cfg.n_s {
            return Err(Error::dim("past inputs", cfg.n_s, past.n_s()));
        }
        if past.previous().len() != m {
            return Err(Error::dim("past input width", m, past.previous().len()));
        }
        if x0.len() != n {
            return Err(Error::dim("initial state", n, x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        if reference.nrows() != cfg.n_p || reference.ncols() != l {
            return Err(Error::dim(
                "reference",
                format!("{}x{l}", cfg.n_p),
                format!("{}x{}", reference.nrows(), reference.ncols()),
            ));
        }

        let (n_p, n_c, n_s) = (cfg.n_p, cfg.n_c, cfg.n_s);
        let w = n_c + n_s;
        let dim = m * w;
        let idx = |c: usize, t: usize| c * w + t;

        let lifted = lift(model, n_p, n_c)?;
        let free_response = &lifted.phi * x0;
        let mut g = DMatrix::zeros(n_p * l, dim);
        for qi in 0..n_c {
            for c in 0..m {
                g.column_mut(idx(c, n_s + qi)).copy_from(&lifted.gamma.column(qi * m + c));
            }
        }
        let r_stacked = DVector::from_fn(n_p * l, |i, _| reference[(i / l, i % l)]);
        let q = &r_stacked - &free_response;

        let mut e_mat = DMatrix::zeros(n_c * m, dim);
        let mut e0 = DVector::zeros(n_c * m);
        for c in 0..m {
            for qi in 0..n_c {
                let row = c * n_c + qi;
                e_mat[(row, idx(c, n_s + qi))] = 1.0;
                if n_s + qi >= 1 {
                    e_mat[(row, idx(c, n_s + qi - 1))] = -1.0;
                } else {
                    e0[row] = -past.previous()[c];
                }
            }
        }

        let psi = if w >= 2 { Some(build_difference_matrix(m, n_c, n_s)?) } else { None };
        let exempt = exempt_rows(cfg, m);

        let gt = g.transpose();
        let et = e_mat.transpose();
        let base_h = (&gt * &g + &et * &e_mat * cfg.lambda) * 2.0;
        let base_f = (&gt * &q * -1.0 + &et * &e0 * cfg.lambda) * 2.0;

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for c in 0..m {
            for qi in 0..n_c {
                let j = idx(c, n_s + qi);
                if cfg.u_max[c].is_finite() {
                    let mut a = DVector::zeros(dim);
                    a[j] = 1.0;
                    rows.push((a, cfg.u_max[c]));
                }
                if cfg.u_min[c].is_finite() {
                    let mut a = DVector::zeros(dim);
                    a[j] = -1.0;
                    rows.push((a, -cfg.u_min[c]));
                }
            }
        }
        for i in 0..n_p * l {
            let out = i % l;
            let gi = g.row(i).transpose();
            if cfg.y_max[out].is_finite() {
                rows.push((gi.clone(), cfg.y_max[out] - free_response[i]));
            }
            if cfg.y_min[out].is_finite() {
                rows.push((-gi, free_response[i] - cfg.y_min[out]));
            }
        }
        let mut a_ineq = DMatrix::zeros(rows.len(), dim);
        let mut b_ineq = DVector::zeros(rows.len());
        for (r, (a, b)) in rows.into_iter().enumerate() {
            a_ineq.row_mut(r).copy_from(&a.transpose());
            b_ineq[r] = b;
        }

        let mut a_eq = DMatrix::zeros(m * n_s, dim);
        let mut b_eq = DVector::zeros(m * n_s);
        for c in 0..m {
            for t in 0..n_s {
                let row = c * n_s + t;
                a_eq[(row, idx(c, t))] = 1.0;
                b_eq[row] = past.window()[t][c];
            }
        }

        Ok(StepProblem {
            model: model.clone(),
            x0: x0.clone(),
            reference: reference.clone(),
            past: past.clone(),
            n_p,
            n_c,
            n_s,
            s: cfg.s,
            lambda: cfg.lambda,
            mu: cfg.mu,
            g,
            q,
            e_mat,
            e0,
            psi,
            exempt,
            base_h,
            base_f,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
        })
    }

    /// Standard MPC: no pinned past window and no coupling term.
    pub fn for_mpc(
        model: &LtiModel,
        cfg: &HorizonConfig,
        x0: &DVector<f64>,
        reference: &DMatrix<f64>,
        u_prev: &DVector<f64>,
    ) -> Result<Self> {
        let mpc_cfg = HorizonConfig {
            n_s: 0,
            mu: 0.0,
            s: cfg.s.min(model.inputs() * cfg.n_c.saturating_sub(1)),
            ..cfg.clone()
        };
        let past = PastInputs::new(Vec::new(), u_prev.clone())?;
        Self::new(model, &mpc_cfg, x0, reference, &past)
    }

    pub fn dim(&self) -> usize {
        self.base_f.len()
    }
    pub fn channels(&self) -> usize {
        self.model.inputs()
    }
    pub fn n_s(&self) -> usize {
        self.n_s
    }
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn psi(&self) -> Option<&DifferenceMatrix> {
        self.psi.as_ref()
    }
    pub fn past(&self) -> &PastInputs {
        &self.past
    }
    /// Number of entries in `v_hat`.
    pub fn hat_len(&self) -> usize {
        self.psi.as_ref().map_or(0, |p| p.rows())
    }

    /// The first-step QP for a given sparse target (`None` means zero).
    pub fn qp(&self, v_hat: Option<&DVector<f64>>) -> Result<QpProblem> {
        let mut h = self.base_h.clone();
        let mut f = self.base_f.clone();
        if self.mu > 0.0 {
            let psi = self.psi.as_ref().ok_or_else(|| {
                Error::InvalidParameter("coupling weight mu > 0 needs n_c + n_s >= 2".into())
            })?;
            let pm = psi.matrix();
            h += pm.transpose() * pm * (2.0 * self.mu);
            if let Some(vh) = v_hat {
                if vh.len() != psi.rows() {
                    return Err(Error::dim("v_hat", psi.rows(), vh.len()));
                }
                f -= pm.transpose() * vh * (2.0 * self.mu);
            }
        }
        QpProblem::new(
            h,
            f,
            self.a_ineq.clone(),
            self.b_ineq.clone(),
            self.a_eq.clone(),
            self.b_eq.clone(),
        )
    }

    /// `J = sum ||r - y||^2 + lambda sum ||Delta u||^2 + mu ||v_hat - Psi v||^2`,
    /// evaluated by direct recursion of the model (independently of the QP
    /// matrices). `v_hat = None` drops the coupling term.
    pub fn objective(&self, v: &DVector<f64>, v_hat: Option<&DVector<f64>>) -> f64 {
        let m = self.channels();
        let w = self.n_c + self.n_s;
        let at = |c: usize, t: usize| v[c * w + t];
        let sample = |t: usize| DVector::from_fn(m, |c, _| at(c, t));
        let free = |qi: usize| sample(self.n_s + qi.min(self.n_c - 1));

        let mut total = 0.0;
        let mut x = self.x0.clone();
        for i in 1..=self.n_p {
            x = self.model.step(&x, &free(i - 1));
            let y = self.model.output(&x, &free(i));
            for j in 0..y.len() {
                let e = self.reference[(i - 1, j)] - y[j];
                total += e * e;
            }
        }
        let mut prev = if self.n_s == 0 {
            self.past.previous().clone()
        } else {
            sample(self.n_s - 1)
        };
        for qi in 0..self.n_c {
            let u = free(qi);
            total += self.lambda * (&u - &prev).norm_squared();
            prev = u;
        }
        if let Some(vh) = v_hat {
            if self.mu > 0.0 {
                for c in 0..m {
                    for t in 0..w - 1 {
                        let e = vh[c * (w - 1) + t] - (at(c, t + 1) - at(c, t));
                        total += self.mu * e * e;
                    }
                }
            }
        }
        total
    }

    /// Second step: best sparse approximation of `Psi v`.
    pub fn threshold(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.psi {
            Some(psi) => best_s_sparse_masked(&psi.apply(v), self.s, &self.exempt),
            None => DVector::zeros(0),
        }
    }

    pub fn stacked(&self, v: DVector<f64>) -> Result<StackedInput> {
        StackedInput::new(v, self.channels(), self.n_s, self.n_c)
    }

    /// Largest violation of the pinned-past equalities.
    pub fn pinning_residual(&self, v: &DVector<f64>) -> f64 {
        (&self.a_eq * v - &self.b_eq).amax()
    }

    /// Tracking pieces `(G, q)` and input-change pieces `(E, e0)`.
    pub fn blocks(&self) -> (&DMatrix<f64>, &DVector<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.g, &self.q, &self.e_mat, &self.e0)
    }
}

/// Difference rows lying wholly inside the pinned past, when configured to
/// bypass the sparsity budget.
pub(crate) fn exempt_rows(cfg: &HorizonConfig, m: usize) -> Vec<usize> {
    let (n_s, w) = (cfg.n_s, cfg.window());
    if cfg.exclude_past_differences && n_s >= 2 {
        (0..m).flat_map(|c| (0..n_s - 1).map(move |j| c * (w - 1) + j)).collect()
    } else {
        Vec::new()
    }
}

/// The first-step QP of the alternating minimization for one control step.
pub fn assemble_first_step(
    model: &LtiModel,
    cfg: &HorizonConfig,
    x0: &DVector<f64>,
    reference: &DMatrix<f64>,
    past: &PastInputs,
    v_hat: &DVector<f64>,
) -> Result<QpProblem> {
    StepProblem::new(model, cfg, x0, reference, past)?.qp(Some(v_hat))
}
