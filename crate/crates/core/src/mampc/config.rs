use nalgebra::DVector;

use crate::error::{Error, Result};

/// How the sparse target `v_hat` is seeded at the start of each control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HatInit {
    #[default]
    Zero,
    /// Threshold `Psi` applied to the previous step's optimum shifted by one sample.
    WarmStart,
}

/// Controller tuning shared by MPC and MAMPC.
///
/// Bounds may be infinite; infinite bounds generate no constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonConfig {
    pub n_p: usize,
    pub n_c: usize,
    pub n_s: usize,
    pub s: usize,
    pub lambda: f64,
    pub mu: f64,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub y_min: DVector<f64>,
    pub y_max: DVector<f64>,
    pub eps1: f64,
    pub max_alt_iter: usize,
    pub init: HatInit,
    /// Let differences between two pinned past samples bypass the sparsity budget.
    pub exclude_past_differences: bool,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl HorizonConfig {
    /// Defaults for `m` inputs and `l` outputs: `n_p = 10`, `n_c = 5`,
    /// `n_s = 1`, `s = 3`, `lambda = 1`, `mu = 10 lambda`, unbounded.
    pub fn new(m: usize, l: usize) -> Self {
        let lambda = 1.0;
        HorizonConfig {
            n_p: 10,
            n_c: 5,
            n_s: 1,
            s: 3,
            lambda,
            mu: 10.0 * lambda,
            u_min: DVector::from_element(m, f64::NEG_INFINITY),
            u_max: DVector::from_element(m, f64::INFINITY),
            y_min: DVector::from_element(l, f64::NEG_INFINITY),
            y_max: DVector::from_element(l, f64::INFINITY),
            eps1: 1e-4,
            max_alt_iter: 50,
            init: HatInit::Zero,
            exclude_past_differences: false,
            qp_tol: 1e-8,
            qp_max_iter: 20_000,
        }
    }

    /// Window length `n_c + n_s`.
    pub fn window(&self) -> usize {
        self.n_c + self.n_s
    }

    /// Sparsity budget needed to make the `l0` bound vacuous.
    pub fn vacuous_sparsity(&self, m: usize) -> usize {
        m * self.window().saturating_sub(1)
    }

    pub fn validate(&self, m: usize, l: usize) -> Result<()> {
        if self.n_c == 0 || self.n_c > self.n_p {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= n_c <= n_p, got n_c={}, n_p={}",
                self.n_c, self.n_p
            )));
        }
        if self.s > self.vacuous_sparsity(m) {
            return Err(Error::InvalidParameter(format!(
                "sparsity level s={} exceeds m(n_c+n_s-1)={}",
                self.s,
                self.vacuous_sparsity(m)
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.eps1 > 0.0) {
            return Err(Error::InvalidParameter(format!("eps1 must be > 0, got {}", self.eps1)));
        }
        if self.max_alt_iter == 0 {
            return Err(Error::InvalidParameter("max_alt_iter must be >= 1".into()));
        }
        check_bounds("u", &self.u_min, &self.u_max, m)?;
        check_bounds("y", &self.y_min, &self.y_max, l)?;
        Ok(())
    }

    /// Same tuning with every bound shifted by `-offset` (plant units to
    /// deviation units).
    pub(crate) fn shifted(&self, u_offset: &DVector<f64>, y_offset: &DVector<f64>) -> Self {
        HorizonConfig {
            u_min: &self.u_min - u_offset,
            u_max: &self.u_max - u_offset,
            y_min: &self.y_min - y_offset,
            y_max: &self.y_max - y_offset,
            ..self.clone()
        }
    }

    /// Flat `key=value` description for log headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        let vec = |v: &DVector<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        vec![
            ("horizon.n_p".into(), self.n_p.to_string()),
            ("horizon.n_c".into(), self.n_c.to_string()),
            ("horizon.n_s".into(), self.n_s.to_string()),
            ("horizon.s".into(), self.s.to_string()),
            ("horizon.lambda".into(), self.lambda.to_string()),
            ("horizon.mu".into(), self.mu.to_string()),
            ("horizon.u_min".into(), vec(&self.u_min)),
            ("horizon.u_max".into(), vec(&self.u_max)),
            ("horizon.y_min".into(), vec(&self.y_min)),
            ("horizon.y_max".into(), vec(&self.y_max)),
            ("horizon.eps1".into(), self.eps1.to_string()),
            ("horizon.max_alt_iter".into(), self.max_alt_iter.to_string()),
            (
                "horizon.init".into(),
                match self.init {
                    HatInit::Zero => "zero".into(),
                    HatInit::WarmStart => "warm".into(),
                },
            ),
            (
                "horizon.exclude_past_differences".into(),
                self.exclude_past_differences.to_string(),
            ),
            ("horizon.qp_tol".into(), self.qp_tol.to_string()),
            ("horizon.qp_max_iter".into(), self.qp_max_iter.to_string()),
        ]
    }
}

fn check_bounds(name: &str, lo: &DVector<f64>, hi: &DVector<f64>, len: usize) -> Result<()> {
    if lo.len() != len || hi.len() != len {
        return Err(Error::InvalidParameter(format!(
            "{name} bounds must have length {len}, got {} and {}",
            lo.len(),
            hi.len()
        )));
    }
    for i in 0..len {
        if lo[i].is_nan() || hi[i].is_nan() || !(lo[i] < hi[i]) {
            return Err(Error::InvalidParameter(format!(
                "{name}_min[{i}]={} must be below {name}_max[{i}]={}",
                lo[i], hi[i]
            )));
        }
    }
    Ok(())
}
