//! Discrete-time linear state-space models.
//!
//! `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k] + D u[k]`, plus zero-order-hold
//! discretization and the lifted prediction maps used by both controllers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    dt: f64,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        dt: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("LtiModel A", "square", format!("{}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim("LtiModel B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("LtiModel C cols", n, c.ncols()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(
                "LtiModel D",
                format!("{}x{}", c.nrows(), b.ncols()),
                format!("{}x{}", d.nrows(), d.ncols()),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("sample time must be positive, got {dt}")));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("LtiModel {name}")));
            }
        }
        Ok(LtiModel { a, b, c, d, dt })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    /// Impulse response `D, CB, CAB, CA^2B, ...` (the first `count` terms).
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ab = self.b.clone();
        for _ in 1..count {
            out.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        out
    }

    /// Equilibrium state for a constant input, `(I - A)^-1 B u`.
    pub fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.states();
        let m = DMatrix::identity(n, n) - &self.a;
        m.lu()
            .solve(&(&self.b * u))
            .ok_or_else(|| Error::RankDeficient("I - A is singular (integrating model)".into()))
    }

    /// Spectral radius of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Matrix exponential by scaling and squaring with a truncated Taylor kernel.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = (0..n)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);
    // ||scaled|| <= 0.5, so 20 terms leave a remainder well below 1e-16.
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact discretization of `dx/dt = Ac x + Bc u` under a zero-order hold.
pub fn zoh_discretize(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    cc: &DMatrix<f64>,
    dc: &DMatrix<f64>,
    dt: f64,
) -> Result<LtiModel> {
    let n = ac.nrows();
    let m = bc.ncols();
    if ac.ncols() != n || bc.nrows() != n {
        return Err(Error::dim("zoh_discretize", format!("Ac {n}x{n}, Bc {n}xm"), format!(
            "Ac {}x{}, Bc {}x{}",
            ac.nrows(),
            ac.ncols(),
            bc.nrows(),
            bc.ncols()
        )));
    }
    if ac.iter().chain(bc.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("zoh_discretize: continuous-time matrices".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("sample time must be positive, got {dt}")));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = expm(&aug);
    let a = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, m)).into_owned();
    LtiModel::new(a, b, cc.clone(), dc.clone(), dt)
}

/// State and output sequences from [`simulate`]; row `t` holds time step `t`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
}

/// Run the state recursion from `x0` over the input rows of `u` (`T x m`).
pub fn simulate(model: &LtiModel, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory> {
    if x0.len() != model.states() {
        return Err(Error::dim("simulate x0", model.states(), x0.len()));
    }
    if u.ncols() != model.inputs() {
        return Err(Error::dim("simulate input columns", model.inputs(), u.ncols()));
    }
    let steps = u.nrows();
    let mut states = DMatrix::zeros(steps, model.states());
    let mut outputs = DMatrix::zeros(steps, model.outputs());
    let mut x = x0.clone();
    for t in 0..steps {
        let ut = u.row(t).transpose();
        states.row_mut(t).copy_from(&x.transpose());
        outputs.row_mut(t).copy_from(&model.output(&x, &ut).transpose());
        x = model.step(&x, &ut);
    }
    Ok(Trajectory { states, outputs })
}

/// Affine map from the initial state and free inputs to stacked predictions
/// `y[k+1], ..., y[k+n_p]`.
///
/// Free inputs are stacked time-major (`u[k]`, then `u[k+1]`, ...). The last
/// free input is held for steps `n_c..n_p`; its column block in `gamma`
/// absorbs those steps.
#[derive(Debug, Clone)]
pub struct LiftedPrediction {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub n_p: usize,
    pub n_c: usize,
}

impl LiftedPrediction {
    pub fn predict(&self, x0: &DVector<f64>, u_free: &DVector<f64>) -> DVector<f64> {
        &self.phi * x0 + &self.gamma * u_free
    }
}

pub fn lift(model: &LtiModel, n_p: usize, n_c: usize) -> Result<LiftedPrediction> {
    if n_c == 0 || n_c > n_p {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_c <= n_p, got n_c={n_c}, n_p={n_p}"
        )));
    }
    let (n, m, l) = (model.states(), model.inputs(), model.outputs());
    let mut phi = DMatrix::zeros(n_p * l, n);
    let mut gamma = DMatrix::zeros(n_p * l, n_c * m);

    // a_pow[i] = A^i for i in 0..=n_p
    let mut a_pow = Vec::with_capacity(n_p + 1);
    a_pow.push(DMatrix::identity(n, n));
    for i in 1..=n_p {
        let next = model.a() * &a_pow[i - 1];
        a_pow.push(next);
    }
    // markov[i] = C A^i B
    let markov: Vec<DMatrix<f64>> = a_pow.iter().map(|ap| model.c() * ap * model.b()).collect();

    for i in 1..=n_p {
        let row = (i - 1) * l;
        phi.view_mut((row, 0), (l, n)).copy_from(&(model.c() * &a_pow[i]));
        // x[k+i] = A^i x0 + sum_{j<i} A^{i-1-j} B u[min(j, n_c-1)]
        for j in 0..i {
            let q = j.min(n_c - 1);
            let mut blk = gamma.view_mut((row, q * m), (l, m));
            blk += &markov[i - 1 - j];
        }
        let q = i.min(n_c - 1);
        let mut blk = gamma.view_mut((row, q * m), (l, m));
        blk += model.d();
    }
    Ok(LiftedPrediction { phi, gamma, n_p, n_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> LtiModel {
        LtiModel::new(
            dmatrix![a],
            dmatrix![b],
            dmatrix![c],
            dmatrix![d],
            1.0,
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> LtiModel {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        a *= 0.9 / rho.max(1e-3);
        LtiModel::new(
            a,
            DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(l, n, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(l, m, |_, _| rng.gen_range(-1.0..1.0)),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let err = LtiModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            1.0,
        );
        assert!(err.is_err());
        assert!(LtiModel::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0], 0.0).is_err());
    }

    #[test]
    fn zoh_integrator() {
        let m = zoh_discretize(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![0.0], 0.5)
            .unwrap();
        assert!((m.a()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m.b()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zoh_diagonal_exponential() {
        let a = -0.7;
        let ac = DMatrix::identity(3, 3) * a;
        let bc = DMatrix::from_element(3, 2, 1.0);
        let m = zoh_discretize(&ac, &bc, &DMatrix::zeros(1, 3), &DMatrix::zeros(1, 2), 0.3).unwrap();
        let expect = DMatrix::identity(3, 3) * (a * 0.3f64).exp();
        assert!(max_abs_diff(m.a(), &expect) < 1e-14);
    }

    #[test]
    fn zoh_input_matrix_matches_fine_euler_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ac = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        ac -= DMatrix::identity(3, 3) * 2.0;
        let bc = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let dt = 0.1;
        let model = zoh_discretize(&ac, &bc, &DMatrix::zeros(1, 3), &DMatrix::zeros(1, 2), dt).unwrap();

        // Oracle: integrate dPhi/dt = Ac Phi with forward Euler at step dt/1e6 and
        // accumulate the integral of Phi(tau) dtau with the trapezoid rule.
        let steps = 1_000_000;
        let h = dt / steps as f64;
        let step_map = DMatrix::identity(3, 3) + &ac * h;
        let mut phi = DMatrix::<f64>::identity(3, 3);
        let mut integral = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..steps {
            let next = &step_map * &phi;
            integral += (&phi + &next) * (h / 2.0);
            phi = next;
        }
        let b_oracle = integral * &bc;
        assert!(max_abs_diff(model.b(), &b_oracle) < 1e-8, "{}", max_abs_diff(model.b(), &b_oracle));
    }

    #[test]
    fn zoh_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ac = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-2.0..2.0));
            let bc = DMatrix::from_fn(4, 1, |_, _| rng.gen_range(-1.0..1.0));
            let dt = rng.gen_range(0.05..1.0);
            let cc = DMatrix::zeros(1, 4);
            let dc = DMatrix::zeros(1, 1);
            let whole = zoh_discretize(&ac, &bc, &cc, &dc, dt).unwrap();
            let half = zoh_discretize(&ac, &bc, &cc, &dc, dt / 2.0).unwrap();
            let composed = half.a() * half.a();
            assert!(max_abs_diff(whole.a(), &composed) < 1e-9 * whole.a().amax().max(1.0));
        }
    }

    #[test]
    fn zoh_rejects_non_finite() {
        let r = zoh_discretize(&dmatrix![f64::NAN], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![0.0], 1.0);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn simulate_geometric_decay() {
        let m = scalar(0.5, 1.0, 1.0, 0.0);
        let traj = simulate(&m, &DVector::from_element(1, 1.0), &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(traj.outputs[(0, 0)], 1.0);
        assert_eq!(traj.outputs[(1, 0)], 0.5);
    }

    #[test]
    fn simulate_zero_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 2, 2);
        let traj = simulate(&m, &DVector::zeros(3), &DMatrix::zeros(10, 2)).unwrap();
        assert_eq!(traj.outputs.amax(), 0.0);
        assert_eq!(traj.states.amax(), 0.0);
    }

    #[test]
    fn simulate_matches_independent_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 3, 2, 2);
        let u = DMatrix::from_fn(25, 2, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let traj = simulate(&m, &x0, &u).unwrap();
        // elementwise loop written without nalgebra products
        let mut x: Vec<f64> = x0.iter().copied().collect();
        for t in 0..25 {
            for i in 0..2 {
                let mut y = 0.0;
                for j in 0..3 {
                    y += m.c()[(i, j)] * x[j];
                }
                for j in 0..2 {
                    y += m.d()[(i, j)] * u[(t, j)];
                }
                assert!((y - traj.outputs[(t, i)]).abs() < 1e-14);
            }
            let mut nx = vec![0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    nx[i] += m.a()[(i, j)] * x[j];
                }
                for j in 0..2 {
                    nx[i] += m.b()[(i, j)] * u[(t, j)];
                }
            }
            x = nx;
        }
    }

    /// Step-wise prediction with the last free input held, written directly.
    fn recursive_prediction(m: &LtiModel, x0: &DVector<f64>, u_free: &[DVector<f64>], n_p: usize) -> DVector<f64> {
        let n_c = u_free.len();
        let l = m.outputs();
        let mut out = DVector::zeros(n_p * l);
        let mut x = x0.clone();
        for i in 1..=n_p {
            x = m.step(&x, &u_free[(i - 1).min(n_c - 1)]);
            let y = m.output(&x, &u_free[i.min(n_c - 1)]);
            out.rows_mut((i - 1) * l, l).copy_from(&y);
        }
        out
    }

    #[test]
    fn lift_scalar_example() {
        let m = scalar(0.5, 1.0, 1.0, 0.0);
        let lp = lift(&m, 2, 2).unwrap();
        let y = lp.predict(&DVector::from_element(1, 1.0), &DVector::zeros(2));
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 0.25).abs() < 1e-15);
        let z = lp.predict(&DVector::zeros(1), &DVector::zeros(2));
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn lift_held_input_with_feedthrough() {
        let m = scalar(0.5, 1.0, 2.0, 0.3);
        let lp = lift(&m, 3, 1).unwrap();
        // y[k+1] = C B u + D u, y[k+2] = C(AB + B)u + Du, y[k+3] = C(A^2B + AB + B)u + Du
        let expect = [2.0 + 0.3, 2.0 * 1.5 + 0.3, 2.0 * 1.75 + 0.3];
        for (i, e) in expect.iter().enumerate() {
            assert!((lp.gamma[(i, 0)] - e).abs() < 1e-14);
        }
        let u = vec![DVector::from_element(1, 1.7)];
        let x0 = DVector::from_element(1, -0.4);
        let rec = recursive_prediction(&m, &x0, &u, 3);
        assert!((lp.predict(&x0, &u[0]) - rec).amax() < 1e-14);
    }

    #[test]
    fn lift_rejects_bad_horizons() {
        let m = scalar(0.5, 1.0, 1.0, 0.0);
        assert!(lift(&m, 2, 3).is_err());
        assert!(lift(&m, 2, 0).is_err());
    }

    #[test]
    fn lift_equals_recursion_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.gen_range(1..5);
            let m = rng.gen_range(1..4);
            let l = rng.gen_range(1..4);
            let n_p = rng.gen_range(1..12);
            let n_c = rng.gen_range(1..=n_p);
            let model = random_model(&mut rng, n, m, l);
            let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let u: Vec<DVector<f64>> =
                (0..n_c).map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0))).collect();
            let mut stacked = DVector::zeros(n_c * m);
            for (q, uq) in u.iter().enumerate() {
                stacked.rows_mut(q * m, m).copy_from(uq);
            }
            let lp = lift(&model, n_p, n_c).unwrap();
            let diff = (lp.predict(&x0, &stacked) - recursive_prediction(&model, &x0, &u, n_p)).amax();
            worst = worst.max(diff);
        }
        assert!(worst <= 1e-10, "worst {worst}");
    }

    #[test]
    fn markov_parameters_match_impulse_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 3, 1, 1);
        let mut u = DMatrix::zeros(6, 1);
        u[(0, 0)] = 1.0;
        let traj = simulate(&m, &DVector::zeros(3), &u).unwrap();
        for (k, mk) in m.markov_parameters(6).iter().enumerate() {
            assert!((mk[(0, 0)] - traj.outputs[(k, 0)]).abs() < 1e-14);
        }
    }
}
