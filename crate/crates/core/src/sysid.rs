//! Deterministic subspace identification of discrete LTI models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{simulate, LtiModel};

/// Input/output records with their column means removed.
#[derive(Debug, Clone, PartialEq)]
pub struct IoDataset {
    /// `T x m` inputs in deviation units.
    pub u: DMatrix<f64>,
    /// `T x l` outputs in deviation units.
    pub y: DMatrix<f64>,
    pub dt: f64,
    pub mean_u: DVector<f64>,
    pub mean_y: DVector<f64>,
}

impl IoDataset {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    /// Data in the original units.
    pub fn restore(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let add = |d: &DMatrix<f64>, mean: &DVector<f64>| {
            DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)] + mean[j])
        };
        (add(&self.u, &self.mean_u), add(&self.y, &self.mean_y))
    }

    /// Rows `range` of the data, keeping the same offsets.
    pub fn slice(&self, start: usize, len: usize) -> IoDataset {
        IoDataset {
            u: self.u.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
            ..self.clone()
        }
    }
}

/// Removes and records column means.
pub fn detrend(u: &DMatrix<f64>, y: &DMatrix<f64>, dt: f64) -> Result<IoDataset> {
    if u.nrows() != y.nrows() {
        return Err(Error::dim("dataset rows", u.nrows(), y.nrows()));
    }
    if u.nrows() == 0 {
        return Err(Error::EmptyWindow("dataset has no samples".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sample time must be positive, got {dt}")));
    }
    if u.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dataset".into()));
    }
    let center = |d: &DMatrix<f64>| {
        let mean = DVector::from_fn(d.ncols(), |j, _| d.column(j).mean());
        let centered = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)] - mean[j]);
        (centered, mean)
    };
    let (u, mean_u) = center(u);
    let (y, mean_y) = center(y);
    Ok(IoDataset { u, y, dt, mean_u, mean_y })
}

#[derive(Debug, Clone)]
pub struct Identification {
    /// Model in deviation units around `(mean_u, mean_y)` of the data.
    pub model: LtiModel,
    /// Initial state that best explains the identification data.
    pub x0: DVector<f64>,
    pub singular_values: Vec<f64>,
    pub order: usize,
    pub block_rows: usize,
    pub u_offset: DVector<f64>,
    pub y_offset: DVector<f64>,
}

/// Relative size below which singular values count as zero.
const RANK_TOL: f64 = 1e-10;

/// Order at the largest drop between consecutive singular values.
pub fn select_order(singular_values: &[f64]) -> Result<usize> {
    let top = singular_values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::RankDeficient("all singular values are zero: the data carries no excitation".into()));
    }
    let floor = top * 1e-15;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..singular_values.len() {
        if singular_values[k - 1] <= top * RANK_TOL {
            break;
        }
        let gap = singular_values[k - 1].ln() - singular_values[k].max(floor).ln();
        if gap > best.1 {
            best = (k, gap);
        }
    }
    Ok(best.0)
}

/// Least-squares solution of `a x = b` through the SVD, discarding
/// directions below `RANK_TOL` relative to the largest singular value.
fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    svd.solve(b, top * RANK_TOL).map_err(|e| Error::RankDeficient(e.to_string()))
}

/// Block Hankel matrix of `rows` block rows starting at sample `start`.
fn hankel(d: &DMatrix<f64>, start: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let w = d.ncols();
    DMatrix::from_fn(rows * w, cols, |r, c| d[(start + r / w + c, r % w)])
}

fn center_rows(h: &mut DMatrix<f64>) {
    for mut row in h.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
}

/// Identifies a model from detrended data.
///
/// Future outputs are projected onto past inputs and outputs along future
/// inputs; the SVD of the projection gives the extended observability
/// matrix, whose first block row is `C` and whose shift structure gives
/// `A`. `B`, `D` and the initial state follow from linear least squares on
/// the simulated response. `order = None` picks the order at the largest
/// singular-value gap; `block_rows = None` uses `2 order + 2` (with order 4
/// when the order is also chosen automatically).
pub fn subspace_identify(data: &IoDataset, order: Option<usize>, block_rows: Option<usize>) -> Result<Identification> {
    let (m, l) = (data.u.ncols(), data.y.ncols());
    if m == 0 || l == 0 {
        return Err(Error::InvalidParameter("dataset needs at least one input and one output".into()));
    }
    let i = block_rows.unwrap_or(2 * order.unwrap_or(4) + 2);
    if let Some(n) = order {
        if n == 0 || i <= n {
            return Err(Error::InvalidParameter(format!("need 0 < order < block_rows, got order {n}, block_rows {i}")));
        }
    }
    if i < 2 {
        return Err(Error::InvalidParameter("block_rows must be at least 2".into()));
    }
    let t = data.len();
    if t < 2 * i + i * (m + l) {
        return Err(Error::InvalidParameter(format!(
            "{t} samples are too few for {i} block rows"
        )));
    }
    let j = t - 2 * i + 1;
    let up = hankel(&data.u, 0, i, j);
    let uf = hankel(&data.u, i, i, j);
    let yp = hankel(&data.y, 0, i, j);
    let yf = hankel(&data.y, i, i, j);

    if uf.iter().all(|v| *v == 0.0) {
        return Err(Error::RankDeficient("inputs are identically zero: no excitation".into()));
    }

    // regress future outputs on [past data; future inputs]
    let wp_rows = i * (m + l);
    let mut z = DMatrix::zeros(wp_rows + i * m, j);
    z.rows_mut(0, i * m).copy_from(&up);
    z.rows_mut(i * m, i * l).copy_from(&yp);
    z.rows_mut(wp_rows, i * m).copy_from(&uf);
    // centering every Hankel row removes whatever constant offset survived
    // detrending without disturbing the linear relations between rows
    center_rows(&mut z);
    let mut yf = yf;
    center_rows(&mut yf);
    let coeffs = lstsq(&z.transpose(), &yf.transpose())?.transpose();
    let wp = z.rows(0, wp_rows);
    let projection = coeffs.columns(0, wp_rows) * wp;

    // SVD through the triangular factor of the projection's transpose
    let r = projection.transpose().qr().r();
    let svd = r.transpose().svd(true, false);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = idx.iter().map(|&k| svd.singular_values[k]).collect();
    let u_left = svd.u.as_ref().expect("left vectors requested");

    let n = match order {
        Some(n) => n,
        None => select_order(&singular_values)?,
    };
    let top = singular_values[0];
    if !(top > 0.0) {
        return Err(Error::RankDeficient("projection is zero: the data carries no excitation".into()));
    }
    if n > singular_values.len() || singular_values[n - 1] <= top * RANK_TOL {
        let sv = singular_values.get(n - 1).copied().unwrap_or(0.0);
        return Err(Error::RankDeficient(format!(
            "order {n} exceeds the numerical rank: singular value {n} is {sv:.3e} against {top:.3e}"
        )));
    }

    let mut gamma = DMatrix::zeros(i * l, n);
    for (col, &k) in idx.iter().take(n).enumerate() {
        gamma.set_column(col, &(u_left.column(k) * singular_values[col].sqrt()));
    }
    let c = gamma.rows(0, l).into_owned();
    let a = lstsq(&gamma.rows(0, (i - 1) * l).into_owned(), &gamma.rows(l, (i - 1) * l).into_owned())?;

    let (b, d, x0, bias) = fit_input_matrices(&a, &c, data)?;
    let model = LtiModel::new(a, b, c, d, data.dt)?;
    Ok(Identification {
        model,
        x0,
        singular_values,
        order: n,
        block_rows: i,
        u_offset: data.mean_u.clone(),
        y_offset: &data.mean_y + bias,
    })
}

/// `B`, `D`, `x0` and a constant output bias minimizing the simulation
/// error for fixed `A`, `C`.
fn fit_input_matrices(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    data: &IoDataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let (n, m, l, t) = (a.nrows(), data.u.ncols(), data.y.ncols(), data.len());
    let params = n + n * m + l * m + l;
    let mut phi = DMatrix::zeros(t * l, params);

    // free response to each unit initial state
    for k in 0..n {
        let mut x = DVector::zeros(n);
        x[k] = 1.0;
        for s in 0..t {
            phi.rows_mut(s * l, l).column_mut(k).copy_from(&(c * &x));
            x = a * x;
        }
    }
    // forced response to each entry of B
    for row in 0..n {
        for col in 0..m {
            let p = n + row * m + col;
            let mut x = DVector::zeros(n);
            for s in 0..t {
                phi.rows_mut(s * l, l).column_mut(p).copy_from(&(c * &x));
                x = a * x;
                x[row] += data.u[(s, col)];
            }
        }
    }
    // direct feedthrough
    for row in 0..l {
        for col in 0..m {
            let p = n + n * m + row * m + col;
            for s in 0..t {
                phi[(s * l + row, p)] = data.u[(s, col)];
            }
        }
    }
    for row in 0..l {
        for s in 0..t {
            phi[(s * l + row, params - l + row)] = 1.0;
        }
    }
    let target = DMatrix::from_fn(t * l, 1, |r, _| data.y[(r / l, r % l)]);
    let theta = lstsq(&phi, &target)?;
    let x0 = DVector::from_fn(n, |k, _| theta[(k, 0)]);
    let b = DMatrix::from_fn(n, m, |r, q| theta[(n + r * m + q, 0)]);
    let d = DMatrix::from_fn(l, m, |r, q| theta[(n + n * m + r * m + q, 0)]);
    let bias = DVector::from_fn(l, |r, _| theta[(params - l + r, 0)]);
    Ok((b, d, x0, bias))
}

/// Variance accounted for, percent, per output column.
pub fn vaf(measured: &DMatrix<f64>, simulated: &DMatrix<f64>) -> Result<Vec<f64>> {
    if measured.shape() != simulated.shape() {
        return Err(Error::dim(
            "vaf data",
            format!("{:?}", measured.shape()),
            format!("{:?}", simulated.shape()),
        ));
    }
    let var = |v: DVector<f64>| {
        let mean = v.mean();
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    Ok((0..measured.ncols())
        .map(|j| {
            let e = measured.column(j) - simulated.column(j);
            let vy = var(measured.column(j).into_owned());
            if vy == 0.0 {
                if var(e) == 0.0 { 100.0 } else { f64::NEG_INFINITY }
            } else {
                100.0 * (1.0 - var(e) / vy)
            }
        })
        .collect())
}

/// Simulation fit (VAF) of `model` on detrended data, with the initial
/// state estimated by least squares.
pub fn simulation_fit(model: &LtiModel, data: &IoDataset) -> Result<Vec<f64>> {
    let (_, _, x0, _) = fit_input_matrices(model.a(), model.c(), data)?;
    let sim = simulate(model, &x0, &data.u)?;
    vaf(&data.y, &sim.outputs)
}
