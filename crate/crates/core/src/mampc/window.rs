use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inputs over the window `k-n_s ..= k+n_c-1`, stacked channel-major:
/// entries `c*W .. (c+1)*W` are channel `c` at times `k-n_s, ..., k+n_c-1`
/// where `W = n_c + n_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInput {
    v: DVector<f64>,
    channels: usize,
    n_s: usize,
    n_c: usize,
}

impl StackedInput {
    pub fn new(v: DVector<f64>, channels: usize, n_s: usize, n_c: usize) -> Result<Self> {
        let expected = channels * (n_s + n_c);
        if v.len() != expected {
            return Err(Error::dim("StackedInput", expected, v.len()));
        }
        Ok(StackedInput { v, channels, n_s, n_c })
    }

    /// Builds the window from `n_s` past samples and `n_c` free samples,
    /// both given oldest first.
    pub fn from_parts(past: &[DVector<f64>], free: &[DVector<f64>], channels: usize) -> Result<Self> {
        let n_s = past.len();
        let n_c = free.len();
        let w = n_s + n_c;
        let mut v = DVector::zeros(channels * w);
        for (t, u) in past.iter().chain(free.iter()).enumerate() {
            if u.len() != channels {
                return Err(Error::dim("StackedInput sample", channels, u.len()));
            }
            for c in 0..channels {
                v[c * w + t] = u[c];
            }
        }
        Ok(StackedInput { v, channels, n_s, n_c })
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.v
    }
    pub fn into_vector(self) -> DVector<f64> {
        self.v
    }
    pub fn window(&self) -> usize {
        self.n_s + self.n_c
    }

    /// Position of channel `c` at window time `t` (`t = 0` is `k - n_s`).
    pub fn index(&self, c: usize, t: usize) -> usize {
        c * self.window() + t
    }

    /// All channels at window time `t`.
    pub fn sample(&self, t: usize) -> DVector<f64> {
        DVector::from_fn(self.channels, |c, _| self.v[self.index(c, t)])
    }

    /// The free inputs `u[k], ..., u[k+n_c-1]` stacked time-major.
    pub fn free_time_major(&self) -> DVector<f64> {
        let m = self.channels;
        DVector::from_fn(self.n_c * m, |i, _| {
            let (q, c) = (i / m, i % m);
            self.v[self.index(c, self.n_s + q)]
        })
    }

    /// Input applied at time `k`.
    pub fn first_free(&self) -> DVector<f64> {
        self.sample(self.n_s)
    }

    pub fn past(&self) -> Vec<DVector<f64>> {
        (0..self.n_s).map(|t| self.sample(t)).collect()
    }
}

/// First-difference operator `Psi`: block-diagonal with one upper
/// bi-diagonal block (`-1` on the diagonal, `+1` above it) per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    psi: DMatrix<f64>,
    channels: usize,
    window: usize,
}

impl DifferenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn window(&self) -> usize {
        self.window
    }
    /// Number of difference rows, `m (W - 1)`.
    pub fn rows(&self) -> usize {
        self.psi.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.psi * v
    }
}

pub fn build_difference_matrix(m: usize, n_c: usize, n_s: usize) -> Result<DifferenceMatrix> {
    let w = n_c + n_s;
    if w < 2 {
        return Err(Error::InvalidParameter(format!(
            "difference operator needs n_c + n_s >= 2, got {w}"
        )));
    }
    let rows = w - 1;
    let mut psi = DMatrix::zeros(m * rows, m * w);
    for c in 0..m {
        for j in 0..rows {
            psi[(c * rows + j, c * w + j)] = -1.0;
            psi[(c * rows + j, c * w + j + 1)] = 1.0;
        }
    }
    Ok(DifferenceMatrix { psi, channels: m, window: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn single_channel_block() {
        let d = build_difference_matrix(1, 2, 1).unwrap();
        assert_eq!(*d.matrix(), dmatrix![-1.0, 1.0, 0.0; 0.0, -1.0, 1.0]);
    }

    #[test]
    fn two_channels_block_diagonal() {
        let d = build_difference_matrix(2, 1, 1).unwrap();
        assert_eq!(*d.matrix(), dmatrix![-1.0, 1.0, 0.0, 0.0; 0.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn rows_sum_to_zero_and_constants_vanish() {
        let d = build_difference_matrix(3, 4, 2).unwrap();
        for r in 0..d.rows() {
            let row = d.matrix().row(r);
            assert_eq!(row.sum(), 0.0);
            assert_eq!(row.iter().filter(|&&x| x == -1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            let minus = row.iter().position(|&x| x == -1.0).unwrap();
            assert_eq!(row[minus + 1], 1.0);
        }
        let v = DVector::from_fn(18, |i, _| (i / 6) as f64 * 3.0 - 1.0);
        assert_eq!(d.apply(&v).amax(), 0.0);
    }

    #[test]
    fn rejects_short_window() {
        assert!(build_difference_matrix(2, 1, 0).is_err());
    }

    #[test]
    fn differences_follow_channel_major_layout() {
        let past = [dvector![1.0, 10.0]];
        let free = [dvector![2.0, 20.0], dvector![4.0, 40.0]];
        let s = StackedInput::from_parts(&past, &free, 2).unwrap();
        assert_eq!(*s.as_vector(), dvector![1.0, 2.0, 4.0, 10.0, 20.0, 40.0]);
        let d = build_difference_matrix(2, 2, 1).unwrap();
        assert_eq!(d.apply(s.as_vector()), dvector![1.0, 2.0, 10.0, 20.0]);
        assert_eq!(s.free_time_major(), dvector![2.0, 20.0, 4.0, 40.0]);
        assert_eq!(s.first_free(), dvector![2.0, 20.0]);
        assert_eq!(s.past(), vec![dvector![1.0, 10.0]]);
    }
}
