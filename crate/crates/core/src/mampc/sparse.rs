use nalgebra::DVector;

/// Euclidean projection of `w` onto vectors with at most `s` nonzeros: keep
/// the `s` largest magnitudes, zero the rest. Equal magnitudes keep the
/// lower index.
pub fn best_s_sparse(w: &DVector<f64>, s: usize) -> DVector<f64> {
    best_s_sparse_masked(w, s, &[])
}

/// As [`best_s_sparse`], but entries listed in `exempt` are copied through
/// unchanged and do not count against `s`.
pub fn best_s_sparse_masked(w: &DVector<f64>, s: usize, exempt: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(w.len());
    let mut order: Vec<usize> = (0..w.len()).filter(|i| !exempt.contains(i)).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
    for &i in order.iter().take(s) {
        out[i] = w[i];
    }
    for &i in exempt {
        out[i] = w[i];
    }
    out
}
