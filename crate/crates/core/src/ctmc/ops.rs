use nalgebra::DMatrix;

use super::generator::GeneratorMatrix;
use crate::error::{GfaError, Result};
use crate::linalg::CsrMatrix;

/// Default uniformisation step `0.5 / max_i |Q_ii|` (1 for the zero generator).
pub fn default_eps(q: &GeneratorMatrix) -> f64 {
    let m = q.max_exit_rate();
    if m > 0.0 {
        0.5 / m
    } else {
        1.0
    }
}

/// Similarity matrix `W = D (I + eps Q)` with `D` chosen so that `W_ii = 1`.
///
/// Requires `0 < eps < 1 / max_i |Q_ii|`, which keeps every diagonal of
/// `I + eps Q` strictly positive.
pub fn uniformise(q: &GeneratorMatrix, eps: f64) -> Result<DMatrix<f64>> {
    Ok(uniformise_sparse(q, eps)?.to_dense())
}

/// Sparse form of [`uniformise`]; `W` has the sparsity pattern of `Q`.
pub fn uniformise_sparse(q: &GeneratorMatrix, eps: f64) -> Result<CsrMatrix> {
    let max_exit = q.max_exit_rate();
    if !(eps > 0.0) || !eps.is_finite() || eps * max_exit >= 1.0 {
        return Err(GfaError::EpsOutOfRange {
            eps,
            max_exit_rate: max_exit,
        });
    }
    let n = q.n_states();
    let mut trip = Vec::with_capacity(n + q.n_transitions());
    for i in 0..n {
        let pii = 1.0 + eps * q.diag()[i];
        trip.push((i, i, 1.0));
        for (j, r) in q.transitions(i) {
            trip.push((i, j, eps * r / pii));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, trip))
}

/// Per-state drift `R_i = Σ_{j≠i} (Y_j − Y_i) Q_ij`.
pub fn drift_observations(q: &GeneratorMatrix, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.nrows() != q.n_states() {
        return Err(GfaError::DimensionMismatch(format!(
            "embedding has {} rows, generator has {} states",
            y.nrows(),
            q.n_states()
        )));
    }
    let k = y.ncols();
    let mut r = DMatrix::zeros(y.nrows(), k);
    for i in 0..q.n_states() {
        for (j, rate) in q.transitions(i) {
            for c in 0..k {
                r[(i, c)] += (y[(j, c)] - y[(i, c)]) * rate;
            }
        }
    }
    Ok(r)
}
