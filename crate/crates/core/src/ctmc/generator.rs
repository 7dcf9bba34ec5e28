use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{GfaError, Result};
use crate::linalg::CsrMatrix;

/// Sparse CTMC rate matrix `Q`. Only off-diagonal rates are stored; the
/// diagonal is always the negated off-diagonal row sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    offdiag: CsrMatrix,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    /// Builds `Q` from off-diagonal `(i, j, rate)` entries. Duplicate entries are
    /// summed and zero rates dropped.
    pub fn from_rates(n_states: usize, rates: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n_states == 0 {
            return Err(GfaError::invalid("a generator needs at least one state"));
        }
        let mut trip = Vec::new();
        for (i, j, r) in rates {
            if i >= n_states || j >= n_states {
                return Err(GfaError::invalid(format!(
                    "transition ({i}, {j}) outside [0, {n_states})"
                )));
            }
            if i == j {
                return Err(GfaError::invalid(format!("diagonal entry ({i}, {i}) given explicitly")));
            }
            if !(r >= 0.0) || !r.is_finite() {
                return Err(GfaError::invalid(format!("rate {r} at ({i}, {j}) must be finite and >= 0")));
            }
            trip.push((i, j, r));
        }
        Ok(Self::from_csr(CsrMatrix::from_triplets(n_states, n_states, trip)))
    }

    fn from_csr(offdiag: CsrMatrix) -> Self {
        let diag = (0..offdiag.nrows())
            .map(|i| -offdiag.row(i).1.iter().sum::<f64>())
            .collect();
        GeneratorMatrix { offdiag, diag }
    }

    /// Builds `Q` from a dense matrix; the given diagonal is ignored and recomputed.
    pub fn from_dense(q: &DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(GfaError::DimensionMismatch("generator must be square".into()));
        }
        let n = q.nrows();
        Self::from_rates(
            n,
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j)
                .map(|(i, j)| (i, j, q[(i, j)])),
        )
    }

    /// The all-zero generator on `n` states.
    pub fn zeros(n_states: usize) -> Self {
        Self::from_csr(CsrMatrix::from_triplets(n_states, n_states, std::iter::empty()))
    }

    pub fn n_states(&self) -> usize {
        self.diag.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.offdiag.nnz()
    }

    pub fn offdiag(&self) -> &CsrMatrix {
        &self.offdiag
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `Q_ij`, including the diagonal.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.offdiag.get(i, j)
        }
    }

    /// `−Q_ii`, the total exit rate of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.diag[i]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }

    /// Outgoing transitions of state `i` as `(target, rate)`.
    pub fn transitions(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (cols, vals) = self.offdiag.row(i);
        cols.iter().copied().zip(vals.iter().copied())
    }

    /// All off-diagonal entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.offdiag.iter()
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.offdiag.row(i).0.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut q = self.offdiag.to_dense();
        for (i, d) in self.diag.iter().enumerate() {
            q[(i, i)] = *d;
        }
        q
    }

    /// `Q Y` for a dense `Y` with one row per state.
    pub fn mul_dense(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.offdiag.mul_dense(y);
        for (i, d) in self.diag.iter().enumerate() {
            for c in 0..y.ncols() {
                out[(i, c)] += d * y[(i, c)];
            }
        }
        out
    }

    /// `Qᵀ p`, the right-hand side of the forward equation.
    pub fn tr_mul_vec(&self, p: &DVector<f64>) -> DVector<f64> {
        let mut out = self.offdiag.tr_mul_vec(p);
        for (i, d) in self.diag.iter().enumerate() {
            out[i] += d * p[i];
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.offdiag.is_symmetric(tol)
    }

    /// Applies `f` to every off-diagonal rate; entries mapped to zero are
    /// removed and the diagonal is recomputed.
    pub fn map_rates(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let n = self.n_states();
        let trip: Vec<_> = self.entries().map(|(i, j, r)| (i, j, f(i, j, r))).collect();
        Self::from_csr(CsrMatrix::from_triplets(n, n, trip))
    }

    /// Copy of `Q` with the rows of `states` zeroed, making them absorbing.
    pub fn with_absorbing(&self, states: &[bool]) -> Self {
        self.map_rates(|i, _, r| if states[i] { 0.0 } else { r })
    }

    /// Checks the generator invariants: non-negative finite off-diagonals and
    /// row sums within `1e-12`.
    pub fn validate(&self) -> Result<()> {
        for (i, j, r) in self.entries() {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(GfaError::invalid(format!("bad rate {r} at ({i}, {j})")));
            }
        }
        for i in 0..self.n_states() {
            let s: f64 = self.offdiag.row(i).1.iter().sum::<f64>() + self.diag[i];
            if s.abs() > 1e-12 {
                return Err(GfaError::invalid(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Coordinate-list text: a `n_states N` header followed by one `i j rate`
    /// line per off-diagonal entry. Rates use shortest round-trip formatting.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_states {}", self.n_states()).unwrap();
        for (i, j, r) in self.entries() {
            writeln!(s, "{i} {j} {r}").unwrap();
        }
        s
    }

    pub fn from_coo_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| GfaError::Parse("empty generator file".into()))?;
        let n: usize = header
            .strip_prefix("n_states")
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| GfaError::Parse(format!("bad header `{header}`")))?;
        let mut rates = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let parsed = (|| {
                let i: usize = it.next()?.parse().ok()?;
                let j: usize = it.next()?.parse().ok()?;
                let r: f64 = it.next()?.parse().ok()?;
                it.next().is_none().then_some((i, j, r))
            })();
            rates.push(parsed.ok_or_else(|| GfaError::Parse(format!("bad entry `{line}`")))?);
        }
        Self::from_rates(n, rates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_negated_row_sum() {
        let q = GeneratorMatrix::from_rates(3, vec![(0, 1, 1.0), (0, 2, 2.5), (2, 0, 0.5)]).unwrap();
        assert_eq!(q.diag(), &[-3.5, 0.0, -0.5]);
        assert!(q.is_absorbing(1));
        q.validate().unwrap();
        assert_eq!(q.max_exit_rate(), 3.5);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(GeneratorMatrix::from_rates(2, vec![(0, 2, 1.0)]).is_err());
        assert!(GeneratorMatrix::from_rates(2, vec![(0, 1, -1.0)]).is_err());
        assert!(GeneratorMatrix::from_rates(2, vec![(1, 1, 1.0)]).is_err());
        assert!(GeneratorMatrix::from_rates(2, vec![(0, 1, f64::NAN)]).is_err());
    }

    #[test]
    fn coo_text_round_trips_exactly() {
        let q = GeneratorMatrix::from_rates(3, vec![(0, 1, 1.0 / 3.0), (2, 1, 1e-300), (1, 0, 0.1)]).unwrap();
        let text = q.to_coo_text();
        assert!(text.starts_with("n_states 3\n"));
        assert_eq!(GeneratorMatrix::from_coo_text(&text).unwrap(), q);
        assert!(GeneratorMatrix::from_coo_text("n_states 2\n0 1\n").is_err());
    }

    #[test]
    fn dense_products() {
        let q = GeneratorMatrix::from_rates(2, vec![(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(q.mul_dense(&y), DMatrix::from_row_slice(2, 1, &[1.0, -2.0]));
        assert_eq!(q.to_dense(), DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]));
    }
}
