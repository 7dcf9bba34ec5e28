//! Minimal compressed-sparse-row matrix used for generators and graph operators.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed,
    /// explicit zeros (after summation) are dropped, and columns are sorted per row.
    ///
    /// Panics if a triplet lies outside the declared shape.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    indices.push(j);
                    values.push(sum);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let trip = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[(i, j)]));
        Self::from_triplets(m.nrows(), m.ncols(), trip)
    }

    pub fn nrows(&self) -> usize {
        self.n_rows
    }

    pub fn ncols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(i, j, v)| (j, i, v)))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n_cols);
        DVector::from_iterator(
            self.n_rows,
            (0..self.n_rows).map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>()
            }),
        )
    }

    /// `xᵀ A` returned as a column vector, i.e. `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n_rows);
        let mut out = DVector::zeros(self.n_cols);
        for i in 0..self.n_rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[j] += v * xi;
            }
        }
        out
    }

    pub fn mul_dense(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.n_cols);
        let mut out = DMatrix::zeros(self.n_rows, y.ncols());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for c in 0..y.ncols() {
                    out[(i, c)] += v * y[(j, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    /// Maximum absolute row sum (the induced ∞-norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 0.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 5.0, 0.0]);
        let s = CsrMatrix::from_dense(&d);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(s.mul_vec(&x), &d * &x);
        assert_eq!(s.tr_mul_vec(&x), d.transpose() * &x);
        assert_eq!(s.transpose().to_dense(), d.transpose());
        assert_eq!(s.norm_inf(), 9.0);
    }
}
