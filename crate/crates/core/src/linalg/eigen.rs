//! Symmetric eigensolver with a dense path and a restarted Lanczos path.
//!
//! Both paths satisfy the same contract: every returned pair has relative
//! residual `‖Av − λv‖ / ‖A‖∞ ≤ 1e-8`, vectors are unit-norm, and the sign of
//! each vector is fixed so that its largest-magnitude entry is positive.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::csr::CsrMatrix;
use crate::error::{GfaError, Result};

/// Relative residual every returned eigenpair must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Above this size `SolverPath::Auto` switches from the dense to the Lanczos path.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverPath {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Normalized diffusion operator `D̃^{-1/2} V D̃^{-1/2}`.
    HSs1,
    /// Combinatorial Laplacian `D − W` of an unweighted graph.
    UnweightedLaplacian,
    /// Symmetric normalized Laplacian `D^{-1/2} (D − W) D^{-1/2}`.
    NormalizedLaplacian,
    Generic,
}

#[derive(Debug, Clone)]
pub enum OperatorMatrix {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        match self {
            OperatorMatrix::Dense(m) => m.nrows(),
            OperatorMatrix::Sparse(m) => m.nrows(),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OperatorMatrix::Dense(m) => m * x,
            OperatorMatrix::Sparse(m) => m.mul_vec(x),
        }
    }

    fn norm_inf(&self) -> f64 {
        match self {
            OperatorMatrix::Dense(m) => m
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            OperatorMatrix::Sparse(m) => m.norm_inf(),
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        match self {
            OperatorMatrix::Dense(m) => m.clone(),
            OperatorMatrix::Sparse(m) => m.to_dense(),
        }
    }
}

/// A real symmetric operator tagged with where it came from.
#[derive(Debug, Clone)]
pub struct SymmetricOperator {
    matrix: OperatorMatrix,
    kind: OperatorKind,
}

impl SymmetricOperator {
    pub fn new(matrix: OperatorMatrix, kind: OperatorKind) -> Result<Self> {
        let n = matrix.dim();
        let scale = matrix.norm_inf().max(1.0);
        let tol = 1e-10 * scale;
        let symmetric = match &matrix {
            OperatorMatrix::Dense(m) => {
                m.is_square()
                    && (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
            }
            OperatorMatrix::Sparse(m) => m.nrows() == m.ncols() && m.is_symmetric(tol),
        };
        if !symmetric {
            return Err(GfaError::invalid("operator is not symmetric within 1e-10"));
        }
        if kind == OperatorKind::UnweightedLaplacian {
            let ones = DVector::from_element(n, 1.0);
            let rs = matrix.apply(&ones);
            if rs.amax() > tol {
                return Err(GfaError::invalid("Laplacian rows must sum to zero"));
            }
        }
        Ok(SymmetricOperator { matrix, kind })
    }

    pub fn dense(m: DMatrix<f64>, kind: OperatorKind) -> Result<Self> {
        Self::new(OperatorMatrix::Dense(m), kind)
    }

    pub fn sparse(m: CsrMatrix, kind: OperatorKind) -> Result<Self> {
        Self::new(OperatorMatrix::Sparse(m), kind)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.apply(x)
    }
}

/// Eigenpairs ordered from the requested end of the spectrum inward:
/// ascending for `Which::Smallest`, descending for `Which::Largest`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

pub fn eigensolve_symmetric(op: &SymmetricOperator, m: usize, which: Which) -> Result<EigenPairs> {
    eigensolve_symmetric_with(op, m, which, SolverPath::Auto)
}

pub fn eigensolve_symmetric_with(
    op: &SymmetricOperator,
    m: usize,
    which: Which,
    path: SolverPath,
) -> Result<EigenPairs> {
    let n = op.dim();
    if m == 0 || m >= n {
        return Err(GfaError::invalid(format!(
            "requested {m} eigenpairs of a {n}x{n} operator; need 1 <= m < n"
        )));
    }
    let use_dense = match path {
        SolverPath::Dense => true,
        SolverPath::Lanczos => false,
        SolverPath::Auto => n <= DENSE_LIMIT,
    };
    let mut pairs = if use_dense {
        dense_solve(op, m, which)?
    } else {
        lanczos_solve(op, m, which)?
    };
    for k in 0..m {
        let mut col = pairs.vectors.column_mut(k);
        let norm = col.norm();
        col /= norm;
        fix_sign(&mut pairs.vectors, k);
    }
    let worst = worst_residual(op, &pairs);
    if !(worst <= RESIDUAL_TOL) {
        return Err(GfaError::NonConvergence { residual: worst });
    }
    Ok(pairs)
}

/// All `n` eigenpairs in ascending order from the dense path, with the same
/// normalization and sign convention as [`eigensolve_symmetric`].
pub fn eigensolve_all(op: &SymmetricOperator) -> Result<EigenPairs> {
    let n = op.dim();
    let mut pairs = dense_solve(op, n, Which::Smallest)?;
    for k in 0..n {
        fix_sign(&mut pairs.vectors, k);
    }
    Ok(pairs)
}

/// Largest relative residual over the returned pairs.
pub fn worst_residual(op: &SymmetricOperator, pairs: &EigenPairs) -> f64 {
    let norm = op.matrix.norm_inf().max(f64::MIN_POSITIVE);
    (0..pairs.values.len())
        .map(|k| {
            let v = pairs.vectors.column(k).into_owned();
            let r = op.apply(&v) - &v * pairs.values[k];
            r.norm() / norm
        })
        .fold(0.0, f64::max)
}

/// Makes the largest-magnitude entry of column `k` positive. Entries within a
/// relative 1e-9 of the maximum count as ties; the lowest index wins.
fn fix_sign(vectors: &mut DMatrix<f64>, k: usize) {
    let col = vectors.column(k);
    let amax = col.amax();
    if amax == 0.0 {
        return;
    }
    let pivot = col
        .iter()
        .position(|v| v.abs() >= amax * (1.0 - 1e-9))
        .expect("non-empty column");
    if col[pivot] < 0.0 {
        vectors.column_mut(k).neg_mut();
    }
}

fn select(values: &DVector<f64>, m: usize, which: Which) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps the solver's order for exact ties.
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        match which {
            Which::Smallest => c,
            Which::Largest => c.reverse(),
        }
    });
    order.truncate(m);
    order
}

fn dense_solve(op: &SymmetricOperator, m: usize, which: Which) -> Result<EigenPairs> {
    let a = op.matrix.to_dense();
    let n = a.nrows();
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0).ok_or(GfaError::NonConvergence {
        residual: f64::INFINITY,
    })?;
    let idx = select(&eig.eigenvalues, m, which);
    let mut vectors = DMatrix::zeros(n, m);
    for (k, &i) in idx.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok(EigenPairs {
        values: idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    })
}

/// Deterministic pseudo-random start/refill vector. Random directions avoid
/// the all-ones vector, an exact eigenvector of every Laplacian, and any
/// symmetry of the operator.
fn seed_vector(n: usize, salt: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + salt as u64);
    DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)))
}

/// Orthogonalizes `w` against the columns of `basis` (two passes of classical
/// Gram-Schmidt) and returns its remaining norm.
fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) -> f64 {
    for _ in 0..2 {
        for v in basis {
            let c = v.dot(w);
            w.axpy(-c, v, 1.0);
        }
    }
    w.norm()
}

/// Thick-restart block Lanczos with full reorthogonalization and an explicitly
/// projected Rayleigh quotient `T = Vᵀ A V`. A single Krylov sequence sees only
/// one direction of each degenerate eigenspace, so the basis is grown from a
/// block of `m` start vectors; this resolves multiplicities up to `m`.
fn lanczos_solve(op: &SymmetricOperator, m: usize, which: Which) -> Result<EigenPairs> {
    let n = op.dim();
    let anorm = op.matrix.norm_inf().max(f64::MIN_POSITIVE);
    let max_dim = n.min((3 * m + 40).max(80));
    let keep = (2 * m).max(m + 10).min(max_dim.saturating_sub(10)).max(m);
    let max_restarts = 500;

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_dim + 1);
    let mut images: Vec<DVector<f64>> = Vec::with_capacity(max_dim + 1);
    let mut t = DMatrix::<f64>::zeros(max_dim + 1, max_dim + 1);

    let block = m.max(2);
    // Directions still to be orthogonalized into the basis, oldest first.
    let mut queue: VecDeque<DVector<f64>> = (0..block).map(|b| seed_vector(n, b)).collect();
    let mut refills = block;
    let mut worst = f64::INFINITY;

    for _restart in 0..max_restarts {
        // Expand the basis up to max_dim.
        while basis.len() < max_dim {
            // Candidates are normalized first so the rank test is relative.
            let mut take = |queue: &mut VecDeque<DVector<f64>>| {
                let mut w = queue.pop_front().unwrap_or_else(|| {
                    refills += 1;
                    seed_vector(n, refills)
                });
                let s = w.norm();
                if s > 0.0 {
                    w /= s;
                }
                w
            };
            let mut w = take(&mut queue);
            let mut norm = orthogonalize(&mut w, &basis);
            while norm <= 1e-10 && basis.len() < n {
                // Direction already spanned: take the next one, or a fresh one.
                w = take(&mut queue);
                norm = orthogonalize(&mut w, &basis);
            }
            if norm <= 1e-10 {
                break;
            }
            w /= norm;
            let aw = op.apply(&w);
            let j = basis.len();
            for (i, v) in basis.iter().enumerate() {
                let tij = v.dot(&aw);
                t[(i, j)] = tij;
                t[(j, i)] = tij;
            }
            t[(j, j)] = w.dot(&aw);
            queue.push_back(aw.clone());
            basis.push(w);
            images.push(aw);
        }

        let dim = basis.len();
        let tk = t.view((0, 0), (dim, dim)).into_owned();
        let eig = SymmetricEigen::new(tk);
        let order = select(&eig.eigenvalues, dim, which);

        let ritz = |k: usize| -> (f64, DVector<f64>, DVector<f64>) {
            let s = eig.eigenvectors.column(order[k]);
            let mut u = DVector::zeros(n);
            let mut au = DVector::zeros(n);
            for (i, si) in s.iter().enumerate() {
                u.axpy(*si, &basis[i], 1.0);
                au.axpy(*si, &images[i], 1.0);
            }
            (eig.eigenvalues[order[k]], u, au)
        };

        let wanted: Vec<_> = (0..m).map(ritz).collect();
        worst = wanted
            .iter()
            .map(|(theta, u, au)| (au - u * *theta).norm() / anorm)
            .fold(0.0, f64::max);
        if worst <= 0.1 * RESIDUAL_TOL || dim == n {
            let mut vectors = DMatrix::zeros(n, m);
            let mut values = Vec::with_capacity(m);
            for (k, (theta, u, _)) in wanted.into_iter().enumerate() {
                vectors.set_column(k, &u);
                values.push(theta);
            }
            return Ok(EigenPairs { values, vectors });
        }

        // Restart from the `keep` best Ritz vectors; the next direction is the
        // residual of the least-converged wanted pair.
        let kept: Vec<_> = (0..keep.min(dim - 1)).map(ritz).collect();
        let mut by_residual: Vec<(f64, DVector<f64>)> = wanted
            .iter()
            .map(|(theta, u, au)| {
                let r = au - u * *theta;
                (r.norm(), r)
            })
            .collect();
        by_residual.sort_by(|a, b| b.0.total_cmp(&a.0));
        queue = by_residual.into_iter().take(block).map(|(_, r)| r).collect();

        basis.clear();
        images.clear();
        t.fill(0.0);
        for (k, (theta, u, au)) in kept.into_iter().enumerate() {
            t[(k, k)] = theta;
            basis.push(u);
            images.push(au);
        }
        // Re-project to absorb rounding drift in the kept block.
        for i in 0..basis.len() {
            for j in 0..=i {
                let tij = basis[i].dot(&images[j]);
                t[(i, j)] = tij;
                t[(j, i)] = tij;
            }
        }
    }
    Err(GfaError::NonConvergence { residual: worst })
}
