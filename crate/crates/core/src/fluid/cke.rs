//! Forward-equation oracles: exact state distributions `p_t = exp(t Qᵀ) π₀`,
//! their projection onto an embedding, and the spectral fluid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ode::validate_grid, Trajectory, TrajectoryKind};
use crate::ctmc::GeneratorMatrix;
use crate::embed::Embedding;
use crate::error::{GfaError, Result};
use crate::linalg::{expm, uniformization_action};

/// Largest chain solved with dense matrix exponentials; bigger chains use
/// uniformization.
pub const DENSE_CKE_LIMIT: usize = 2000;
/// Tolerance on `Σ π₀ = 1`.
pub const PROBABILITY_TOL: f64 = 1e-10;

/// Checks that `pi0` is a probability vector over `n` states.
pub fn validate_distribution(pi0: &[f64], n: usize) -> Result<()> {
    if pi0.len() != n {
        return Err(GfaError::DimensionMismatch(format!(
            "initial distribution has {} entries for {n} states",
            pi0.len()
        )));
    }
    if pi0.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(GfaError::invalid("initial distribution has negative or non-finite entries"));
    }
    let s: f64 = pi0.iter().sum();
    if (s - 1.0).abs() > PROBABILITY_TOL {
        return Err(GfaError::invalid(format!("initial distribution sums to {s}, not 1")));
    }
    Ok(())
}

/// Point mass on state `s0`.
pub fn point_mass(n: usize, s0: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[s0] = 1.0;
    p
}

/// `p_t` for every `t` in `times` (strictly increasing, `t ≥ 0`).
pub fn cke_distributions(q: &GeneratorMatrix, pi0: &[f64], times: &[f64]) -> Result<Vec<DVector<f64>>> {
    let n = q.n_states();
    validate_distribution(pi0, n)?;
    validate_grid(times)?;
    if times[0] < 0.0 {
        return Err(GfaError::invalid("times must be non-negative"));
    }
    let mut p = DVector::from_column_slice(pi0);
    let mut out = Vec::with_capacity(times.len());
    let mut t_prev = 0.0;
    if n <= DENSE_CKE_LIMIT {
        let qt = q.to_dense().transpose();
        let mut cache: Option<(f64, DMatrix<f64>)> = None;
        for &t in times {
            let dt = t - t_prev;
            if dt > 0.0 {
                let reuse = matches!(&cache, Some((h, _)) if (h - dt).abs() <= 1e-12 * dt);
                if !reuse {
                    cache = Some((dt, expm(&(&qt * dt))));
                }
                p = &cache.as_ref().expect("just filled").1 * &p;
            }
            out.push(p.clone());
            t_prev = t;
        }
    } else {
        for &t in times {
            let dt = t - t_prev;
            if dt > 0.0 {
                p = uniformization_action(q.offdiag(), q.diag(), &p, dt);
            }
            out.push(p.clone());
            t_prev = t;
        }
    }
    Ok(out)
}

/// Exact projected mean `Yᵀ p_t` on `times` (starting at 0).
pub fn projected_mean(q: &GeneratorMatrix, pi0: &[f64], y: &Embedding, times: &[f64]) -> Result<Trajectory> {
    if y.n_states() != q.n_states() {
        return Err(GfaError::DimensionMismatch(format!(
            "embedding has {} states, generator {}",
            y.n_states(),
            q.n_states()
        )));
    }
    let dists = cke_distributions(q, pi0, times)?;
    let yt = y.coords().transpose();
    let rows: Vec<Vec<f64>> = dists.iter().map(|p| (&yt * p).iter().copied().collect()).collect();
    Trajectory::from_rows(times.to_vec(), &rows, TrajectoryKind::ProjectedMean)
}

/// Real eigendecomposition `Q = V Λ V⁻¹` with unit columns, eigenvalues
/// ascending, and each column's largest-magnitude entry positive.
///
/// Symmetric generators use the symmetric solver (orthonormal `V`). Others
/// must have a real spectrum of distinct eigenvalues and a well-conditioned
/// eigenvector matrix; otherwise [`GfaError::Defective`] is returned.
pub fn spectral_basis(q: &GeneratorMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = q.n_states();
    let dense = q.to_dense();
    let scale = q.max_exit_rate().max(1.0);
    let (mut values, mut vectors) = if q.is_symmetric(1e-12 * scale) {
        let sym = (&dense + dense.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    } else {
        let ev = dense.clone().complex_eigenvalues();
        if let Some(z) = ev.iter().find(|z| z.im.abs() > 1e-10 * scale) {
            return Err(GfaError::Defective(format!("complex eigenvalue {z}")));
        }
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        if re.windows(2).any(|w| w[1] - w[0] < 1e-8 * scale) {
            return Err(GfaError::Defective("repeated eigenvalue".into()));
        }
        let mut v = DMatrix::zeros(n, n);
        for (k, lam) in re.iter().enumerate() {
            let shifted = &dense - DMatrix::identity(n, n) * *lam;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t.expect("requested V");
            let (imin, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty");
            v.set_column(k, &vt.row(imin).transpose());
        }
        let sv = v.clone().svd(false, false).singular_values;
        if sv.min() < 1e-10 * sv.max() {
            return Err(GfaError::Defective("eigenvector matrix is numerically singular".into()));
        }
        (re, v)
    };
    // Sort ascending, normalize, fix signs.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    values = order.iter().map(|&i| values[i]).collect();
    vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    for c in 0..n {
        let mut col = vectors.column_mut(c);
        let norm = col.norm();
        col /= norm;
        let amax = col.amax();
        let pivot = col.iter().position(|v| v.abs() >= amax * (1.0 - 1e-9)).unwrap_or(0);
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    Ok((values, vectors))
}

/// Spectral fluid `y_t = exp(t Λ VᵀV) Vᵀ π₀` in the eigenvector embedding of
/// [`spectral_basis`]. For symmetric `Q` this is exactly the projected mean
/// with `Y = V`.
pub fn spectral_fluid(q: &GeneratorMatrix, pi0: &[f64], times: &[f64]) -> Result<Trajectory> {
    validate_distribution(pi0, q.n_states())?;
    let (values, v) = spectral_basis(q)?;
    let y0 = v.transpose() * DVector::from_column_slice(pi0);
    let gram = v.transpose() * &v;
    let orthonormal = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).amax() <= 1e-12;
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(&values)) * &gram;
    let rows: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            if orthonormal {
                values.iter().zip(y0.iter()).map(|(l, y)| (l * t).exp() * y).collect()
            } else {
                (expm(&(&m * t)) * &y0).iter().copied().collect()
            }
        })
        .collect();
    Trajectory::from_rows(times.to_vec(), &rows, TrajectoryKind::SpectralFluid)
}
