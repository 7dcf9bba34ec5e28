//! Gaussian-process regression of the drift vector field.
//!
//! Every output dimension is an independent zero-mean GP with a
//! squared-exponential ARD kernel. Lengthscales are shared across outputs;
//! amplitude and noise are per output. Hyperparameters maximize the summed log
//! marginal likelihood, optimized in log space with L-BFGS and a backtracking
//! line search on the analytic gradient.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GfaError, Result};
use crate::io::{read_json, write_json};

/// Relative jitter `1e-8 a²` added to every kernel diagonal.
pub const DEFAULT_JITTER: f64 = 1e-8;
/// Stop when the log-likelihood gradient ∞-norm drops below this.
pub const GRAD_TOL: f64 = 1e-5;
pub const MAX_ITERATIONS: usize = 500;
/// Hyperparameters are optimized on at most this many training points
/// (chosen by farthest-point sampling); the final fit always uses all points.
pub const DEFAULT_MAX_OPT_POINTS: usize = 400;

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
/// Line-search steps shorter than this count as failures: near the optimum of
/// an ill-conditioned likelihood the gradient is only accurate to a few digits
/// and vanishing steps make no progress.
const MIN_STEP: f64 = 1e-10;
/// Box on every log-hyperparameter relative to its initial value (`e^±18 ≈ 6.6e±7`).
const LOG_BOX: f64 = 18.0;

/// `k(x, x') = a² exp(−½ Σ_c (x_c − x'_c)² / l_c²)` plus `noise_sd²` on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeArdKernel {
    pub amplitude: f64,
    pub lengthscales: Vec<f64>,
    pub noise_sd: f64,
}

impl SeArdKernel {
    pub fn new(amplitude: f64, lengthscales: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let k = SeArdKernel {
            amplitude,
            lengthscales,
            noise_sd,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude > 0.0
            && self.amplitude.is_finite()
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.noise_sd >= 0.0
            && self.noise_sd.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GfaError::invalid(format!(
                "kernel needs amplitude > 0, lengthscales > 0 and noise_sd >= 0, got {self:?}"
            )))
        }
    }

    /// Kernel value between two points.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.amplitude * self.amplitude * correlation(&self.lengthscales, x, z)
    }
}

fn correlation(lengthscales: &[f64], x: &[f64], z: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(z).zip(lengthscales) {
        let d = (a - b) / l;
        s += d * d;
    }
    (-0.5 * s).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpOptions {
    pub optimize: bool,
    /// Keep every `noise_sd` at its initial value during optimization.
    pub freeze_noise: bool,
    /// Relative diagonal jitter; the absolute jitter is `jitter · a²`.
    pub jitter: f64,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub max_opt_points: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            optimize: true,
            freeze_noise: false,
            jitter: DEFAULT_JITTER,
            max_iterations: MAX_ITERATIONS,
            grad_tol: GRAD_TOL,
            max_opt_points: DEFAULT_MAX_OPT_POINTS,
        }
    }
}

/// Exportable hyperparameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparameters {
    pub lengthscales: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_sds: Vec<f64>,
    pub jitter: f64,
}

impl GpHyperparameters {
    pub fn kernels(&self) -> Result<Vec<SeArdKernel>> {
        if self.amplitudes.len() != self.noise_sds.len() {
            return Err(GfaError::DimensionMismatch("one noise_sd per amplitude required".into()));
        }
        self.amplitudes
            .iter()
            .zip(&self.noise_sds)
            .map(|(&a, &s)| SeArdKernel::new(a, self.lengthscales.clone(), s))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Summary of a hyperparameter optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    /// Log marginal likelihood on the optimization subset.
    pub subset_log_likelihood: f64,
    pub subset_size: usize,
}

/// Fitted posterior mean field `ℝ^K → ℝ^D`. Immutable: changing any
/// hyperparameter means fitting a new field, so the cached weights always
/// match the kernels.
#[derive(Debug, Clone)]
pub struct DriftField {
    kernels: Vec<SeArdKernel>,
    jitter: f64,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    /// `a_d² K_d⁻¹ r_d` per output column.
    weights: DMatrix<f64>,
    report: Option<FitReport>,
}

impl DriftField {
    pub fn kernels(&self) -> &[SeArdKernel] {
        &self.kernels
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.kernels[0].lengthscales
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    pub fn hyperparameters(&self) -> GpHyperparameters {
        GpHyperparameters {
            lengthscales: self.lengthscales().to_vec(),
            amplitudes: self.kernels.iter().map(|k| k.amplitude).collect(),
            noise_sds: self.kernels.iter().map(|k| k.noise_sd).collect(),
            jitter: self.jitter,
        }
    }

    /// Posterior mean at one point, written into `out` (length `D`).
    pub fn mean_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ls = self.lengthscales();
        for i in 0..self.inputs.nrows() {
            let mut s = 0.0;
            for (c, l) in ls.iter().enumerate() {
                let d = (x[c] - self.inputs[(i, c)]) / l;
                s += d * d;
            }
            let c = (-0.5 * s).exp();
            for (d, o) in out.iter_mut().enumerate() {
                *o += c * self.weights[(i, d)];
            }
        }
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.mean_into(x, &mut out);
        out
    }
}

/// Default initialization: amplitude = target standard deviation, lengthscale
/// = median pairwise distance per input dimension, noise = 1% of amplitude.
pub fn default_init(y: &DMatrix<f64>, r: &DMatrix<f64>) -> GpHyperparameters {
    let sub = farthest_point_subset(y, DEFAULT_MAX_OPT_POINTS);
    let lengthscales = (0..y.ncols())
        .map(|c| {
            let mut d: Vec<f64> = Vec::new();
            for (a, &i) in sub.iter().enumerate() {
                for &j in &sub[a + 1..] {
                    d.push((y[(i, c)] - y[(j, c)]).abs());
                }
            }
            let m = median(&mut d);
            if m > 0.0 && m.is_finite() {
                m
            } else {
                1.0
            }
        })
        .collect();
    let amplitudes: Vec<f64> = r
        .column_iter()
        .map(|col| {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    GpHyperparameters {
        lengthscales,
        noise_sds: amplitudes.iter().map(|a| 1e-2 * a).collect(),
        amplitudes,
        jitter: DEFAULT_JITTER,
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Deterministic farthest-point sample of at most `m` rows, starting at row 0;
/// ties go to the lowest index.
pub fn farthest_point_subset(y: &DMatrix<f64>, m: usize) -> Vec<usize> {
    let n = y.nrows();
    if n <= m {
        return (0..n).collect();
    }
    let dist2 = |i: usize, j: usize| (0..y.ncols()).map(|c| (y[(i, c)] - y[(j, c)]).powi(2)).sum::<f64>();
    let mut chosen = vec![0usize];
    let mut best: Vec<f64> = (0..n).map(|i| dist2(i, 0)).collect();
    while chosen.len() < m {
        let (next, _) = best
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(dist2(i, next));
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Fits the drift field to inputs `y` (`N × K`) and targets `r` (`N × D`).
pub fn gp_fit(y: &DMatrix<f64>, r: &DMatrix<f64>, init: &GpHyperparameters, opts: &GpOptions) -> Result<DriftField> {
    let (n, k) = y.shape();
    if r.nrows() != n {
        return Err(GfaError::DimensionMismatch(format!("{n} inputs but {} targets", r.nrows())));
    }
    if n == 0 || r.ncols() == 0 {
        return Err(GfaError::invalid("need at least one observation and one output"));
    }
    if opts.optimize && n < 2 {
        return Err(GfaError::invalid("hyperparameter optimization needs at least 2 observations"));
    }
    if init.lengthscales.len() != k || init.amplitudes.len() != r.ncols() {
        return Err(GfaError::DimensionMismatch(format!(
            "hyperparameters for {}→{} but data is {k}→{}",
            init.lengthscales.len(),
            init.amplitudes.len(),
            r.ncols()
        )));
    }
    if !(opts.jitter >= 0.0) || !opts.jitter.is_finite() {
        return Err(GfaError::invalid("jitter must be finite and >= 0"));
    }
    if y.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(GfaError::invalid("GP data must be finite"));
    }
    init.kernels()?;

    let (hyper, report) = if opts.optimize {
        let sub = farthest_point_subset(y, opts.max_opt_points.max(2));
        let ys = y.select_rows(&sub);
        let rs = r.select_rows(&sub);
        let (h, rep) = optimize(&ys, &rs, init, opts)?;
        (h, Some(rep))
    } else {
        (GpHyperparameters { jitter: opts.jitter, ..init.clone() }, None)
    };
    let mut field = fit_fixed(y, r, &hyper)?;
    field.report = report;
    Ok(field)
}

/// Convenience: [`gp_fit`] from [`default_init`].
pub fn gp_fit_default(y: &DMatrix<f64>, r: &DMatrix<f64>, opts: &GpOptions) -> Result<DriftField> {
    gp_fit(y, r, &default_init(y, r), opts)
}

fn fit_fixed(y: &DMatrix<f64>, r: &DMatrix<f64>, h: &GpHyperparameters) -> Result<DriftField> {
    let kernels = h.kernels()?;
    let corr = correlation_matrix(y, &h.lengthscales);
    let n = y.nrows();
    let cols: Vec<DVector<f64>> = kernels
        .par_iter()
        .enumerate()
        .map(|(d, ker)| {
            let chol = factor(&corr, ker, h.jitter)?;
            let alpha = chol.solve(&r.column(d).into_owned());
            Ok(alpha * (ker.amplitude * ker.amplitude))
        })
        .collect::<Result<_>>()?;
    let weights = DMatrix::from_fn(n, kernels.len(), |i, d| cols[d][i]);
    Ok(DriftField {
        kernels,
        jitter: h.jitter,
        inputs: y.clone(),
        targets: r.clone(),
        weights,
        report: None,
    })
}

fn correlation_matrix(y: &DMatrix<f64>, ls: &[f64]) -> DMatrix<f64> {
    let n = y.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| y.row(i).iter().copied().collect()).collect();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in 0..i {
            let v = correlation(ls, &rows[i], &rows[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Cholesky of `a² (C + jitter I) + noise² I`.
fn factor(corr: &DMatrix<f64>, ker: &SeArdKernel, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    let a2 = ker.amplitude * ker.amplitude;
    let mut kmat = corr * a2;
    let diag = a2 * jitter + ker.noise_sd * ker.noise_sd;
    for i in 0..kmat.nrows() {
        kmat[(i, i)] += diag;
    }
    match Cholesky::new(kmat.clone()) {
        Some(ch) => Ok(ch),
        None => {
            let min_eigenvalue = SymmetricEigen::new(kmat).eigenvalues.min();
            Err(GfaError::NotPositiveDefinite { min_eigenvalue })
        }
    }
}

/// Log-hyperparameter layout: `[ln l_1..ln l_K, ln a_1, ln σ_1, …, ln a_D, ln σ_D]`.
fn pack(h: &GpHyperparameters) -> Vec<f64> {
    let mut v: Vec<f64> = h.lengthscales.iter().map(|l| l.ln()).collect();
    for (a, s) in h.amplitudes.iter().zip(&h.noise_sds) {
        v.push(a.ln());
        v.push(s.ln());
    }
    v
}

fn unpack(theta: &[f64], k: usize, jitter: f64) -> GpHyperparameters {
    let d = (theta.len() - k) / 2;
    GpHyperparameters {
        lengthscales: theta[..k].iter().map(|t| t.exp()).collect(),
        amplitudes: (0..d).map(|i| theta[k + 2 * i].exp()).collect(),
        noise_sds: (0..d).map(|i| theta[k + 2 * i + 1].exp()).collect(),
        jitter,
    }
}

/// Log marginal likelihood summed over outputs and its gradient with respect
/// to the log-hyperparameters (layout as documented on the field's
/// [`GpHyperparameters`]: lengthscales, then `(amplitude, noise)` per output).
pub fn log_marginal_likelihood(
    y: &DMatrix<f64>,
    r: &DMatrix<f64>,
    h: &GpHyperparameters,
) -> Result<(f64, Vec<f64>)> {
    let kernels = h.kernels()?;
    let (n, k) = y.shape();
    if h.lengthscales.len() != k || kernels.len() != r.ncols() || r.nrows() != n {
        return Err(GfaError::DimensionMismatch("hyperparameters do not match data".into()));
    }
    let corr = correlation_matrix(y, &h.lengthscales);
    let per_output: Vec<(f64, DMatrix<f64>, f64, f64)> = kernels
        .par_iter()
        .enumerate()
        .map(|(d, ker)| {
            let chol = factor(&corr, ker, h.jitter)?;
            let rd = r.column(d).into_owned();
            let alpha = chol.solve(&rd);
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lml = -0.5 * rd.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            // W = α αᵀ − K⁻¹; dL/dθ = ½ tr(W ∂K/∂θ)
            let mut w = chol.inverse();
            w.neg_mut();
            w.ger(1.0, &alpha, &alpha, 1.0);
            let a2 = ker.amplitude * ker.amplitude;
            let tr_w = w.trace();
            let tr_wc = w.component_mul(&corr).sum();
            let g_amp = a2 * (tr_wc + h.jitter * tr_w);
            let g_noise = ker.noise_sd * ker.noise_sd * tr_w;
            Ok((lml, w * a2, g_amp, g_noise))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut grad = vec![0.0; k];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut tail = Vec::with_capacity(2 * kernels.len());
    for (lml, wa, ga, gn) in per_output {
        total += lml;
        m += wa;
        tail.push(ga);
        tail.push(gn);
    }
    // dK/d ln l_c = a² C ∘ (Δ_c² / l_c²); shared lengthscales sum over outputs.
    for (c, l) in h.lengthscales.iter().enumerate() {
        let mut g = 0.0;
        for i in 0..n {
            for j in 0..i {
                let dlt = (y[(i, c)] - y[(j, c)]) / l;
                g += m[(i, j)] * corr[(i, j)] * dlt * dlt;
            }
        }
        // symmetric off-diagonal pairs counted twice, times ½ from the trace formula
        grad[c] = g;
    }
    grad.extend(tail);
    Ok((total, grad))
}

impl DriftField {
    /// Log marginal likelihood of the field's own training data.
    pub fn log_marginal_likelihood(&self) -> Result<(f64, Vec<f64>)> {
        log_marginal_likelihood(&self.inputs, &self.targets, &self.hyperparameters())
    }
}

fn optimize(
    y: &DMatrix<f64>,
    r: &DMatrix<f64>,
    init: &GpHyperparameters,
    opts: &GpOptions,
) -> Result<(GpHyperparameters, FitReport)> {
    let k = y.ncols();
    let jitter = opts.jitter;
    let theta0 = pack(init);
    let mut lo: Vec<f64> = theta0.iter().map(|t| t - LOG_BOX).collect();
    let mut hi: Vec<f64> = theta0.iter().map(|t| t + LOG_BOX).collect();
    // Noise never drops below the jitter level √jitter · a_init.
    for d in 0..init.amplitudes.len() {
        let floor = (init.amplitudes[d] * jitter.sqrt()).max(f64::MIN_POSITIVE).ln();
        lo[k + 2 * d + 1] = floor;
        if opts.freeze_noise {
            lo[k + 2 * d + 1] = theta0[k + 2 * d + 1];
            hi[k + 2 * d + 1] = theta0[k + 2 * d + 1];
        }
    }
    let frozen: Vec<bool> = lo.iter().zip(&hi).map(|(a, b)| a == b).collect();
    let project = |t: &mut Vec<f64>| {
        for i in 0..t.len() {
            t[i] = t[i].clamp(lo[i], hi[i]);
        }
    };
    // Minimize f = −LML.
    let eval = |t: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (l, g) = log_marginal_likelihood(y, r, &unpack(t, k, jitter)).ok()?;
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut g: Vec<f64> = g.into_iter().map(|v| -v).collect();
        for (gi, f) in g.iter_mut().zip(&frozen) {
            if *f {
                *gi = 0.0;
            }
        }
        Some((-l, g))
    };
    // Projected gradient: components pushing against an active bound are zero.
    let proj_grad_norm = |t: &[f64], g: &[f64]| -> f64 {
        t.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (ti, gi))| {
                if (*ti <= lo[i] && *gi > 0.0) || (*ti >= hi[i] && *gi < 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0, f64::max)
    };

    let mut theta = theta0.clone();
    project(&mut theta);
    let Some((mut f, mut g)) = eval(&theta) else {
        // Surface the underlying error (usually a failed factorization).
        log_marginal_likelihood(y, r, &unpack(&theta, k, jitter))?;
        return Err(GfaError::Divergence { last_finite: theta });
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut gnorm = proj_grad_norm(&theta, &g);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    while iterations < opts.max_iterations && gnorm >= opts.grad_tol {
        iterations += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, yv) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(yv, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, yv), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        for (di, f) in dir.iter_mut().zip(&frozen) {
            if *f {
                *di = 0.0;
            }
        }
        if dot(&dir, &g) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        // Cap the first trial step at one unit in log space.
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if dmax > 1.0 { 1.0 / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if step < MIN_STEP {
                break;
            }
            let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f + ARMIJO_C1 * dot(&g, &moved) {
                    accepted = Some((trial, moved, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, s, ft, gt)) = accepted else {
            if s_hist.is_empty() {
                // Steepest descent cannot make progress: a stationary point to
                // working precision.
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let was_steepest = s_hist.is_empty();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        // An accepted step that leaves f unchanged to working precision is a
        // stall, handled like a failed line search.
        let stalled = (f - ft).abs() <= 1e-15 * f.abs().max(1.0);
        theta = trial;
        f = ft;
        g = gt;
        gnorm = proj_grad_norm(&theta, &g);
        if stalled {
            if was_steepest {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }
    }
    let mut fitted = unpack(&theta, k, jitter);
    if opts.freeze_noise {
        // exp(ln σ) need not reproduce σ bit-for-bit
        fitted.noise_sds.clone_from(&init.noise_sds);
    }
    Ok((
        fitted,
        FitReport {
            iterations,
            converged: gnorm < opts.grad_tol,
            grad_inf_norm: gnorm,
            subset_log_likelihood: -f,
            subset_size: y.nrows(),
        },
    ))
}

/// Posterior mean at each row of `queries` (`M × K`), returned as `M × D`.
pub fn gp_predict_mean(field: &DriftField, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if queries.ncols() != field.input_dim() {
        return Err(GfaError::DimensionMismatch(format!(
            "queries have {} columns, field expects {}",
            queries.ncols(),
            field.input_dim()
        )));
    }
    let m = queries.nrows();
    let d = field.output_dim();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = queries.row(i).iter().copied().collect();
            field.mean(&x)
        })
        .collect();
    Ok(DMatrix::from_fn(m, d, |i, c| rows[i][c]))
}
