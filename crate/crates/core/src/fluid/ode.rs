//! Dormand–Prince 5(4) with Hairer's continuous extension, plus a fixed-step
//! variant used to verify the order of the method.

use crate::error::{GfaError, Result};

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-9;
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error coefficients: fifth-order minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: DEFAULT_MAX_STEPS,
            h0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Solution sampled on the requested grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: OdeStats,
}

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
/// Writes the fifth-order result to `y1`, leaves `f(t+h, y1)` in `k[6]`, and
/// returns the local error estimate per component in `err`.
fn dp_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, st: &mut Stages, y1: &mut [f64], err: &mut [f64])
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Stages { k, tmp } = st;
    let [k1, k2, k3, k4, k5, k6, k7] = k;
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    f(t + C2 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    f(t + C3 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    f(t + C4 * h, tmp, k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    f(t + C5 * h, tmp, k5);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    f(t + h, tmp, k6);
    for i in 0..n {
        y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    f(t + h, y1, k7);
    for i in 0..n {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
}

/// Continuous extension on `[t, t+h]` after a step, as five coefficient rows.
fn dense_coeffs(y0: &[f64], y1: &[f64], h: f64, k: &[Vec<f64>; 7]) -> [Vec<f64>; 5] {
    let n = y0.len();
    let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let dy = y1[i] - y0[i];
        let bspl = h * k[0][i] - dy;
        r[0][i] = y0[i];
        r[1][i] = dy;
        r[2][i] = bspl;
        r[3][i] = dy - h * k[6][i] - bspl;
        r[4][i] = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
    }
    r
}

fn dense_eval(r: &[Vec<f64>; 5], theta: f64, out: &mut [f64]) {
    let th1 = 1.0 - theta;
    for i in 0..out.len() {
        out[i] = r[0][i] + theta * (r[1][i] + th1 * (r[2][i] + theta * (r[3][i] + th1 * r[4][i])));
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Hairer's starting-step heuristic.
fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], t_end: f64, opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let span = t_end - t0;
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `times[0]` and samples the solution at
/// every entry of `times` (strictly increasing) via dense output.
pub fn dopri5<F>(mut f: F, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    validate_grid(times)?;
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(GfaError::invalid("tolerances must be positive"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(GfaError::invalid("initial state must be finite"));
    }
    let n = y0.len();
    let t0 = times[0];
    let t_end = *times.last().expect("validated non-empty");
    let mut states = Vec::with_capacity(times.len());
    states.push(y0.to_vec());
    let mut stats = OdeStats::default();
    if times.len() == 1 {
        return Ok(OdeSolution {
            times: times.to_vec(),
            states,
            stats,
        });
    }

    let mut st = Stages::new(n);
    let mut y = y0.to_vec();
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    f(t, &y, &mut st.k[0]);
    stats.evaluations += 1;
    let mut h = match opts.h0 {
        Some(h) => h.min(t_end - t0),
        None => {
            stats.evaluations += 1;
            initial_step(&mut f, t0, &y, &st.k[0].clone(), t_end, opts)
        }
    };
    let mut next = 1usize;
    let mut out = vec![0.0; n];
    let mut last_rejected = false;

    while next < times.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(GfaError::StepUnderflow { t, state: y });
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(GfaError::StepUnderflow { t, state: y });
        }
        let last = t + h >= t_end || (t_end - (t + h)) < h_min;
        if last {
            h = t_end - t;
        }
        dp_step(&mut f, t, &y, h, &mut st, &mut y1, &mut err);
        stats.evaluations += 6;
        let en = error_norm(&err, &y, &y1, opts.rtol, opts.atol);
        if !en.is_finite() || y1.iter().any(|v| !v.is_finite()) {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }
        if en <= 1.0 {
            stats.accepted += 1;
            let t_new = if last { t_end } else { t + h };
            let r = dense_coeffs(&y, &y1, h, &st.k);
            while next < times.len() && times[next] <= t_new {
                if times[next] == t_new {
                    out.copy_from_slice(&y1);
                } else {
                    dense_eval(&r, (times[next] - t) / h, &mut out);
                }
                states.push(out.clone());
                next += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y1);
            // FSAL: the last stage is f at the new point.
            let k7 = std::mem::take(&mut st.k[6]);
            st.k[6] = std::mem::replace(&mut st.k[0], k7);
            let mut fac = SAFETY * en.max(1e-10).powf(-0.2);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h *= fac;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (SAFETY * en.powf(-0.2)).max(FAC_MIN);
            last_rejected = true;
        }
    }
    Ok(OdeSolution {
        times: times.to_vec(),
        states,
        stats,
    })
}

/// Classical fixed-step application of the same fifth-order weights; used to
/// check the convergence order.
pub fn dopri5_fixed<F>(mut f: F, y0: &[f64], t_end: f64, n_steps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let h = t_end / n_steps as f64;
    let mut st = Stages::new(n);
    let mut y = y0.to_vec();
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    for s in 0..n_steps {
        let t = s as f64 * h;
        f(t, &y, &mut st.k[0]);
        dp_step(&mut f, t, &y, h, &mut st, &mut y1, &mut err);
        std::mem::swap(&mut y, &mut y1);
    }
    y
}

pub(crate) fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(GfaError::invalid("time grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GfaError::invalid("time grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// `n` uniform samples on `[0, t_end]`, both ends included.
pub fn uniform_grid(t_end: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || !t_end.is_finite() || n < 2 {
        return Err(GfaError::invalid("uniform grid needs t_end > 0 and at least 2 samples"));
    }
    Ok((0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let grid = uniform_grid(1.0, 11).unwrap();
        // Global error tracks the requested tolerance.
        for (rtol, bound) in [(1e-6, 1e-5), (1e-10, 1e-9)] {
            let opts = OdeOptions {
                rtol,
                atol: rtol * 1e-3,
                ..Default::default()
            };
            let sol = dopri5(decay, &[1.0], &grid, &opts).unwrap();
            for (t, y) in sol.times.iter().zip(&sol.states) {
                assert!((y[0] - (-t).exp()).abs() < bound, "t = {t}");
            }
        }
        let sol = dopri5(decay, &[1.0], &grid, &OdeOptions::default()).unwrap();
        assert_eq!(sol.times.len(), sol.states.len());
    }

    #[test]
    fn dense_output_matches_step_endpoints_on_oscillator() {
        let f = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let grid = uniform_grid(10.0, 1001).unwrap();
        let opts = OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let sol = dopri5(f, &[1.0, 0.0], &grid, &opts).unwrap();
        let worst = sol
            .times
            .iter()
            .zip(&sol.states)
            .map(|(t, y)| (y[0] - t.cos()).abs().max((y[1] + t.sin()).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn fixed_step_order_is_five() {
        let exact = (-1.0f64).exp();
        let errs: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|&n| (dopri5_fixed(decay, &[1.0], 1.0, n)[0] - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            // theoretical 2^5 = 32, within a factor of two
            assert!((16.0..=64.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let f = |_: f64, _: &[f64], dy: &mut [f64]| dy.iter_mut().for_each(|d| *d = 0.0);
        let grid = uniform_grid(5.0, 6).unwrap();
        let sol = dopri5(f, &[0.3, -2.0], &grid, &OdeOptions::default()).unwrap();
        assert!(sol.states.iter().all(|s| s == &vec![0.3, -2.0]));
    }

    #[test]
    fn blow_up_reports_underflow() {
        // y' = y², y(0) = 1 blows up at t = 1
        let f = |_: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let grid = uniform_grid(2.0, 5).unwrap();
        match dopri5(f, &[1.0], &grid, &OdeOptions::default()) {
            Err(GfaError::StepUnderflow { t, .. }) => assert!(t > 0.99 && t < 1.01, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(dopri5(decay, &[1.0], &[0.0, 0.0], &OdeOptions::default()).is_err());
        assert!(uniform_grid(0.0, 3).is_err());
        let bad = OdeOptions {
            rtol: 0.0,
            ..Default::default()
        };
        assert!(dopri5(decay, &[1.0], &[0.0, 1.0], &bad).is_err());
    }
}
