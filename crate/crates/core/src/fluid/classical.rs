//! Classical mean-field ODEs in concentration space `x = u / N`.

use super::{dopri5, OdeOptions, Trajectory, TrajectoryKind};
use crate::ctmc::ReactionNetwork;
use crate::error::{GfaError, Result};

/// Tolerance on `s + i + r = 1` for SIRS initial conditions.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// SIRS mean field:
/// `ṡ = k_s r − k_i i s`, `i̇ = k_i i s − k_r i`, `ṙ = k_r i − k_s r`.
///
/// `x0 = (s, i, r)` must be non-negative and sum to 1.
pub fn classical_fluid_sirs(
    k_i: f64,
    k_r: f64,
    k_s: f64,
    x0: [f64; 3],
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    for (name, k) in [("k_i", k_i), ("k_r", k_r), ("k_s", k_s)] {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(GfaError::invalid(format!("{name} must be a non-negative rate")));
        }
    }
    if x0.iter().any(|v| !(*v >= 0.0)) || (x0.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
        return Err(GfaError::invalid("SIRS initial fractions must be non-negative and sum to 1"));
    }
    let sol = dopri5(
        |_, x, dx| {
            let (s, i, r) = (x[0], x[1], x[2]);
            dx[0] = k_s * r - k_i * i * s;
            dx[1] = k_i * i * s - k_r * i;
            dx[2] = k_r * i - k_s * r;
        },
        &x0,
        times,
        opts,
    )?;
    Trajectory::from_rows(sol.times, &sol.states, TrajectoryKind::ClassicalFluid)
}

/// Mean field of a mass-action network in concentrations `x = u / N`:
/// `ẋ = Σ_r (ν_r' − ν_r) k_r ∏ x_s^{ν_rs}`, with zeroth-order reactions
/// contributing `k_r / N²` to match the chain's `k / N` count propensity.
/// This is the large-`N` limit of the chain's drift (falling factorials
/// become powers); the cap does not bound the ODE.
pub fn classical_fluid(net: &ReactionNetwork, x0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Trajectory> {
    net.validate()?;
    let m = net.species.len();
    if x0.len() != m {
        return Err(GfaError::DimensionMismatch(format!(
            "initial state has {} entries for {m} species",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(GfaError::invalid("initial concentrations must be non-negative"));
    }
    let n = f64::from(net.cap);
    let sol = dopri5(
        |_, x, dx| {
            dx.fill(0.0);
            for rx in &net.reactions {
                let rate = if rx.order() == 0 {
                    rx.rate / (n * n)
                } else {
                    rx.reactants
                        .iter()
                        .zip(x)
                        .fold(rx.rate, |acc, (&nu, &xs)| acc * xs.powi(nu as i32))
                };
                for s in 0..m {
                    dx[s] += (f64::from(rx.products[s]) - f64::from(rx.reactants[s])) * rate;
                }
            }
        },
        x0,
        times,
        opts,
    )?;
    Trajectory::from_rows(sol.times, &sol.states, TrajectoryKind::ClassicalFluid)
}
