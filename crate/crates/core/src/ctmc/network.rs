//! Mass-action reaction networks and their truncated CTMCs.
//!
//! Propensity scaling with system size `N` (the cap):
//! zeroth order `k / N`, first order `k u_i`, and order `m ≥ 2`
//! `k ∏ u_i^(ν_i falling) / N^(m-1)`. Reactions whose products would exceed
//! the cap are dropped, which makes the boundary reflecting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::generator::GeneratorMatrix;
use crate::error::{GfaError, Result};

/// Hard limit on enumerated states.
pub const MAX_STATES: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    pub coords: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl StateLabel {
    pub fn new(coords: Vec<u32>) -> Self {
        StateLabel { coords, name: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    /// Consumed count per species.
    pub reactants: Vec<u32>,
    /// Produced count per species.
    pub products: Vec<u32>,
    /// Rate constant in s⁻¹.
    pub rate: f64,
}

impl Reaction {
    pub fn order(&self) -> u32 {
        self.reactants.iter().sum()
    }

    /// Mass-action propensity at `state` for system size `n`.
    pub fn propensity(&self, state: &[u32], n: u32) -> f64 {
        let n = f64::from(n);
        match self.order() {
            0 => self.rate / n,
            order => {
                let mut prod = self.rate;
                for (&u, &nu) in state.iter().zip(&self.reactants) {
                    for k in 0..nu {
                        prod *= f64::from(u) - f64::from(k);
                    }
                }
                prod / n.powi(order as i32 - 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    pub species: Vec<String>,
    pub reactions: Vec<Reaction>,
    /// System size `N`: the maximum count of every species.
    pub cap: u32,
    /// Restricts the state space to states whose counts sum to this total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conserved_total: Option<u32>,
}

impl ReactionNetwork {
    pub fn validate(&self) -> Result<()> {
        let m = self.species.len();
        if m == 0 {
            return Err(GfaError::invalid("network has no species"));
        }
        if self.cap < 1 {
            return Err(GfaError::invalid("cap must be >= 1"));
        }
        for (r, rx) in self.reactions.iter().enumerate() {
            if rx.reactants.len() != m || rx.products.len() != m {
                return Err(GfaError::invalid(format!(
                    "reaction {r}: stoichiometry length must equal species count {m}"
                )));
            }
            if !(rx.rate > 0.0) || !rx.rate.is_finite() {
                return Err(GfaError::invalid(format!("reaction {r}: rate must be positive")));
            }
        }
        Ok(())
    }
}

/// A generator together with the labels of its states.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCtmc {
    pub generator: GeneratorMatrix,
    pub labels: Vec<StateLabel>,
    pub species: Vec<String>,
    pub cap: u32,
}

impl LabeledCtmc {
    pub fn n_states(&self) -> usize {
        self.generator.n_states()
    }

    /// Index of the state with exactly these counts.
    pub fn index_of(&self, coords: &[u32]) -> Option<usize> {
        self.labels.iter().position(|l| l.coords == coords)
    }
}

/// Enumerates states with counts in `[0, cap]` in lexicographic order (first
/// species most significant), optionally keeping only those with a fixed total.
fn enumerate_states(m: usize, cap: u32, total: Option<u32>) -> Result<Vec<Vec<u32>>> {
    let base = cap as usize + 1;
    let size = (0..m).try_fold(1usize, |acc, _| acc.checked_mul(base));
    match size {
        Some(s) if total.is_some() || s <= MAX_STATES => {}
        _ => {
            return Err(GfaError::Capacity(format!(
                "({cap}+1)^{m} states exceeds the limit of {MAX_STATES}"
            )))
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; m];
    fn rec(k: usize, cap: u32, remaining: Option<u32>, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) -> Result<()> {
        if k == cur.len() {
            if remaining.is_none_or(|r| r == 0) {
                if out.len() >= MAX_STATES {
                    return Err(GfaError::Capacity(format!("more than {MAX_STATES} states")));
                }
                out.push(cur.clone());
            }
            return Ok(());
        }
        let hi = remaining.map_or(cap, |r| r.min(cap));
        for c in 0..=hi {
            cur[k] = c;
            rec(k + 1, cap, remaining.map(|r| r - c), cur, out)?;
        }
        Ok(())
    }
    rec(0, cap, total, &mut cur, &mut out)?;
    Ok(out)
}

pub fn build_reaction_ctmc(net: &ReactionNetwork) -> Result<LabeledCtmc> {
    net.validate()?;
    let m = net.species.len();
    let states = enumerate_states(m, net.cap, net.conserved_total)?;
    let index: HashMap<&[u32], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let mut rates = Vec::new();
    let mut next = vec![0u32; m];
    for (i, s) in states.iter().enumerate() {
        'rx: for rx in &net.reactions {
            let mut changed = false;
            for k in 0..m {
                if s[k] < rx.reactants[k] {
                    continue 'rx;
                }
                let v = s[k] - rx.reactants[k] + rx.products[k];
                if v > net.cap {
                    continue 'rx;
                }
                changed |= v != s[k];
                next[k] = v;
            }
            if !changed {
                continue;
            }
            let Some(&j) = index.get(next.as_slice()) else {
                // Leaves a conserved-total slice; cannot happen for conserving networks.
                continue;
            };
            let a = rx.propensity(s, net.cap);
            if a > 0.0 {
                rates.push((i, j, a));
            }
        }
    }
    let generator = GeneratorMatrix::from_rates(states.len(), rates)?;
    Ok(LabeledCtmc {
        generator,
        labels: states.into_iter().map(StateLabel::new).collect(),
        species: net.species.clone(),
        cap: net.cap,
    })
}

/// Two-state-promoter gene expression. States are `(mode, n_A)` with mode 1
/// active (`P`) and 0 inactive (`P̄`); mode is the most significant index.
pub fn build_genetic_switch(switch_rate: f64, cap_a: u32) -> Result<LabeledCtmc> {
    if !(switch_rate > 0.0) || !switch_rate.is_finite() {
        return Err(GfaError::invalid("switch_rate must be positive"));
    }
    if cap_a < 1 {
        return Err(GfaError::invalid("cap_A must be >= 1"));
    }
    const TRANSCRIPTION_ACTIVE: f64 = 1.0;
    const TRANSCRIPTION_INACTIVE: f64 = 0.1;
    const DEGRADATION: f64 = 0.05;
    let width = cap_a as usize + 1;
    let idx = |mode: u32, n: u32| mode as usize * width + n as usize;
    let mut labels = Vec::with_capacity(2 * width);
    let mut rates = Vec::new();
    for mode in 0..=1u32 {
        for n in 0..=cap_a {
            labels.push(StateLabel {
                coords: vec![mode, n],
                name: Some(if mode == 1 { "P" } else { "P̄" }.to_string()),
            });
            let i = idx(mode, n);
            rates.push((i, idx(1 - mode, n), switch_rate));
            if n < cap_a {
                let k = if mode == 1 { TRANSCRIPTION_ACTIVE } else { TRANSCRIPTION_INACTIVE };
                rates.push((i, idx(mode, n + 1), k));
            }
            if n > 0 {
                rates.push((i, idx(mode, n - 1), DEGRADATION * f64::from(n)));
            }
        }
    }
    Ok(LabeledCtmc {
        generator: GeneratorMatrix::from_rates(labels.len(), rates)?,
        labels,
        species: vec!["P".into(), "A".into()],
        cap: cap_a,
    })
}
