//! Random perturbations of a generator: additive half-normal rate noise and
//! random transition removal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::generator::GeneratorMatrix;
use crate::error::{GfaError, Result};

pub const REMOVAL_ATTEMPTS: usize = 100;

/// Adds `|η|`, `η ~ N(0, sigma²)`, to every existing off-diagonal rate.
/// Entries are visited in row-major order, one draw each.
pub fn perturb_rates(q: &GeneratorMatrix, sigma: f64, seed: u64) -> Result<GeneratorMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(GfaError::invalid("sigma must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(q.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| GfaError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(q.map_rates(|_, _, r| r + normal.sample(&mut rng).abs()))
}

/// Removes each transition independently with probability `p_remove`.
///
/// Edges are visited in row-major order; a drawn removal is rejected when it
/// would leave its source without outgoing transitions or its target without
/// incoming ones. If the undirected transition graph loses connectivity the
/// whole pattern is redrawn, up to [`REMOVAL_ATTEMPTS`] times.
pub fn remove_transitions(q: &GeneratorMatrix, p_remove: f64, seed: u64) -> Result<GeneratorMatrix> {
    if !(0.0..1.0).contains(&p_remove) {
        return Err(GfaError::invalid("p_remove must lie in [0, 1)"));
    }
    if p_remove == 0.0 {
        return Ok(q.clone());
    }
    let n = q.n_states();
    let edges: Vec<(usize, usize, f64)> = q.entries().collect();
    let components = undirected_components(n, edges.iter().map(|&(i, j, _)| (i, j)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REMOVAL_ATTEMPTS {
        let mut out_deg = vec![0usize; n];
        let mut in_deg = vec![0usize; n];
        for &(i, j, _) in &edges {
            out_deg[i] += 1;
            in_deg[j] += 1;
        }
        let mut keep = vec![true; edges.len()];
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            let u: f64 = rng.random();
            if u < p_remove && out_deg[i] > 1 && in_deg[j] > 1 {
                keep[e] = false;
                out_deg[i] -= 1;
                in_deg[j] -= 1;
            }
        }
        let kept = edges.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e);
        let after = undirected_components(n, kept.clone().map(|(i, j, _)| (i, j)));
        if after == components {
            return GeneratorMatrix::from_rates(n, kept);
        }
    }
    Err(GfaError::RemovalExhausted {
        attempts: REMOVAL_ATTEMPTS,
    })
}

/// Number of connected components of the undirected graph on `n` vertices.
pub fn undirected_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut count = n;
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            count -= 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::models::lotka_volterra;

    #[test]
    fn zero_noise_is_identity() {
        let q = lotka_volterra(10).unwrap().generator;
        assert_eq!(perturb_rates(&q, 0.0, 1).unwrap(), q);
        assert_eq!(remove_transitions(&q, 0.0, 1).unwrap(), q);
    }

    #[test]
    fn noise_only_increases_existing_rates() {
        let q = lotka_volterra(10).unwrap().generator;
        let p = perturb_rates(&q, 0.5, 7).unwrap();
        assert_eq!(p.n_transitions(), q.n_transitions());
        for (i, j, r) in q.entries() {
            assert!(p.rate(i, j) >= r);
        }
        assert_eq!(perturb_rates(&q, 0.5, 7).unwrap(), p);
        assert_ne!(perturb_rates(&q, 0.5, 8).unwrap(), p);
        p.validate().unwrap();
    }

    #[test]
    fn removal_keeps_every_state_live() {
        let q = lotka_volterra(30).unwrap().generator;
        let r = remove_transitions(&q, 0.1, 3).unwrap();
        r.validate().unwrap();
        let n = q.n_states();
        let mut had_in = vec![false; n];
        let mut has_in = vec![false; n];
        for (_, j, _) in q.entries() {
            had_in[j] = true;
        }
        for (_, j, _) in r.entries() {
            has_in[j] = true;
        }
        for i in 0..n {
            assert_eq!(q.is_absorbing(i), r.is_absorbing(i), "state {i}");
            assert_eq!(had_in[i], has_in[i]);
        }
        assert!(r.n_transitions() < q.n_transitions());
    }

    #[test]
    fn surviving_fraction_is_about_nine_tenths() {
        let q = lotka_volterra(30).unwrap().generator;
        let total = q.n_transitions();
        let mut kept = 0usize;
        let seeds = 10u64;
        for seed in 0..seeds {
            kept += remove_transitions(&q, 0.1, seed).unwrap().n_transitions();
        }
        let frac = kept as f64 / (total as f64 * seeds as f64);
        assert!(total as u64 * seeds >= 10_000);
        assert!((frac - 0.9).abs() < 0.02, "{frac}");
    }

    #[test]
    fn component_count() {
        assert_eq!(undirected_components(4, vec![(0, 1), (2, 3)]), 2);
        assert_eq!(undirected_components(3, vec![(0, 1), (1, 2)]), 1);
    }
}
