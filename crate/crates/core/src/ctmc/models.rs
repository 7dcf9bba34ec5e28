//! The four benchmark models with their published rate constants.

use super::network::{build_reaction_ctmc, LabeledCtmc, Reaction, ReactionNetwork};
use crate::error::Result;

fn rx(reactants: &[u32], products: &[u32], rate: f64) -> Reaction {
    Reaction {
        reactants: reactants.to_vec(),
        products: products.to_vec(),
        rate,
    }
}

/// Two independent birth-death processes: `∅ → A` (10), `A → ∅` (1/2), same for `B`.
pub fn birth_death_network(n: u32) -> ReactionNetwork {
    ReactionNetwork {
        species: vec!["A".into(), "B".into()],
        reactions: vec![
            rx(&[0, 0], &[1, 0], 10.0),
            rx(&[1, 0], &[0, 0], 0.5),
            rx(&[0, 0], &[0, 1], 10.0),
            rx(&[0, 1], &[0, 0], 0.5),
        ],
        cap: n,
        conserved_total: None,
    }
}

/// Predator-prey: `R → 2R` (1/2), `R + F → 2F` (1/10), `F → ∅` (1/3).
pub fn lotka_volterra_network(n: u32) -> ReactionNetwork {
    ReactionNetwork {
        species: vec!["R".into(), "F".into()],
        reactions: vec![
            rx(&[1, 0], &[2, 0], 0.5),
            rx(&[1, 1], &[0, 2], 0.1),
            rx(&[0, 1], &[0, 0], 1.0 / 3.0),
        ],
        cap: n,
        conserved_total: None,
    }
}

pub const SIRS_K_I: f64 = 0.1;
pub const SIRS_K_R: f64 = 0.05;
pub const SIRS_K_S: f64 = 0.01;

/// `S + I → 2I` (0.1), `I → R` (0.05), `R → S` (0.01) on a population of `n`.
pub fn sirs_network(n: u32) -> ReactionNetwork {
    ReactionNetwork {
        species: vec!["S".into(), "I".into(), "R".into()],
        reactions: vec![
            rx(&[1, 1, 0], &[0, 2, 0], SIRS_K_I),
            rx(&[0, 1, 0], &[0, 0, 1], SIRS_K_R),
            rx(&[0, 0, 1], &[1, 0, 0], SIRS_K_S),
        ],
        cap: n,
        conserved_total: Some(n),
    }
}

pub fn birth_death(n: u32) -> Result<LabeledCtmc> {
    build_reaction_ctmc(&birth_death_network(n))
}

pub fn lotka_volterra(n: u32) -> Result<LabeledCtmc> {
    build_reaction_ctmc(&lotka_volterra_network(n))
}

pub fn sirs(n: u32) -> Result<LabeledCtmc> {
    build_reaction_ctmc(&sirs_network(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn birth_death_rates() {
        let c = birth_death(30).unwrap();
        assert_eq!(c.n_states(), 31 * 31);
        for a in 0..30 {
            let i = c.index_of(&[a, 7]).unwrap();
            let j = c.index_of(&[a + 1, 7]).unwrap();
            assert!((c.generator.rate(i, j) - 10.0 / 30.0).abs() < 1e-15);
        }
        let i = c.index_of(&[4, 0]).unwrap();
        let j = c.index_of(&[3, 0]).unwrap();
        assert_eq!(c.generator.rate(i, j), 2.0);
    }

    #[test]
    fn lotka_volterra_consumption() {
        let c = lotka_volterra(30).unwrap();
        let i = c.index_of(&[5, 9]).unwrap();
        let j = c.index_of(&[4, 10]).unwrap();
        assert!((c.generator.rate(i, j) - 0.15).abs() < 1e-15);
        // (0, 0) and (N, 0) are absorbing in the truncated model
        assert!(c.generator.is_absorbing(c.index_of(&[0, 0]).unwrap()));
        assert!(c.generator.is_absorbing(c.index_of(&[30, 0]).unwrap()));
    }

    #[test]
    fn sirs_conserves_population() {
        let c = sirs(20).unwrap();
        assert_eq!(c.n_states(), 21 * 22 / 2);
        for (i, j, _) in c.generator.entries() {
            let a: u32 = c.labels[i].coords.iter().sum();
            let b: u32 = c.labels[j].coords.iter().sum();
            assert_eq!(a, 20);
            assert_eq!(b, 20);
        }
    }
}
