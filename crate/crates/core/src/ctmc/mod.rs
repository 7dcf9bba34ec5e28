//! Continuous-time Markov chains: generators, model builders, perturbations,
//! subsets, uniformisation and drift observations.

pub mod generator;
pub mod models;
pub mod network;
pub mod ops;
pub mod perturb;
pub mod subset;

pub use generator::GeneratorMatrix;
pub use network::{build_genetic_switch, build_reaction_ctmc, LabeledCtmc, Reaction, ReactionNetwork, StateLabel};
pub use ops::{default_eps, drift_observations, uniformise, uniformise_sparse};
pub use perturb::{perturb_rates, remove_transitions};
pub use subset::{extract_subset, StateSubset};
