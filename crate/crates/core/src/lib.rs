//! Geometric fluid approximation of finite continuous-time Markov chains.
//!
//! The pipeline embeds a chain's state graph in a low-dimensional Euclidean
//! space ([`embed`]), fits a Gaussian-process drift field to the per-state
//! expected displacements ([`gp`]), integrates the resulting ODE
//! ([`fluid`]), and validates it against exact simulation ([`ssa`]) and
//! first-passage-time statistics ([`fpt`]).

pub mod config;
pub mod ctmc;
pub mod embed;
pub mod error;
pub mod fluid;
pub mod fpt;
pub mod gp;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod ssa;

pub use error::{GfaError, Result};
