//! Experiment configuration (TOML) and the built-in presets that reproduce
//! the benchmark experiments with no extra settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctmc::{
    build_genetic_switch, build_reaction_ctmc, extract_subset, models, perturb_rates, remove_transitions,
    LabeledCtmc, ReactionNetwork,
};
use crate::error::{GfaError, Result};
use crate::fluid::{OdeOptions, DEFAULT_GRID_POINTS};
use crate::gp::{GpHyperparameters, GpOptions, DEFAULT_JITTER, DEFAULT_MAX_OPT_POINTS, MAX_ITERATIONS};
use crate::ssa::{DEFAULT_PATHS, FAST_PATHS};

/// Root seed used when neither the config nor the command line sets one.
pub const DEFAULT_SEED: u64 = 20_200_101;

/// Built-in experiment presets: `(name, TOML source)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("birth_death", include_str!("../presets/birth_death.toml")),
    ("lotka_volterra", include_str!("../presets/lotka_volterra.toml")),
    ("lotka_volterra_perturbed", include_str!("../presets/lotka_volterra_perturbed.toml")),
    ("lotka_volterra_subset", include_str!("../presets/lotka_volterra_subset.toml")),
    ("sirs", include_str!("../presets/sirs.toml")),
    ("genetic_switch_slow", include_str!("../presets/genetic_switch_slow.toml")),
    ("genetic_switch_fast", include_str!("../presets/genetic_switch_fast.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Output directory; the command line's `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub ssa: SsaConfig,
    #[serde(default)]
    pub fpt: Option<FptConfig>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBuilder {
    BirthDeath,
    LotkaVolterra,
    Sirs,
    GeneticSwitch,
    /// A user-defined reaction network given inline.
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub builder: ModelBuilder,
    /// System size (cap) for the reaction-network builders.
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub switch_rate: Option<f64>,
    /// Maximum mRNA count of the genetic switch.
    #[serde(default)]
    pub cap_a: Option<u32>,
    #[serde(default)]
    pub network: Option<ReactionNetwork>,
    #[serde(default)]
    pub perturb: Option<PerturbConfig>,
    #[serde(default)]
    pub subset: Option<SubsetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    #[serde(default)]
    pub rate_noise_sigma: f64,
    #[serde(default)]
    pub removal_prob: f64,
    /// Seed of the perturbation; defaults to the run's root seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    /// Species counts of the root state.
    pub root: Vec<u32>,
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    DiffusionMap,
    LaplacianEigenmap,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub method: EmbeddingKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Uniformisation step; `0.5 / max|Q_ii|` when absent.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub diffusion_time: Option<f64>,
}

fn default_dim() -> usize {
    2
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            method: EmbeddingKind::DiffusionMap,
            dim: default_dim(),
            eps: None,
            diffusion_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    #[serde(default = "yes")]
    pub optimize: bool,
    #[serde(default)]
    pub freeze_noise: bool,
    /// Initial hyperparameters; data-driven defaults fill whatever is absent.
    #[serde(default)]
    pub lengthscales: Option<Vec<f64>>,
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_sds: Option<Vec<f64>>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_opt_points")]
    pub max_opt_points: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn yes() -> bool {
    true
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER
}
fn default_opt_points() -> usize {
    DEFAULT_MAX_OPT_POINTS
}
fn default_iterations() -> usize {
    MAX_ITERATIONS
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            optimize: true,
            freeze_noise: false,
            lengthscales: None,
            amplitudes: None,
            noise_sds: None,
            jitter: DEFAULT_JITTER,
            max_opt_points: DEFAULT_MAX_OPT_POINTS,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

impl GpConfig {
    pub fn options(&self) -> GpOptions {
        GpOptions {
            optimize: self.optimize,
            freeze_noise: self.freeze_noise,
            jitter: self.jitter,
            max_iterations: self.max_iterations,
            max_opt_points: self.max_opt_points,
            ..GpOptions::default()
        }
    }

    /// Overrides the data-driven initialization with any configured values.
    pub fn apply_init(&self, mut h: GpHyperparameters) -> Result<GpHyperparameters> {
        let set = |dst: &mut Vec<f64>, src: &Option<Vec<f64>>, what: &str| -> Result<()> {
            if let Some(v) = src {
                if v.len() != dst.len() {
                    return Err(GfaError::Config(format!(
                        "gp.{what} has {} entries, expected {}",
                        v.len(),
                        dst.len()
                    )));
                }
                dst.clone_from(v);
            }
            Ok(())
        };
        set(&mut h.lengthscales, &self.lengthscales, "lengthscales")?;
        set(&mut h.amplitudes, &self.amplitudes, "amplitudes")?;
        set(&mut h.noise_sds, &self.noise_sds, "noise_sds")?;
        h.jitter = self.jitter;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Number of uniform output samples on `[0, t_end]`.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// Species counts of the initial state.
    #[serde(default)]
    pub initial_state: Option<Vec<u32>>,
    /// Initial state as fractions of `N`, rounded to the nearest count.
    #[serde(default)]
    pub initial_fraction: Option<Vec<f64>>,
    /// Initial state by index.
    #[serde(default)]
    pub initial_index: Option<usize>,
}

fn default_t_end() -> f64 {
    10.0
}
fn default_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_rtol() -> f64 {
    crate::fluid::ode::DEFAULT_RTOL
}
fn default_atol() -> f64 {
    crate::fluid::ode::DEFAULT_ATOL
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            t_end: default_t_end(),
            points: default_points(),
            rtol: default_rtol(),
            atol: default_atol(),
            initial_state: None,
            initial_fraction: None,
            initial_index: None,
        }
    }
}

impl IntegrationConfig {
    pub fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            ..OdeOptions::default()
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        crate::fluid::uniform_grid(self.t_end, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsaConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Ensemble size used with `--fast`.
    #[serde(default = "default_fast_paths")]
    pub fast_paths: usize,
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}
fn default_fast_paths() -> usize {
    FAST_PATHS
}

impl Default for SsaConfig {
    fn default() -> Self {
        SsaConfig {
            n_paths: DEFAULT_PATHS,
            fast_paths: FAST_PATHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FptConfig {
    /// Predicate over species counts and `N`, e.g. `"R/N >= 1/10"`.
    pub target: String,
    /// Horizon of the SSA estimate and the fluid search; defaults to the integration horizon.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    /// Samples of the CDF comparison grid.
    #[serde(default = "default_points")]
    pub grid_points: usize,
}

/// Chain produced by the model block, with bookkeeping for subsets.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub ctmc: LabeledCtmc,
    /// Network the chain came from when it is an unmodified mass-action model,
    /// which is when the classical fluid is defined.
    pub network: Option<ReactionNetwork>,
    /// Indices in the full chain of the kept states, when a subset was taken.
    pub subset_members: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| GfaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            GfaError::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
        })?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks everything that does not need the state space.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GfaError::Config(m));
        let m = &self.model;
        match m.builder {
            ModelBuilder::BirthDeath | ModelBuilder::LotkaVolterra | ModelBuilder::Sirs => {
                if !m.n.is_some_and(|n| n >= 1) {
                    return bad("model.n (system size >= 1) is required".into());
                }
            }
            ModelBuilder::GeneticSwitch => {
                if !m.switch_rate.is_some_and(|r| r > 0.0 && r.is_finite()) {
                    return bad("model.switch_rate must be positive".into());
                }
                if !m.cap_a.is_some_and(|c| c >= 1) {
                    return bad("model.cap_a must be >= 1".into());
                }
            }
            ModelBuilder::Network => match &m.network {
                None => return bad("model.network is required for builder = \"network\"".into()),
                Some(net) => net.validate().map_err(|e| GfaError::Config(e.to_string()))?,
            },
        }
        if let Some(p) = &m.perturb {
            if !(p.rate_noise_sigma >= 0.0) || !p.rate_noise_sigma.is_finite() {
                return bad("model.perturb.rate_noise_sigma must be >= 0".into());
            }
            if !(0.0..1.0).contains(&p.removal_prob) {
                return bad("model.perturb.removal_prob must lie in [0, 1)".into());
            }
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be >= 1".into());
        }
        if let Some(eps) = self.embedding.eps {
            if !(eps > 0.0) || !eps.is_finite() {
                return bad("embedding.eps must be positive".into());
            }
        }
        let i = &self.integration;
        if !(i.t_end > 0.0) || !i.t_end.is_finite() {
            return bad("integration.t_end must be positive".into());
        }
        if i.points < 2 {
            return bad("integration.points must be >= 2".into());
        }
        if !(i.rtol > 0.0) || !(i.atol > 0.0) {
            return bad("integration tolerances must be positive".into());
        }
        let given = [i.initial_state.is_some(), i.initial_fraction.is_some(), i.initial_index.is_some()];
        if given.iter().filter(|&&b| b).count() > 1 {
            return bad("give at most one of initial_state, initial_fraction, initial_index".into());
        }
        if self.ssa.n_paths == 0 || self.ssa.fast_paths == 0 {
            return bad("ssa.n_paths and ssa.fast_paths must be >= 1".into());
        }
        if self.gp.jitter < 0.0 || !self.gp.jitter.is_finite() {
            return bad("gp.jitter must be >= 0".into());
        }
        if let Some(f) = &self.fpt {
            crate::fpt::Predicate::parse(&f.target).map_err(|e| GfaError::Config(format!("fpt.target: {e}")))?;
            if f.t_end.is_some_and(|t| !(t > 0.0) || !t.is_finite()) {
                return bad("fpt.t_end must be positive".into());
            }
            if f.n_paths == Some(0) || f.grid_points < 2 {
                return bad("fpt.n_paths must be >= 1 and fpt.grid_points >= 2".into());
            }
        }
        Ok(())
    }

    /// Builds the chain: base model, then perturbations, then subset.
    pub fn build_model(&self) -> Result<BuiltModel> {
        let m = &self.model;
        let net = match m.builder {
            ModelBuilder::BirthDeath => Some(models::birth_death_network(m.n.unwrap_or(1))),
            ModelBuilder::LotkaVolterra => Some(models::lotka_volterra_network(m.n.unwrap_or(1))),
            ModelBuilder::Sirs => Some(models::sirs_network(m.n.unwrap_or(1))),
            ModelBuilder::Network => m.network.clone(),
            ModelBuilder::GeneticSwitch => None,
        };
        let mut ctmc = match &net {
            Some(net) => build_reaction_ctmc(net)?,
            None => build_genetic_switch(m.switch_rate.unwrap_or(0.0), m.cap_a.unwrap_or(0))?,
        };
        let mut pristine = net.is_some();
        if let Some(p) = &m.perturb {
            let seed = p.seed.unwrap_or(self.seed);
            if p.rate_noise_sigma > 0.0 {
                ctmc.generator = perturb_rates(&ctmc.generator, p.rate_noise_sigma, seed)?;
                pristine = false;
            }
            if p.removal_prob > 0.0 {
                // Separate stream from the rate noise.
                ctmc.generator = remove_transitions(&ctmc.generator, p.removal_prob, seed.wrapping_add(1))?;
                pristine = false;
            }
        }
        let mut subset_members = None;
        if let Some(s) = &m.subset {
            let root = ctmc
                .index_of(&s.root)
                .ok_or_else(|| GfaError::Config(format!("subset root {:?} is not a state", s.root)))?;
            let (sub, q) = extract_subset(&ctmc.generator, root, s.radius)?;
            ctmc = LabeledCtmc {
                generator: q,
                labels: sub.members.iter().map(|&i| ctmc.labels[i].clone()).collect(),
                species: ctmc.species.clone(),
                cap: ctmc.cap,
            };
            subset_members = Some(sub.members);
            pristine = false;
        }
        if self.embedding.method != EmbeddingKind::Canonical && self.embedding.dim >= ctmc.n_states() {
            return Err(GfaError::Config(format!(
                "embedding.dim = {} must be smaller than the number of states ({})",
                self.embedding.dim,
                ctmc.n_states()
            )));
        }
        Ok(BuiltModel {
            ctmc,
            network: if pristine { net } else { None },
            subset_members,
        })
    }

    /// Resolves the initial state to an index of the built chain.
    pub fn initial_state(&self, model: &LabeledCtmc) -> Result<usize> {
        let i = &self.integration;
        let coords: Vec<u32> = if let Some(idx) = i.initial_index {
            if idx >= model.n_states() {
                return Err(GfaError::Config(format!("initial_index {idx} out of range")));
            }
            return Ok(idx);
        } else if let Some(c) = &i.initial_state {
            c.clone()
        } else if let Some(f) = &i.initial_fraction {
            f.iter().map(|x| (x * f64::from(model.cap)).round().max(0.0) as u32).collect()
        } else if let Some(s) = &self.model.subset {
            s.root.clone()
        } else {
            return Ok(0);
        };
        model
            .index_of(&coords)
            .ok_or_else(|| GfaError::Config(format!("initial state {coords:?} is not a state of the model")))
    }

    pub fn n_paths(&self, fast: bool) -> usize {
        if fast {
            self.ssa.fast_paths
        } else {
            self.ssa.n_paths
        }
    }

    pub fn fpt_paths(&self, fast: bool) -> usize {
        match (&self.fpt, fast) {
            (_, true) => self.ssa.fast_paths,
            (Some(f), false) => f.n_paths.unwrap_or(self.ssa.n_paths),
            (None, false) => self.ssa.n_paths,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_build() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let built = cfg.build_model().unwrap();
            cfg.initial_state(&built.ctmc).unwrap();
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[model]\nbuilder = \"sirs\"\nn = 10\n").unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.embedding.dim, 2);
        assert_eq!(cfg.integration.points, DEFAULT_GRID_POINTS);
        assert_eq!(cfg.ssa.n_paths, DEFAULT_PATHS);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn validation_errors() {
        for bad in [
            "[model]\nbuilder = \"sirs\"\n",
            "[model]\nbuilder = \"nope\"\nn = 3\n",
            "[model]\nbuilder = \"sirs\"\nn = 3\n[integration]\nt_end = -1.0\n",
            "[model]\nbuilder = \"sirs\"\nn = 3\n[fpt]\ntarget = \"R >\"\n",
            "[model]\nbuilder = \"sirs\"\nn = 3\nunknown = 1\n",
            "[model]\nbuilder = \"genetic_switch\"\nswitch_rate = 0.0\ncap_a = 3\n",
        ] {
            let err = ExperimentConfig::from_toml(bad).unwrap_err();
            assert!(err.is_validation(), "{bad}: {err}");
        }
    }

    #[test]
    fn dimension_not_below_state_count_is_rejected() {
        let cfg = ExperimentConfig::from_toml("[model]\nbuilder = \"sirs\"\nn = 1\n[embedding]\ndim = 3\n").unwrap();
        let err = cfg.build_model().unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn initial_fraction_rounds_to_counts() {
        let cfg = ExperimentConfig::preset("lotka_volterra").unwrap();
        let built = cfg.build_model().unwrap();
        let s0 = cfg.initial_state(&built.ctmc).unwrap();
        assert_eq!(built.ctmc.labels[s0].coords, vec![9, 21]);
    }
}
