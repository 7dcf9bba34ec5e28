//! Stage-by-stage orchestration of an experiment with persisted artifacts.
//!
//! Every stage reads its inputs from files written by earlier stages and
//! records the SHA-256 of each input and output in `manifest.json`. A stage
//! whose record matches the current configuration and whose files are intact
//! is reused instead of recomputed, so any single stage can be re-run in
//! isolation. Wall-clock timings go to a separate `timings.json`, which keeps
//! the rest of the bundle bit-identical across runs with the same config.
//!
//! | stage     | outputs                                                        |
//! |-----------|----------------------------------------------------------------|
//! | `build`   | `config.toml`, `generator.coo`, `states.csv`, `model.json`     |
//! | `embed`   | `embedding.csv`, `embedding.json`                              |
//! | `drift`   | `drift.csv`, `hyperparameters.json`, `drift_report.json`       |
//! | `gfa`     | `trajectory_gfa.csv`                                           |
//! | `ssa`     | `ssa_summary.csv`                                              |
//! | `compare` | `compare.csv`, `compare_report.json`                           |
//! | `fpt`     | `fpt_{gfa,ssa,classical}.csv`, `fpt_cdf.csv`, `fpt_report.json` |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BuiltModel, EmbeddingKind, ExperimentConfig};
use crate::ctmc::{drift_observations, GeneratorMatrix, LabeledCtmc, ReactionNetwork, StateLabel};
use crate::embed::{
    canonical_embedding, diffusion_map_from_generator, laplacian_eigenmap, DiffusionMapOptions, Embedding,
};
use crate::error::{GfaError, Result};
use crate::fluid::cke::{point_mass, DENSE_CKE_LIMIT};
use crate::fluid::{
    classical_fluid, integrate_gfa, projected_mean, trajectory_rmse, uniform_grid, Trajectory,
};
use crate::fpt::{
    cdf_samples_table, compare_cdfs, fluid_fpt, predicate_crossing, target_mask, CdfComparison, FptCdf, Predicate,
    VoronoiClassifier,
};
use crate::gp::{default_init, gp_fit, DriftField, GpHyperparameters, GpOptions};
use crate::io::{read_json, read_text, write_json, write_text, Table};
use crate::ssa::{ssa_ensemble_summary, ssa_fpt, EnsembleSummary};

/// Offset of the first-passage ensemble's root seed from the run seed, so the
/// two ensembles never share random streams.
pub const FPT_SEED_OFFSET: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Build,
    Embed,
    Drift,
    Gfa,
    Ssa,
    Compare,
    Fpt,
}

impl Stage {
    /// Execution order of `all`.
    pub const ALL: [Stage; 7] = [
        Stage::Build,
        Stage::Embed,
        Stage::Drift,
        Stage::Gfa,
        Stage::Ssa,
        Stage::Compare,
        Stage::Fpt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Embed => "embed",
            Stage::Drift => "drift",
            Stage::Gfa => "gfa",
            Stage::Ssa => "ssa",
            Stage::Compare => "compare",
            Stage::Fpt => "fpt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| GfaError::Config(format!("unknown stage `{s}`")))
    }

    /// Stages whose artifacts this one reads.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Build => &[],
            Stage::Embed => &[Stage::Build],
            Stage::Drift => &[Stage::Build, Stage::Embed],
            Stage::Gfa => &[Stage::Build, Stage::Embed, Stage::Drift],
            Stage::Ssa => &[Stage::Build, Stage::Embed],
            Stage::Compare => &[Stage::Build, Stage::Embed, Stage::Gfa, Stage::Ssa],
            Stage::Fpt => &[Stage::Build, Stage::Embed, Stage::Drift, Stage::Gfa],
        }
    }

    /// Whether `--fast` changes the stage's output.
    fn uses_ensemble(self) -> bool {
        matches!(self, Stage::Ssa | Stage::Compare | Stage::Fpt)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// CI-scale ensembles.
    pub fast: bool,
}

/// Content-addressed record of one completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the configuration, the ensemble mode and all input hashes.
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub fast: bool,
    /// Every seed the run uses, by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub failure: Option<StageFailure>,
}

/// Summary of the `build` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub species: Vec<String>,
    pub cap: u32,
    pub n_states: usize,
    pub n_transitions: usize,
    pub max_exit_rate: f64,
    pub initial_state: usize,
    pub initial_coords: Vec<u32>,
    /// Full-chain indices of the kept states when a subset was taken.
    pub subset_members: Option<Vec<usize>>,
    /// Mass-action network, present when the classical fluid is defined.
    pub network: Option<ReactionNetwork>,
}

/// Output of the `compare` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub n_paths: usize,
    pub bbox_diagonal: f64,
    /// RMSE between the fluid and the projected ensemble mean.
    pub rmse_gfa_ssa: f64,
    pub rmse_gfa_ssa_relative: f64,
    /// RMSE against the exact projected mean, when it was computed.
    pub rmse_gfa_exact: Option<f64>,
    pub rmse_gfa_exact_relative: Option<f64>,
    pub rmse_ssa_exact: Option<f64>,
    pub max_error_gfa_ssa: f64,
}

/// Output of the `fpt` stage. Crossing times are `None` when never reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FptReport {
    pub target: String,
    pub n_target_states: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub gfa_crossing: Option<f64>,
    pub classical_crossing: Option<f64>,
    pub ssa_median: Option<f64>,
    pub ssa_q10: Option<f64>,
    pub ssa_q90: Option<f64>,
    pub ssa_censored_fraction: f64,
    pub gfa_vs_ssa: CdfComparison,
    pub classical_vs_ssa: Option<CdfComparison>,
    pub gfa_vs_classical: Option<CdfComparison>,
}

fn finite(t: f64) -> Option<f64> {
    t.is_finite().then_some(t)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| GfaError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the configuration with the output directory removed, since moving
/// a run does not change its results.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out = None;
    sha256_hex(c.to_toml().as_bytes())
}

/// A run directory plus the in-memory products of the stages done so far.
pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    fast: bool,
    config_hash: String,
    manifest: Manifest,
    timings: BTreeMap<String, f64>,
    model: Option<(LabeledCtmc, ModelInfo)>,
    embedding: Option<Embedding>,
    field: Option<DriftField>,
    gfa: Option<Trajectory>,
    ssa: Option<EnsembleSummary>,
}

impl Pipeline {
    /// Validates the configuration and opens (or creates) the run directory.
    /// Records of a previous run are kept only if its configuration hash matches.
    pub fn new(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&opts.out).map_err(|e| GfaError::io(&opts.out, e))?;
        let hash = config_hash(&cfg);
        let mut seeds = BTreeMap::new();
        seeds.insert("ssa".to_string(), cfg.seed);
        if cfg.fpt.is_some() {
            seeds.insert("fpt_ssa".to_string(), cfg.seed.wrapping_add(FPT_SEED_OFFSET));
        }
        if let Some(p) = &cfg.model.perturb {
            let s = p.seed.unwrap_or(cfg.seed);
            seeds.insert("perturb_rates".to_string(), s);
            seeds.insert("perturb_removal".to_string(), s.wrapping_add(1));
        }
        let fresh = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash.clone(),
            root_seed: cfg.seed,
            fast: opts.fast,
            seeds,
            stages: BTreeMap::new(),
            failure: None,
        };
        let manifest_path = opts.out.join("manifest.json");
        let mut manifest = match read_json::<Manifest>(&manifest_path) {
            Ok(old) if old.config_hash == hash && old.version == fresh.version => Manifest {
                stages: old.stages,
                ..fresh
            },
            _ => fresh,
        };
        manifest.failure = None;
        let timings = read_json(&opts.out.join("timings.json")).unwrap_or_default();
        Ok(Pipeline {
            cfg,
            out: opts.out.clone(),
            fast: opts.fast,
            config_hash: hash,
            manifest,
            timings,
            model: None,
            embedding: None,
            field: None,
            gfa: None,
            ssa: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Seconds spent per stage in this and earlier invocations on the directory.
    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }

    /// Stages executed by `all`: the full chain, with `fpt` only when configured.
    pub fn default_stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Fpt || self.cfg.fpt.is_some())
            .collect()
    }

    /// Runs every stage of [`Pipeline::default_stages`] up to and including
    /// `last`; asking for `fpt` without an `[fpt]` block is a config error.
    pub fn run_through(&mut self, last: Stage) -> Result<()> {
        let stages = self.default_stages();
        if !stages.contains(&last) {
            return self.run(last);
        }
        for s in stages.into_iter().take_while(|s| *s <= last) {
            self.run(s)?;
        }
        Ok(())
    }

    /// Runs [`Pipeline::default_stages`].
    pub fn run_all(&mut self) -> Result<()> {
        for s in self.default_stages() {
            self.run(s)?;
        }
        Ok(())
    }

    /// Runs one stage after everything it transitively depends on, reusing
    /// intact artifacts.
    pub fn run(&mut self, stage: Stage) -> Result<()> {
        let mut needed = BTreeSet::from([stage]);
        let mut frontier = vec![stage];
        while let Some(s) = frontier.pop() {
            for &dep in s.dependencies() {
                if needed.insert(dep) {
                    frontier.push(dep);
                }
            }
        }
        // Stage order is a topological order of the dependency graph.
        for s in needed {
            self.run_single(s)?;
        }
        Ok(())
    }

    fn run_single(&mut self, stage: Stage) -> Result<()> {
        let key = self.stage_key(stage)?;
        if self.is_current(stage, &key) {
            return Ok(());
        }
        let start = Instant::now();
        let result = self.execute(stage);
        match result {
            Ok(outputs) => {
                let inputs = self.input_hashes(stage)?;
                let outputs = outputs
                    .into_iter()
                    .map(|f| Ok((f.to_string(), file_hash(&self.out.join(f))?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                self.manifest
                    .stages
                    .insert(stage.name().to_string(), StageRecord { key, inputs, outputs });
                self.timings
                    .insert(stage.name().to_string(), start.elapsed().as_secs_f64());
                self.persist()
            }
            Err(e) => {
                let err = GfaError::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(e),
                };
                self.manifest.failure = Some(StageFailure {
                    stage: stage.name().to_string(),
                    error: err.to_string(),
                });
                // Artifacts of completed stages stay on disk; keep the manifest in step.
                let _ = self.persist();
                Err(err)
            }
        }
    }

    fn persist(&self) -> Result<()> {
        write_json(&self.out.join("manifest.json"), &self.manifest)?;
        write_json(&self.out.join("timings.json"), &self.timings)
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for dep in stage.dependencies() {
            let rec = self
                .manifest
                .stages
                .get(dep.name())
                .ok_or_else(|| GfaError::invalid(format!("stage `{dep}` has no record")))?;
            for (f, h) in &rec.outputs {
                inputs.insert(f.clone(), h.clone());
            }
        }
        Ok(inputs)
    }

    fn stage_key(&self, stage: Stage) -> Result<String> {
        let mut text = format!("{}\n{}\n", stage.name(), self.config_hash);
        if stage.uses_ensemble() {
            text.push_str(if self.fast { "fast\n" } else { "full\n" });
        }
        for (f, h) in self.input_hashes(stage)? {
            text.push_str(&format!("{f} {h}\n"));
        }
        Ok(sha256_hex(text.as_bytes()))
    }

    fn is_current(&self, stage: Stage, key: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return false;
        };
        rec.key == key
            && rec
                .outputs
                .iter()
                .all(|(f, h)| file_hash(&self.out.join(f)).is_ok_and(|actual| &actual == h))
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn execute(&mut self, stage: Stage) -> Result<Vec<&'static str>> {
        match stage {
            Stage::Build => self.stage_build(),
            Stage::Embed => self.stage_embed(),
            Stage::Drift => self.stage_drift(),
            Stage::Gfa => self.stage_gfa(),
            Stage::Ssa => self.stage_ssa(),
            Stage::Compare => self.stage_compare(),
            Stage::Fpt => self.stage_fpt(),
        }
    }

    // ----- loaders for persisted artifacts -------------------------------

    fn model(&mut self) -> Result<&(LabeledCtmc, ModelInfo)> {
        if self.model.is_none() {
            let info: ModelInfo = read_json(&self.path("model.json"))?;
            let generator = GeneratorMatrix::from_coo_text(&read_text(&self.path("generator.coo"))?)?;
            let table = Table::read(&self.path("states.csv"))?;
            let labels = labels_from_table(&table, info.species.len())?;
            if labels.len() != generator.n_states() {
                return Err(GfaError::Parse("states.csv does not match generator.coo".into()));
            }
            let ctmc = LabeledCtmc {
                generator,
                labels,
                species: info.species.clone(),
                cap: info.cap,
            };
            self.model = Some((ctmc, info));
        }
        Ok(self.model.as_ref().expect("just loaded"))
    }

    fn embedding(&mut self) -> Result<&Embedding> {
        if self.embedding.is_none() {
            self.embedding = Some(Embedding::load(&self.out, "embedding")?);
        }
        Ok(self.embedding.as_ref().expect("just loaded"))
    }

    fn field(&mut self) -> Result<&DriftField> {
        if self.field.is_none() {
            let y = self.embedding()?.coords().clone();
            let h = GpHyperparameters::load(&self.path("hyperparameters.json"))?;
            let table = Table::read(&self.path("drift.csv"))?;
            let k = y.ncols();
            if table.header.len() != 2 * k || table.rows.len() != y.nrows() {
                return Err(GfaError::Parse("drift.csv does not match the embedding".into()));
            }
            let r = DMatrix::from_fn(y.nrows(), k, |i, c| table.rows[i][k + c]);
            let opts = GpOptions {
                optimize: false,
                jitter: h.jitter,
                ..GpOptions::default()
            };
            self.field = Some(gp_fit(&y, &r, &h, &opts)?);
        }
        Ok(self.field.as_ref().expect("just loaded"))
    }

    fn gfa(&mut self) -> Result<&Trajectory> {
        if self.gfa.is_none() {
            self.gfa = Some(Trajectory::load(&self.path("trajectory_gfa.csv"))?);
        }
        Ok(self.gfa.as_ref().expect("just loaded"))
    }

    fn ssa(&mut self) -> Result<&EnsembleSummary> {
        if self.ssa.is_none() {
            self.ssa = Some(EnsembleSummary::load(&self.path("ssa_summary.csv"))?);
        }
        Ok(self.ssa.as_ref().expect("just loaded"))
    }

    // ----- stages ---------------------------------------------------------

    fn stage_build(&mut self) -> Result<Vec<&'static str>> {
        self.model = None;
        let BuiltModel {
            ctmc,
            network,
            subset_members,
        } = self.cfg.build_model()?;
        let s0 = self.cfg.initial_state(&ctmc)?;
        let q = &ctmc.generator;
        let info = ModelInfo {
            species: ctmc.species.clone(),
            cap: ctmc.cap,
            n_states: q.n_states(),
            n_transitions: q.n_transitions(),
            max_exit_rate: q.max_exit_rate(),
            initial_state: s0,
            initial_coords: ctmc.labels[s0].coords.clone(),
            subset_members,
            network,
        };
        let mut resolved = self.cfg.clone();
        resolved.out = None;
        write_text(&self.path("config.toml"), &resolved.to_toml())?;
        write_text(&self.path("generator.coo"), &q.to_coo_text())?;
        labels_to_table(&ctmc).write(&self.path("states.csv"))?;
        write_json(&self.path("model.json"), &info)?;
        self.model = Some((ctmc, info));
        Ok(vec!["config.toml", "generator.coo", "states.csv", "model.json"])
    }

    fn stage_embed(&mut self) -> Result<Vec<&'static str>> {
        self.embedding = None;
        let e = &self.cfg.embedding;
        let (method, dim, eps, diffusion_time) = (e.method, e.dim, e.eps, e.diffusion_time);
        let (ctmc, _) = self.model()?;
        let emb = match method {
            EmbeddingKind::DiffusionMap => diffusion_map_from_generator(
                &ctmc.generator,
                dim,
                eps,
                DiffusionMapOptions {
                    diffusion_time,
                    ..Default::default()
                },
            )?,
            EmbeddingKind::LaplacianEigenmap => laplacian_eigenmap(&ctmc.generator, dim)?,
            EmbeddingKind::Canonical => canonical_embedding(&ctmc.labels, ctmc.cap)?,
        };
        emb.save(&self.out, "embedding")?;
        self.embedding = Some(emb);
        Ok(vec!["embedding.csv", "embedding.json"])
    }

    fn stage_drift(&mut self) -> Result<Vec<&'static str>> {
        self.field = None;
        let q = self.model()?.0.generator.clone();
        let y = self.embedding()?.coords().clone();
        let r = drift_observations(&q, &y)?;
        let init = self.cfg.gp.apply_init(default_init(&y, &r))?;
        let field = gp_fit(&y, &r, &init, &self.cfg.gp.options())?;

        let k = y.ncols();
        let mut header: Vec<String> = (1..=k).map(|c| format!("y_{c}")).collect();
        header.extend((1..=k).map(|c| format!("drift_{c}")));
        let mut table = Table::new(header);
        for i in 0..y.nrows() {
            let mut row: Vec<f64> = y.row(i).iter().copied().collect();
            row.extend(r.row(i).iter().copied());
            table.push(row);
        }
        table.write(&self.path("drift.csv"))?;
        field.hyperparameters().save(&self.path("hyperparameters.json"))?;
        write_json(&self.path("drift_report.json"), &field.report().cloned())?;
        self.field = Some(field);
        Ok(vec!["drift.csv", "hyperparameters.json", "drift_report.json"])
    }

    fn stage_gfa(&mut self) -> Result<Vec<&'static str>> {
        self.gfa = None;
        let s0 = self.model()?.1.initial_state;
        let y0: Vec<f64> = self.embedding()?.point(s0).iter().copied().collect();
        let grid = self.cfg.integration.grid()?;
        let opts = self.cfg.integration.ode_options();
        let traj = integrate_gfa(self.field()?, &y0, &grid, &opts)?;
        traj.save(&self.path("trajectory_gfa.csv"))?;
        self.gfa = Some(traj);
        Ok(vec!["trajectory_gfa.csv"])
    }

    fn stage_ssa(&mut self) -> Result<Vec<&'static str>> {
        self.ssa = None;
        let n_paths = self.cfg.n_paths(self.fast);
        let seed = self.cfg.seed;
        let grid = self.cfg.integration.grid()?;
        let (q, s0) = {
            let (ctmc, info) = self.model()?;
            (ctmc.generator.clone(), info.initial_state)
        };
        let summary = ssa_ensemble_summary(&q, s0, self.embedding()?, &grid, n_paths, seed)?;
        summary.save(&self.path("ssa_summary.csv"))?;
        self.ssa = Some(summary);
        Ok(vec!["ssa_summary.csv"])
    }

    fn stage_compare(&mut self) -> Result<Vec<&'static str>> {
        let (q, s0) = {
            let (ctmc, info) = self.model()?;
            (ctmc.generator.clone(), info.initial_state)
        };
        let gfa = self.gfa()?.clone();
        let ssa = self.ssa()?.clone();
        let emb = self.embedding()?.clone();
        if ssa.times.len() != gfa.len() || ssa.times.iter().zip(gfa.times()).any(|(a, b)| a != b) {
            return Err(GfaError::DimensionMismatch(
                "fluid and ensemble are sampled on different grids".into(),
            ));
        }
        let exact = if q.n_states() <= DENSE_CKE_LIMIT {
            Some(projected_mean(&q, &point_mass(q.n_states(), s0), &emb, gfa.times())?)
        } else {
            None
        };

        let k = gfa.dim();
        let bbox = emb.bbox_diagonal();
        let err_ssa: Vec<f64> = (0..gfa.len())
            .map(|i| (gfa.points().row(i) - ssa.mean.row(i)).norm())
            .collect();
        let rmse_ssa = trajectory_rmse(gfa.points(), &ssa.mean)?;
        let rmse_exact = exact
            .as_ref()
            .map(|e| trajectory_rmse(gfa.points(), e.points()))
            .transpose()?;
        let rmse_ssa_exact = exact
            .as_ref()
            .map(|e| trajectory_rmse(&ssa.mean, e.points()))
            .transpose()?;

        let mut header = vec!["t".to_string()];
        for prefix in ["gfa", "ssa_mean", "ssa_std"] {
            header.extend((1..=k).map(|c| format!("{prefix}_{c}")));
        }
        if exact.is_some() {
            header.extend((1..=k).map(|c| format!("exact_{c}")));
        }
        header.push("error_gfa_ssa".into());
        if exact.is_some() {
            header.push("error_gfa_exact".into());
        }
        let mut table = Table::new(header);
        table.comments.push(format!("n_paths={}", ssa.n_paths));
        for i in 0..gfa.len() {
            let mut row = vec![gfa.times()[i]];
            row.extend(gfa.points().row(i).iter());
            row.extend(ssa.mean.row(i).iter());
            row.extend(ssa.std.row(i).iter());
            if let Some(e) = &exact {
                row.extend(e.points().row(i).iter());
            }
            row.push(err_ssa[i]);
            if let Some(e) = &exact {
                row.push((gfa.points().row(i) - e.points().row(i)).norm());
            }
            table.push(row);
        }
        table.write(&self.path("compare.csv"))?;
        let report = CompareReport {
            n_paths: ssa.n_paths,
            bbox_diagonal: bbox,
            rmse_gfa_ssa: rmse_ssa,
            rmse_gfa_ssa_relative: rmse_ssa / bbox,
            rmse_gfa_exact: rmse_exact,
            rmse_gfa_exact_relative: rmse_exact.map(|r| r / bbox),
            rmse_ssa_exact,
            max_error_gfa_ssa: err_ssa.iter().copied().fold(0.0, f64::max),
        };
        write_json(&self.path("compare_report.json"), &report)?;
        Ok(vec!["compare.csv", "compare_report.json"])
    }

    fn stage_fpt(&mut self) -> Result<Vec<&'static str>> {
        let fcfg = self
            .cfg
            .fpt
            .clone()
            .ok_or_else(|| GfaError::Config("the fpt stage needs an [fpt] block".into()))?;
        let pred = Predicate::parse(&fcfg.target).map_err(|e| GfaError::Config(format!("fpt.target: {e}")))?;
        let (ctmc, info) = self.model()?.clone();
        pred.check_names(&ctmc.species)
            .map_err(|e| GfaError::Config(format!("fpt.target: {e}")))?;
        let s0 = info.initial_state;
        let mask = target_mask(&ctmc, &pred)?;
        if mask[s0] {
            return Err(GfaError::Config(format!(
                "initial state {:?} already satisfies the target `{}`",
                info.initial_coords, fcfg.target
            )));
        }
        let n_target = mask.iter().filter(|&&b| b).count();
        let horizon = fcfg.t_end.unwrap_or(self.cfg.integration.t_end);
        let n_paths = self.cfg.fpt_paths(self.fast);
        let seed = self.cfg.seed.wrapping_add(FPT_SEED_OFFSET);
        let opts = self.cfg.integration.ode_options();
        let points = self.cfg.integration.points;

        // The fluid must cover the whole horizon.
        let traj = if horizon == self.cfg.integration.t_end {
            self.gfa()?.clone()
        } else {
            let y0: Vec<f64> = self.embedding()?.point(s0).iter().copied().collect();
            let grid = uniform_grid(horizon, points)?;
            integrate_gfa(self.field()?, &y0, &grid, &opts)?
        };
        let emb = self.embedding()?.clone();

        let (gfa_cdf, ssa_cdf) = if n_target == 0 {
            // Nothing to reach: both estimates are identically zero.
            (
                FptCdf::fluid_step(f64::INFINITY),
                FptCdf::empirical(Vec::new(), n_paths, horizon)?,
            )
        } else {
            let classifier = VoronoiClassifier::new(emb.coords().clone(), mask.clone())?;
            (
                fluid_fpt(&traj, &classifier)?,
                ssa_fpt(&ctmc.generator, s0, &mask, horizon, n_paths, seed)?,
            )
        };

        let classical_cdf = match &info.network {
            Some(net) => {
                let n = f64::from(net.cap);
                let x0: Vec<f64> = info.initial_coords.iter().map(|&c| f64::from(c) / n).collect();
                let grid = uniform_grid(horizon, points)?;
                let traj = classical_fluid(net, &x0, &grid, &opts)?;
                let species = &ctmc.species;
                Some(predicate_crossing(&traj, |x| {
                    let counts: Vec<f64> = x.iter().map(|v| v * n).collect();
                    pred.eval(species, &counts, n)
                }))
            }
            None => None,
        };

        let cdf_grid = uniform_grid(horizon, fcfg.grid_points)?;
        let mut names = vec!["gfa", "ssa"];
        let mut cdfs = vec![&gfa_cdf, &ssa_cdf];
        if let Some(c) = &classical_cdf {
            names.push("classical");
            cdfs.push(c);
        }
        cdf_samples_table(&names, &cdfs, &cdf_grid).write(&self.path("fpt_cdf.csv"))?;
        gfa_cdf.save(&self.path("fpt_gfa.csv"))?;
        ssa_cdf.save(&self.path("fpt_ssa.csv"))?;
        let mut files = vec!["fpt_cdf.csv", "fpt_gfa.csv", "fpt_ssa.csv"];
        if let Some(c) = &classical_cdf {
            c.save(&self.path("fpt_classical.csv"))?;
            files.push("fpt_classical.csv");
        }

        let crossing = |c: &FptCdf| match c {
            FptCdf::FluidStep { crossing_time } => finite(*crossing_time),
            FptCdf::Empirical { .. } => None,
        };
        let report = FptReport {
            target: fcfg.target.clone(),
            n_target_states: n_target,
            horizon,
            n_paths,
            seed,
            gfa_crossing: crossing(&gfa_cdf),
            classical_crossing: classical_cdf.as_ref().and_then(crossing),
            ssa_median: finite(ssa_cdf.median()),
            ssa_q10: finite(ssa_cdf.quantile(0.1)),
            ssa_q90: finite(ssa_cdf.quantile(0.9)),
            ssa_censored_fraction: ssa_cdf.censored_fraction(),
            gfa_vs_ssa: compare_cdfs(&gfa_cdf, &ssa_cdf, &cdf_grid)?,
            classical_vs_ssa: classical_cdf
                .as_ref()
                .map(|c| compare_cdfs(c, &ssa_cdf, &cdf_grid))
                .transpose()?,
            gfa_vs_classical: classical_cdf
                .as_ref()
                .map(|c| compare_cdfs(&gfa_cdf, c, &cdf_grid))
                .transpose()?,
        };
        write_json(&self.path("fpt_report.json"), &report)?;
        files.push("fpt_report.json");
        Ok(files)
    }
}

fn labels_to_table(ctmc: &LabeledCtmc) -> Table {
    let mut header = vec!["index".to_string()];
    header.extend(ctmc.species.iter().cloned());
    let mut t = Table::new(header);
    for (i, l) in ctmc.labels.iter().enumerate() {
        let mut row = vec![i as f64];
        row.extend(l.coords.iter().map(|&c| f64::from(c)));
        t.push(row);
    }
    t
}

fn labels_from_table(t: &Table, n_species: usize) -> Result<Vec<StateLabel>> {
    if t.header.len() != n_species + 1 {
        return Err(GfaError::Parse("states.csv has the wrong number of species".into()));
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row[0] != i as f64 {
                return Err(GfaError::Parse(format!("states.csv row {i} is out of order")));
            }
            row[1..]
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v <= f64::from(u32::MAX) && v == v.trunc() {
                        Ok(v as u32)
                    } else {
                        Err(GfaError::Parse(format!("states.csv row {i}: bad count {v}")))
                    }
                })
                .collect::<Result<Vec<u32>>>()
                .map(StateLabel::new)
        })
        .collect()
}

/// Builds, embeds, fits and integrates; returns the fluid trajectory.
pub fn run_gfa(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Trajectory> {
    let mut p = Pipeline::new(cfg, opts)?;
    p.run(Stage::Gfa)?;
    p.gfa().cloned()
}

/// Runs everything the comparison needs and returns its report.
pub fn run_compare(cfg: ExperimentConfig, opts: &RunOptions) -> Result<CompareReport> {
    let mut p = Pipeline::new(cfg, opts)?;
    p.run(Stage::Compare)?;
    read_json(&p.path("compare_report.json"))
}

/// Runs everything the first-passage analysis needs and returns its report.
pub fn run_fpt(cfg: ExperimentConfig, opts: &RunOptions) -> Result<FptReport> {
    let mut p = Pipeline::new(cfg, opts)?;
    p.run(Stage::Fpt)?;
    read_json(&p.path("fpt_report.json"))
}
