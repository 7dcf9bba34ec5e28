//! Python module `gfa`: chains, embeddings, drift fields, fluid and
//! stochastic trajectories, first-passage times and the staged pipeline.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gfa_core::config::ExperimentConfig;
use gfa_core::ctmc::{self, drift_observations, models, GeneratorMatrix, LabeledCtmc};
use gfa_core::embed::{self, DiffusionMapOptions};
use gfa_core::fluid::{self, cke::point_mass, OdeOptions};
use gfa_core::fpt::{self as fpt_mod, Predicate, VoronoiClassifier};
use gfa_core::gp::{self, GpHyperparameters, GpOptions};
use gfa_core::pipeline::{Pipeline, RunOptions, Stage};
use gfa_core::{ssa, GfaError};

fn to_py(e: GfaError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

/// A finite chain: generator plus state labels.
#[pyclass(name = "Ctmc", module = "gfa", frozen)]
struct PyCtmc {
    inner: LabeledCtmc,
}

#[pymethods]
impl PyCtmc {
    /// Two independent birth-death species capped at `n`.
    #[staticmethod]
    fn birth_death(n: u32) -> PyResult<Self> {
        models::birth_death(n).map(|inner| PyCtmc { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn lotka_volterra(n: u32) -> PyResult<Self> {
        models::lotka_volterra(n).map(|inner| PyCtmc { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn sirs(n: u32) -> PyResult<Self> {
        models::sirs(n).map(|inner| PyCtmc { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn genetic_switch(switch_rate: f64, cap_a: u32) -> PyResult<Self> {
        ctmc::build_genetic_switch(switch_rate, cap_a)
            .map(|inner| PyCtmc { inner })
            .map_err(to_py)
    }

    /// Unlabelled chain from `(i, j, rate)` triples; states are labelled `[i]`.
    #[staticmethod]
    fn from_rates(n_states: usize, rates: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let generator = GeneratorMatrix::from_rates(n_states, rates).map_err(to_py)?;
        let labels = (0..n_states).map(|i| ctmc::StateLabel::new(vec![i as u32])).collect();
        Ok(PyCtmc {
            inner: LabeledCtmc {
                generator,
                labels,
                species: vec!["X".into()],
                cap: n_states.saturating_sub(1) as u32,
            },
        })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn species(&self) -> Vec<String> {
        self.inner.species.clone()
    }

    #[getter]
    fn cap(&self) -> u32 {
        self.inner.cap
    }

    fn labels(&self) -> Vec<Vec<u32>> {
        self.inner.labels.iter().map(|l| l.coords.clone()).collect()
    }

    fn index_of(&self, coords: Vec<u32>) -> Option<usize> {
        self.inner.index_of(&coords)
    }

    fn generator(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.generator.to_dense())
    }

    /// Target mask of a predicate such as `"R/N >= 1/10"`.
    fn target_mask(&self, predicate: &str) -> PyResult<Vec<bool>> {
        let p = Predicate::parse(predicate).map_err(to_py)?;
        fpt_mod::target_mask(&self.inner, &p).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Ctmc(n_states={}, species={:?}, cap={})",
            self.inner.n_states(),
            self.inner.species,
            self.inner.cap
        )
    }
}

#[pyclass(name = "Embedding", module = "gfa", frozen)]
struct PyEmbedding {
    inner: embed::Embedding,
}

#[pymethods]
impl PyEmbedding {
    /// Diffusion map of the uniformised chain.
    #[staticmethod]
    #[pyo3(signature = (chain, dim, eps=None, diffusion_time=None))]
    fn diffusion_map(chain: &PyCtmc, dim: usize, eps: Option<f64>, diffusion_time: Option<f64>) -> PyResult<Self> {
        let opts = DiffusionMapOptions {
            diffusion_time,
            ..Default::default()
        };
        embed::diffusion_map_from_generator(&chain.inner.generator, dim, eps, opts)
            .map(|inner| PyEmbedding { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn laplacian_eigenmap(chain: &PyCtmc, dim: usize) -> PyResult<Self> {
        embed::laplacian_eigenmap(&chain.inner.generator, dim)
            .map(|inner| PyEmbedding { inner })
            .map_err(to_py)
    }

    /// Species counts divided by the cap.
    #[staticmethod]
    fn canonical(chain: &PyCtmc) -> PyResult<Self> {
        embed::canonical_embedding(&chain.inner.labels, chain.inner.cap)
            .map(|inner| PyEmbedding { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn custom(coords: Vec<Vec<f64>>) -> PyResult<Self> {
        embed::Embedding::custom(matrix(&coords)?)
            .map(|inner| PyEmbedding { inner })
            .map_err(to_py)
    }

    fn coords(&self) -> Vec<Vec<f64>> {
        rows(self.inner.coords())
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn point(&self, state: usize) -> PyResult<Vec<f64>> {
        if state >= self.inner.n_states() {
            return Err(PyValueError::new_err("state index out of range"));
        }
        Ok(self.inner.point(state).iter().copied().collect())
    }

    fn bbox_diagonal(&self) -> f64 {
        self.inner.bbox_diagonal()
    }
}

/// Gaussian-process drift field over an embedding.
#[pyclass(name = "DriftField", module = "gfa", frozen)]
struct PyDriftField {
    inner: gp::DriftField,
}

#[pymethods]
impl PyDriftField {
    /// Fits the field to the chain's drift observations at the embedded states.
    #[staticmethod]
    #[pyo3(signature = (chain, embedding, optimize=true))]
    fn fit(chain: &PyCtmc, embedding: &PyEmbedding, optimize: bool) -> PyResult<Self> {
        let y = embedding.inner.coords();
        let r = drift_observations(&chain.inner.generator, y).map_err(to_py)?;
        let opts = GpOptions {
            optimize,
            ..Default::default()
        };
        gp::gp_fit_default(y, &r, &opts)
            .map(|inner| PyDriftField { inner })
            .map_err(to_py)
    }

    /// Fits with fixed hyperparameters on arbitrary data.
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, lengthscales, amplitudes, noise_sds, jitter=1e-8))]
    fn with_hyperparameters(
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        lengthscales: Vec<f64>,
        amplitudes: Vec<f64>,
        noise_sds: Vec<f64>,
        jitter: f64,
    ) -> PyResult<Self> {
        let h = GpHyperparameters {
            lengthscales,
            amplitudes,
            noise_sds,
            jitter,
        };
        let opts = GpOptions {
            optimize: false,
            jitter,
            ..Default::default()
        };
        gp::gp_fit(&matrix(&inputs)?, &matrix(&targets)?, &h, &opts)
            .map(|inner| PyDriftField { inner })
            .map_err(to_py)
    }

    fn mean(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        if point.len() != self.inner.input_dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.inner.mean(&point))
    }

    #[getter]
    fn lengthscales(&self) -> Vec<f64> {
        self.inner.lengthscales().to_vec()
    }

    #[getter]
    fn amplitudes(&self) -> Vec<f64> {
        self.inner.hyperparameters().amplitudes
    }

    #[getter]
    fn noise_sds(&self) -> Vec<f64> {
        self.inner.hyperparameters().noise_sds
    }

    /// Log marginal likelihood and its gradient in log-hyperparameters.
    fn log_marginal_likelihood(&self) -> PyResult<(f64, Vec<f64>)> {
        self.inner.log_marginal_likelihood().map_err(to_py)
    }
}

#[pyclass(name = "Trajectory", module = "gfa", frozen)]
struct PyTrajectory {
    inner: fluid::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        rows(self.inner.points())
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// First-passage-time CDF: an empirical distribution or a fluid step.
#[pyclass(name = "FptCdf", module = "gfa", frozen)]
struct PyFptCdf {
    inner: fpt_mod::FptCdf,
}

#[pymethods]
impl PyFptCdf {
    fn __call__(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    fn quantile(&self, p: f64) -> f64 {
        self.inner.quantile(p)
    }

    fn median(&self) -> f64 {
        self.inner.median()
    }

    #[getter]
    fn censored_fraction(&self) -> f64 {
        self.inner.censored_fraction()
    }

    #[getter]
    fn crossing_time(&self) -> Option<f64> {
        match self.inner {
            fpt_mod::FptCdf::FluidStep { crossing_time } => Some(crossing_time),
            fpt_mod::FptCdf::Empirical { .. } => None,
        }
    }
}

/// Uniform grid of `points` samples on `[0, t_end]`.
#[pyfunction]
fn uniform_grid(t_end: f64, points: usize) -> PyResult<Vec<f64>> {
    fluid::uniform_grid(t_end, points).map_err(to_py)
}

/// Integrates the fluid `dy/dt = m(y)` from `y0`, sampled at `times`.
#[pyfunction]
#[pyo3(signature = (field, y0, times, rtol=1e-6, atol=1e-9))]
fn integrate(field: &PyDriftField, y0: Vec<f64>, times: Vec<f64>, rtol: f64, atol: f64) -> PyResult<PyTrajectory> {
    let opts = OdeOptions {
        rtol,
        atol,
        ..Default::default()
    };
    fluid::integrate_gfa(&field.inner, &y0, &times, &opts)
        .map(|inner| PyTrajectory { inner })
        .map_err(to_py)
}

/// Exact mean of the embedding under the forward equation from state `s0`.
#[pyfunction]
fn projected_mean(chain: &PyCtmc, s0: usize, embedding: &PyEmbedding, times: Vec<f64>) -> PyResult<PyTrajectory> {
    let n = chain.inner.n_states();
    if s0 >= n {
        return Err(PyValueError::new_err("initial state out of range"));
    }
    fluid::projected_mean(&chain.inner.generator, &point_mass(n, s0), &embedding.inner, &times)
        .map(|inner| PyTrajectory { inner })
        .map_err(to_py)
}

/// Mean and standard deviation of the projected SSA ensemble on `times`.
#[pyfunction]
fn ssa_summary(
    chain: &PyCtmc,
    s0: usize,
    embedding: &PyEmbedding,
    times: Vec<f64>,
    n_paths: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = ssa::ssa_ensemble_summary(&chain.inner.generator, s0, &embedding.inner, &times, n_paths, seed)
        .map_err(to_py)?;
    Ok((rows(&s.mean), rows(&s.std)))
}

/// Empirical first-passage CDF into the states satisfying `predicate`.
#[pyfunction]
fn ssa_fpt(chain: &PyCtmc, s0: usize, predicate: &str, t_end: f64, n_paths: usize, seed: u64) -> PyResult<PyFptCdf> {
    let mask = chain.target_mask(predicate)?;
    ssa::ssa_fpt(&chain.inner.generator, s0, &mask, t_end, n_paths, seed)
        .map(|inner| PyFptCdf { inner })
        .map_err(to_py)
}

/// Time at which a fluid trajectory enters the Voronoi region of the target states.
#[pyfunction]
fn fluid_fpt(trajectory: &PyTrajectory, embedding: &PyEmbedding, chain: &PyCtmc, predicate: &str) -> PyResult<PyFptCdf> {
    let mask = chain.target_mask(predicate)?;
    let c = VoronoiClassifier::new(embedding.inner.coords().clone(), mask).map_err(to_py)?;
    fpt_mod::fluid_fpt(&trajectory.inner, &c)
        .map(|inner| PyFptCdf { inner })
        .map_err(to_py)
}

/// Runs the staged pipeline from a preset name or TOML text and returns the
/// manifest as JSON.
#[pyfunction]
#[pyo3(signature = (config, out, stage="all", fast=false, seed=None))]
fn run_experiment(config: &str, out: PathBuf, stage: &str, fast: bool, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = if config.contains('[') {
        ExperimentConfig::from_toml(config)
    } else {
        ExperimentConfig::preset(config)
    }
    .map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut p = Pipeline::new(cfg, &RunOptions { out, fast }).map_err(to_py)?;
    if stage == "all" {
        p.run_all()
    } else {
        p.run_through(Stage::parse(stage).map_err(to_py)?)
    }
    .map_err(to_py)?;
    gfa_core::io::read_text(&p.out_dir().join("manifest.json")).map_err(to_py)
}

/// Names of the built-in experiment presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    gfa_core::config::PRESETS.iter().map(|(n, _)| *n).collect()
}

#[pymodule]
fn gfa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCtmc>()?;
    m.add_class::<PyEmbedding>()?;
    m.add_class::<PyDriftField>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyFptCdf>()?;
    m.add_function(wrap_pyfunction!(uniform_grid, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(projected_mean, m)?)?;
    m.add_function(wrap_pyfunction!(ssa_summary, m)?)?;
    m.add_function(wrap_pyfunction!(ssa_fpt, m)?)?;
    m.add_function(wrap_pyfunction!(fluid_fpt, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    Ok(())
}
