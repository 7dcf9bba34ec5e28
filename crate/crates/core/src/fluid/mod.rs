//! Deterministic fluid trajectories: the GP-drift ODE, the exact projected
//! mean of the forward equation, the spectral fluid, and classical
//! concentration-space mean-field ODEs.

pub mod classical;
pub mod cke;
pub mod ode;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GfaError, Result};
use crate::gp::DriftField;
use crate::io::Table;

pub use classical::{classical_fluid, classical_fluid_sirs};
pub use cke::{cke_distributions, projected_mean, spectral_basis, spectral_fluid};
pub use ode::{dopri5, dopri5_fixed, uniform_grid, OdeOptions, OdeSolution, OdeStats};

/// Default number of output samples on `[0, T]`.
pub const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    GfaFluid,
    SpectralFluid,
    ClassicalFluid,
    ProjectedMean,
}

impl TrajectoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::GfaFluid => "gfa_fluid",
            TrajectoryKind::SpectralFluid => "spectral_fluid",
            TrajectoryKind::ClassicalFluid => "classical_fluid",
            TrajectoryKind::ProjectedMean => "projected_mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gfa_fluid" => TrajectoryKind::GfaFluid,
            "spectral_fluid" => TrajectoryKind::SpectralFluid,
            "classical_fluid" => TrajectoryKind::ClassicalFluid,
            "projected_mean" => TrajectoryKind::ProjectedMean,
            other => return Err(GfaError::Parse(format!("unknown trajectory kind `{other}`"))),
        })
    }
}

/// Coordinates sampled on a time grid; row `i` of `points` is the state at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    points: DMatrix<f64>,
    kind: TrajectoryKind,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, points: DMatrix<f64>, kind: TrajectoryKind) -> Result<Self> {
        ode::validate_grid(&times)?;
        if times[0] != 0.0 {
            return Err(GfaError::invalid("trajectory times must start at 0"));
        }
        if points.nrows() != times.len() {
            return Err(GfaError::DimensionMismatch(format!(
                "{} times but {} points",
                times.len(),
                points.nrows()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(GfaError::invalid("trajectory coordinates must be finite"));
        }
        Ok(Trajectory { times, points, kind })
    }

    pub(crate) fn from_rows(times: Vec<f64>, rows: &[Vec<f64>], kind: TrajectoryKind) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let points = DMatrix::from_fn(rows.len(), k, |i, c| rows[i][c]);
        Self::new(times, points, kind)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Table `t, y_1..y_K` tagged with the trajectory kind.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|c| format!("y_{c}")));
        let mut t = Table::new(header);
        t.comments.push(format!("kind={}", self.kind.as_str()));
        for (i, time) in self.times.iter().enumerate() {
            let mut row = vec![*time];
            row.extend(self.points.row(i).iter());
            t.push(row);
        }
        t
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let kind = TrajectoryKind::parse(
            table
                .tag("kind")
                .ok_or_else(|| GfaError::Parse("trajectory table has no kind tag".into()))?,
        )?;
        if table.header.first().map(String::as_str) != Some("t") {
            return Err(GfaError::Parse("trajectory table must start with a `t` column".into()));
        }
        let times = table.rows.iter().map(|r| r[0]).collect();
        let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
        Self::from_rows(times, &rows, kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }
}

/// Root-mean-square Euclidean distance between two trajectories on the same grid.
pub fn trajectory_rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(GfaError::DimensionMismatch(format!(
            "trajectory shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(((a - b).norm_squared() / a.nrows() as f64).sqrt())
}

/// Integrates `dy/dt = m(y)` for the GP posterior mean `m` from `y0` and
/// samples the solution on `times` (starting at 0).
pub fn integrate_gfa(field: &DriftField, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Trajectory> {
    if y0.len() != field.input_dim() || field.input_dim() != field.output_dim() {
        return Err(GfaError::DimensionMismatch(format!(
            "field maps {} → {}, initial state has {} coordinates",
            field.input_dim(),
            field.output_dim(),
            y0.len()
        )));
    }
    let sol = dopri5(|_, y, dy| field.mean_into(y, dy), y0, times, opts)?;
    Trajectory::from_rows(sol.times, &sol.states, TrajectoryKind::GfaFluid)
}
