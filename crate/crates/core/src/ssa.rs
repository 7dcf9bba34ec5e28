//! Exact stochastic simulation (direct-method Gillespie) of a generator,
//! ensemble statistics in an embedding, and empirical first-passage times.
//!
//! Every path owns a ChaCha8 stream: the root seed selects the key and the
//! path index selects the stream, so ensembles are bit-reproducible no matter
//! how rayon schedules them.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctmc::GeneratorMatrix;
use crate::embed::Embedding;
use crate::error::{GfaError, Result};
use crate::fpt::FptCdf;
use crate::io::Table;

/// Default ensemble size.
pub const DEFAULT_PATHS: usize = 1000;
/// Ensemble size in fast (CI) mode.
pub const FAST_PATHS: usize = 200;

/// A sample path: `states[0]` is occupied on `[0, jump_times[0])`, and
/// `states[k+1]` from `jump_times[k]` on. The path is observed up to `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaPath {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub t_end: f64,
    pub seed: u64,
    pub stream: u64,
}

impl SsaPath {
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.jump_times.partition_point(|s| *s <= t)]
    }
}

/// Per-row cumulative rates for the direct method.
struct JumpTable<'a> {
    q: &'a GeneratorMatrix,
    exit: Vec<f64>,
}

impl<'a> JumpTable<'a> {
    fn new(q: &'a GeneratorMatrix) -> Self {
        let exit = (0..q.n_states()).map(|i| q.offdiag().row(i).1.iter().sum()).collect();
        JumpTable { q, exit }
    }

    /// Holding time and next state from `s`, or `None` when `s` is absorbing.
    fn step(&self, s: usize, rng: &mut ChaCha8Rng) -> Option<(f64, usize)> {
        let rate = self.exit[s];
        if rate <= 0.0 {
            return None;
        }
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let hold = -(1.0 - u1).ln() / rate;
        let (cols, vals) = self.q.offdiag().row(s);
        let target = u2 * rate;
        let mut acc = 0.0;
        for (&j, &r) in cols.iter().zip(vals) {
            acc += r;
            if target < acc {
                return Some((hold, j));
            }
        }
        Some((hold, *cols.last().expect("positive exit rate has an entry")))
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_start(q: &GeneratorMatrix, s0: usize, t_end: f64) -> Result<()> {
    if s0 >= q.n_states() {
        return Err(GfaError::invalid(format!("initial state {s0} out of range for {} states", q.n_states())));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(GfaError::invalid("t_end must be positive and finite"));
    }
    Ok(())
}

fn simulate_with(table: &JumpTable, s0: usize, t_end: f64, seed: u64, stream: u64) -> SsaPath {
    let mut rng = path_rng(seed, stream);
    let mut path = SsaPath {
        jump_times: Vec::new(),
        states: vec![s0],
        t_end,
        seed,
        stream,
    };
    let mut t = 0.0;
    let mut s = s0;
    while let Some((hold, next)) = table.step(s, &mut rng) {
        t += hold;
        if t > t_end {
            break;
        }
        path.jump_times.push(t);
        path.states.push(next);
        s = next;
    }
    path
}

/// One path from `s0` on `[0, t_end]`, on stream 0 of `seed`.
pub fn ssa_simulate(q: &GeneratorMatrix, s0: usize, t_end: f64, seed: u64) -> Result<SsaPath> {
    check_start(q, s0, t_end)?;
    Ok(simulate_with(&JumpTable::new(q), s0, t_end, seed, 0))
}

/// `n_paths` independent paths; path `i` uses stream `i` of `root_seed`.
pub fn ssa_ensemble(q: &GeneratorMatrix, s0: usize, t_end: f64, n_paths: usize, root_seed: u64) -> Result<Vec<SsaPath>> {
    check_start(q, s0, t_end)?;
    let table = JumpTable::new(q);
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_with(&table, s0, t_end, root_seed, i))
        .collect())
}

/// States occupied at each grid time, per path (`out[path][time]`), without
/// storing full paths. Identical to sampling [`ssa_ensemble`] paths.
pub fn ssa_grid_states(
    q: &GeneratorMatrix,
    s0: usize,
    t_grid: &[f64],
    n_paths: usize,
    root_seed: u64,
) -> Result<Vec<Vec<usize>>> {
    crate::fluid::ode::validate_grid(t_grid)?;
    if t_grid[0] < 0.0 {
        return Err(GfaError::invalid("grid times must be non-negative"));
    }
    let t_end = *t_grid.last().expect("validated non-empty");
    check_start(q, s0, t_end.max(f64::MIN_POSITIVE))?;
    let table = JumpTable::new(q);
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(root_seed, i);
            let mut out = Vec::with_capacity(t_grid.len());
            let (mut s, mut t_next) = (s0, 0.0);
            let mut pending = table.step(s, &mut rng);
            if let Some((h, _)) = pending {
                t_next = h;
            }
            for &tg in t_grid {
                while let Some((_, next)) = pending {
                    if t_next > tg {
                        break;
                    }
                    s = next;
                    pending = table.step(s, &mut rng);
                    if let Some((h, _)) = pending {
                        t_next += h;
                    }
                }
                out.push(s);
            }
            out
        })
        .collect())
}

/// Mean and standard deviation of embedded positions over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// `T × K` ensemble means.
    pub mean: DMatrix<f64>,
    /// `T × K` sample standard deviations (0 for a single path).
    pub std: DMatrix<f64>,
    pub n_paths: usize,
}

impl EnsembleSummary {
    /// Standard error of the mean at grid index `i`, coordinate `c`.
    pub fn std_error(&self, i: usize, c: usize) -> f64 {
        self.std[(i, c)] / (self.n_paths as f64).sqrt()
    }

    /// Table `t, mean_1..mean_K, std_1..std_K, n_paths`.
    pub fn to_table(&self) -> Table {
        let k = self.mean.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|c| format!("mean_{c}")));
        header.extend((1..=k).map(|c| format!("std_{c}")));
        header.push("n_paths".into());
        let mut t = Table::new(header);
        for (i, time) in self.times.iter().enumerate() {
            let mut row = vec![*time];
            row.extend(self.mean.row(i).iter());
            row.extend(self.std.row(i).iter());
            row.push(self.n_paths as f64);
            t.push(row);
        }
        t
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let w = table.header.len();
        if w < 4 || (w - 2) % 2 != 0 || table.rows.is_empty() {
            return Err(GfaError::Parse("malformed ensemble summary table".into()));
        }
        let k = (w - 2) / 2;
        let rows = table.rows.len();
        Ok(EnsembleSummary {
            times: table.rows.iter().map(|r| r[0]).collect(),
            mean: DMatrix::from_fn(rows, k, |i, c| table.rows[i][1 + c]),
            std: DMatrix::from_fn(rows, k, |i, c| table.rows[i][1 + k + c]),
            n_paths: table.rows[0][w - 1] as usize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }
}

/// Summarises grid-sampled states (`states[path][time]`) in the embedding.
/// Sums run in path order, so the result does not depend on scheduling.
pub fn summarize_states(states: &[Vec<usize>], y: &Embedding, t_grid: &[f64]) -> Result<EnsembleSummary> {
    if states.is_empty() {
        return Err(GfaError::invalid("ensemble is empty"));
    }
    let (t, k, n) = (t_grid.len(), y.dim(), states.len());
    let coords = y.coords();
    let mut sum = DMatrix::zeros(t, k);
    for path in states {
        if path.len() != t {
            return Err(GfaError::DimensionMismatch("path sample count differs from grid".into()));
        }
        for (i, &s) in path.iter().enumerate() {
            if s >= y.n_states() {
                return Err(GfaError::DimensionMismatch(format!("state {s} outside embedding")));
            }
            for c in 0..k {
                sum[(i, c)] += coords[(s, c)];
            }
        }
    }
    let mean = sum / n as f64;
    let mut sq = DMatrix::zeros(t, k);
    for path in states {
        for (i, &s) in path.iter().enumerate() {
            for c in 0..k {
                let d = coords[(s, c)] - mean[(i, c)];
                sq[(i, c)] += d * d;
            }
        }
    }
    let std = if n > 1 { (sq / (n - 1) as f64).map(f64::sqrt) } else { DMatrix::zeros(t, k) };
    Ok(EnsembleSummary {
        times: t_grid.to_vec(),
        mean,
        std,
        n_paths: n,
    })
}

/// Projects stored paths onto `y` at the grid times.
pub fn project_ensemble(paths: &[SsaPath], y: &Embedding, t_grid: &[f64]) -> Result<EnsembleSummary> {
    crate::fluid::ode::validate_grid(t_grid)?;
    let t_max = *t_grid.last().expect("validated non-empty");
    if let Some(p) = paths.iter().find(|p| p.t_end < t_max) {
        return Err(GfaError::invalid(format!(
            "grid reaches t = {t_max} but a path stops at {}",
            p.t_end
        )));
    }
    let states: Vec<Vec<usize>> = paths
        .iter()
        .map(|p| t_grid.iter().map(|&t| p.state_at(t)).collect())
        .collect();
    summarize_states(&states, y, t_grid)
}

/// Simulates and projects in one pass without storing full paths.
pub fn ssa_ensemble_summary(
    q: &GeneratorMatrix,
    s0: usize,
    y: &Embedding,
    t_grid: &[f64],
    n_paths: usize,
    root_seed: u64,
) -> Result<EnsembleSummary> {
    let states = ssa_grid_states(q, s0, t_grid, n_paths, root_seed)?;
    summarize_states(&states, y, t_grid)
}

/// Empirical first-passage CDF into `target` from `s0`: target rows are made
/// absorbing and each path records its entry time, or is censored at `t_end`.
pub fn ssa_fpt(
    q: &GeneratorMatrix,
    s0: usize,
    target: &[bool],
    t_end: f64,
    n_paths: usize,
    root_seed: u64,
) -> Result<FptCdf> {
    check_start(q, s0, t_end)?;
    if target.len() != q.n_states() {
        return Err(GfaError::DimensionMismatch(format!(
            "target mask has {} entries for {} states",
            target.len(),
            q.n_states()
        )));
    }
    if !target.iter().any(|&b| b) {
        return Err(GfaError::invalid("target set is empty"));
    }
    if target[s0] {
        return Err(GfaError::invalid("initial state lies in the target set"));
    }
    if n_paths == 0 {
        return Err(GfaError::invalid("need at least one path"));
    }
    let absorbing = q.with_absorbing(target);
    let table = JumpTable::new(&absorbing);
    let hits: Vec<Option<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(root_seed, i);
            let (mut s, mut t) = (s0, 0.0);
            while let Some((hold, next)) = table.step(s, &mut rng) {
                t += hold;
                if t > t_end {
                    return None;
                }
                s = next;
                if target[s] {
                    return Some(t);
                }
            }
            None
        })
        .collect();
    let censored = hits.iter().filter(|h| h.is_none()).count();
    FptCdf::empirical(hits.into_iter().flatten().collect(), censored, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(a: f64, b: f64) -> GeneratorMatrix {
        GeneratorMatrix::from_rates(2, vec![(0, 1, a), (1, 0, b)]).unwrap()
    }

    #[test]
    fn absorbing_start_never_jumps() {
        let q = GeneratorMatrix::from_rates(2, vec![(1, 0, 1.0)]).unwrap();
        let p = ssa_simulate(&q, 0, 5.0, 1).unwrap();
        assert_eq!(p.n_jumps(), 0);
        assert_eq!(p.state_at(4.0), 0);
    }

    #[test]
    fn paths_follow_transitions_and_are_reproducible() {
        let q = GeneratorMatrix::from_rates(3, vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 1.0)]).unwrap();
        let a = ssa_simulate(&q, 0, 50.0, 42).unwrap();
        let b = ssa_simulate(&q, 0, 50.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        for w in a.states.windows(2) {
            assert!(q.rate(w[0], w[1]) > 0.0);
        }
        assert_ne!(a, ssa_simulate(&q, 0, 50.0, 43).unwrap());
    }

    #[test]
    fn mean_jump_count_of_symmetric_pair() {
        // Unit exit rate everywhere: the jump count on [0, 10] is Poisson(10).
        let q = two_state(1.0, 1.0);
        let paths = ssa_ensemble(&q, 0, 10.0, 10_000, 7).unwrap();
        let mean = paths.iter().map(|p| p.n_jumps() as f64).sum::<f64>() / 1e4;
        let se = (10.0f64 / 1e4).sqrt();
        assert!((mean - 10.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn grid_sampling_matches_stored_paths() {
        let q = GeneratorMatrix::from_rates(3, vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 1.0)]).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let paths = ssa_ensemble(&q, 0, 10.0, 64, 9).unwrap();
        let sampled = ssa_grid_states(&q, 0, &grid, 64, 9).unwrap();
        for (p, s) in paths.iter().zip(&sampled) {
            let direct: Vec<usize> = grid.iter().map(|&t| p.state_at(t)).collect();
            assert_eq!(&direct, s);
        }
    }

    #[test]
    fn single_path_summary_is_its_embedding() {
        let q = two_state(1.0, 2.0);
        let y = Embedding::custom(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, -1.0])).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let paths = ssa_ensemble(&q, 0, 2.0, 1, 3).unwrap();
        let summary = project_ensemble(&paths, &y, &grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let s = paths[0].state_at(t);
            assert_eq!(summary.mean[(i, 0)], y.coords()[(s, 0)]);
            assert_eq!(summary.std[(i, 1)], 0.0);
        }
        assert_eq!(summary.mean.row(0), y.coords().row(0));
    }

    #[test]
    fn grid_beyond_horizon_is_rejected() {
        let q = two_state(1.0, 1.0);
        let paths = ssa_ensemble(&q, 0, 1.0, 2, 3).unwrap();
        let y = Embedding::custom(DMatrix::identity(2, 2)).unwrap();
        assert!(project_ensemble(&paths, &y, &[0.0, 2.0]).is_err());
    }

    #[test]
    fn summary_csv_round_trip() {
        let q = two_state(1.0, 1.0);
        let y = Embedding::custom(DMatrix::identity(2, 2)).unwrap();
        let s = ssa_ensemble_summary(&q, 0, &y, &[0.0, 0.5, 1.0], 17, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ssa.csv");
        s.save(&p).unwrap();
        assert_eq!(EnsembleSummary::load(&p).unwrap(), s);
    }

    #[test]
    fn fpt_of_single_exit_is_exponential() {
        let q = GeneratorMatrix::from_rates(2, vec![(0, 1, 2.0)]).unwrap();
        let cdf = ssa_fpt(&q, 0, &[false, true], 10.0, 10_000, 11).unwrap();
        // Dvoretzky–Kiefer–Wolfowitz band at 99%.
        let eps = ((2.0f64 / 0.01).ln() / (2.0 * 1e4)).sqrt();
        for i in 0..=50 {
            let t = i as f64 * 0.05;
            assert!((cdf.eval(t) - (1.0 - (-2.0 * t).exp())).abs() < eps);
        }
    }

    #[test]
    fn unreachable_target_gives_zero_cdf() {
        let q = GeneratorMatrix::from_rates(3, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let cdf = ssa_fpt(&q, 0, &[false, false, true], 5.0, 100, 1).unwrap();
        assert_eq!(cdf.eval(5.0), 0.0);
        assert_eq!(cdf.censored_fraction(), 1.0);
        assert!(ssa_fpt(&q, 2, &[false, false, true], 5.0, 10, 1).is_err());
    }
}
