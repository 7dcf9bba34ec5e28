//! First-passage times: empirical and fluid-step CDFs, nearest-embedded-state
//! (Voronoi) classification of continuous trajectories, and CDF comparison.

pub mod predicate;

use std::path::Path;

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GfaError, Result};
use crate::fluid::Trajectory;
use crate::io::Table;

pub use predicate::{target_mask, Predicate};

/// Above this many seeds, nearest-seed queries go through the kd-tree.
pub const BRUTE_FORCE_SEEDS: usize = 10_000;
/// Resolution of the bisection used for predicate crossings, in seconds.
pub const CROSSING_TOL: f64 = 1e-6;

/// Cumulative distribution of a first-passage time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FptCdf {
    /// Sorted passage times of the paths that reached the target, plus the
    /// number of paths censored at `horizon`.
    Empirical {
        times: Vec<f64>,
        censored: usize,
        horizon: f64,
    },
    /// Point mass at the fluid crossing time (`+∞` when never crossed).
    FluidStep { crossing_time: f64 },
}

impl FptCdf {
    pub fn empirical(mut times: Vec<f64>, censored: usize, horizon: f64) -> Result<Self> {
        if times.iter().any(|t| !(*t >= 0.0) || *t > horizon) {
            return Err(GfaError::invalid("passage times must lie in [0, horizon]"));
        }
        if times.is_empty() && censored == 0 {
            return Err(GfaError::invalid("empirical CDF needs at least one sample"));
        }
        times.sort_by(f64::total_cmp);
        Ok(FptCdf::Empirical {
            times,
            censored,
            horizon,
        })
    }

    pub fn fluid_step(crossing_time: f64) -> Self {
        FptCdf::FluidStep { crossing_time }
    }

    /// `P(τ ≤ t)`. Censored samples count in the denominator only.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            FptCdf::Empirical { times, censored, .. } => {
                let hits = times.partition_point(|s| *s <= t);
                hits as f64 / (times.len() + censored) as f64
            }
            FptCdf::FluidStep { crossing_time } => {
                if t >= *crossing_time {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest `t` with `CDF(t) ≥ p`, or `+∞` if the CDF never reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            FptCdf::Empirical { times, censored, .. } => {
                let total = times.len() + censored;
                let need = (p * total as f64).ceil().max(1.0) as usize;
                if need > times.len() {
                    f64::INFINITY
                } else {
                    times[need - 1]
                }
            }
            FptCdf::FluidStep { crossing_time } => *crossing_time,
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn n_samples(&self) -> usize {
        match self {
            FptCdf::Empirical { times, censored, .. } => times.len() + censored,
            FptCdf::FluidStep { .. } => 1,
        }
    }

    /// Fraction of empirical samples censored at the horizon (0 for a fluid step).
    pub fn censored_fraction(&self) -> f64 {
        match self {
            FptCdf::Empirical { times, censored, .. } => *censored as f64 / (times.len() + censored) as f64,
            FptCdf::FluidStep { .. } => 0.0,
        }
    }

    /// CSV export: passage times (one per row) with the censor count and
    /// horizon, or the crossing time of a fluid step, as comment tags.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["passage_time".into()]);
        match self {
            FptCdf::Empirical {
                times,
                censored,
                horizon,
            } => {
                t.comments.push("kind=empirical".into());
                t.comments.push(format!("censored={censored}"));
                t.comments.push(format!("horizon={horizon}"));
                for s in times {
                    t.push(vec![*s]);
                }
            }
            FptCdf::FluidStep { crossing_time } => {
                t.comments.push("kind=fluid_step".into());
                t.comments.push(format!("crossing_time={crossing_time}"));
            }
        }
        t
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let num = |key: &str| -> Result<f64> {
            table
                .tag(key)
                .ok_or_else(|| GfaError::Parse(format!("FPT table lacks `{key}`")))?
                .parse::<f64>()
                .map_err(|e| GfaError::Parse(format!("bad `{key}`: {e}")))
        };
        match table.tag("kind") {
            Some("empirical") => Self::empirical(
                table.rows.iter().map(|r| r[0]).collect(),
                num("censored")? as usize,
                num("horizon")?,
            ),
            Some("fluid_step") => Ok(Self::fluid_step(num("crossing_time")?)),
            other => Err(GfaError::Parse(format!("unknown FPT kind {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }
}

/// Partition of the embedding space into the Voronoi cells of the embedded
/// states, labelled target or non-target.
#[derive(Debug, Clone)]
pub struct VoronoiClassifier {
    seeds: DMatrix<f64>,
    target: Vec<bool>,
    rows: Vec<Vec<f64>>,
    target_tree: KdTree<f64, usize, Vec<f64>>,
    other_tree: KdTree<f64, usize, Vec<f64>>,
}

impl VoronoiClassifier {
    pub fn new(seeds: DMatrix<f64>, target: Vec<bool>) -> Result<Self> {
        if seeds.nrows() != target.len() {
            return Err(GfaError::DimensionMismatch(format!(
                "{} seeds but {} mask entries",
                seeds.nrows(),
                target.len()
            )));
        }
        if !target.iter().any(|&b| b) || target.iter().all(|&b| b) {
            return Err(GfaError::invalid("classifier needs at least one target and one non-target seed"));
        }
        if seeds.ncols() == 0 || seeds.iter().any(|v| !v.is_finite()) {
            return Err(GfaError::invalid("seeds must be finite with at least one coordinate"));
        }
        let k = seeds.ncols();
        let rows: Vec<Vec<f64>> = (0..seeds.nrows()).map(|i| seeds.row(i).iter().copied().collect()).collect();
        let mut target_tree = KdTree::new(k);
        let mut other_tree = KdTree::new(k);
        for (i, row) in rows.iter().enumerate() {
            let tree = if target[i] { &mut target_tree } else { &mut other_tree };
            tree.add(row.clone(), i).map_err(|e| GfaError::invalid(format!("kd-tree: {e}")))?;
        }
        Ok(VoronoiClassifier {
            seeds,
            target,
            rows,
            target_tree,
            other_tree,
        })
    }

    pub fn seeds(&self) -> &DMatrix<f64> {
        &self.seeds
    }

    pub fn target(&self) -> &[bool] {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.seeds.ncols()
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(GfaError::DimensionMismatch(format!(
                "point has {} coordinates, seeds {}",
                p.len(),
                self.dim()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GfaError::invalid("query point must be finite"));
        }
        Ok(())
    }

    /// Squared distances to the nearest target and non-target seeds by
    /// exhaustive search.
    pub fn nearest_brute(&self, p: &[f64]) -> (f64, f64) {
        let mut best = (f64::INFINITY, f64::INFINITY);
        for (row, &is_target) in self.rows.iter().zip(&self.target) {
            let d = squared_euclidean(p, row);
            let slot = if is_target { &mut best.0 } else { &mut best.1 };
            if d < *slot {
                *slot = d;
            }
        }
        best
    }

    /// Same as [`Self::nearest_brute`] through the kd-trees. Both paths use the
    /// same distance arithmetic and return identical values.
    pub fn nearest_indexed(&self, p: &[f64]) -> (f64, f64) {
        let q = |tree: &KdTree<f64, usize, Vec<f64>>| {
            tree.nearest(p, 1, &squared_euclidean)
                .expect("dimension checked")
                .first()
                .map_or(f64::INFINITY, |(d, _)| *d)
        };
        (q(&self.target_tree), q(&self.other_tree))
    }

    /// `true` iff `p` is strictly closer to some target seed than to every
    /// non-target seed; ties count as outside.
    pub fn classify_point(&self, p: &[f64]) -> Result<bool> {
        self.check(p)?;
        let (dt, dn) = if self.rows.len() <= BRUTE_FORCE_SEEDS {
            self.nearest_brute(p)
        } else {
            self.nearest_indexed(p)
        };
        Ok(dt < dn)
    }

    /// Infimum of `s ∈ [0, 1]` with `a + s (b − a)` inside the target region,
    /// or `None` if the segment never enters it.
    ///
    /// Along the segment every squared seed distance shares the `s²` term, so
    /// the comparison reduces to lower envelopes of lines and the entry point
    /// is exact up to rounding.
    pub fn segment_entry(&self, a: &[f64], b: &[f64]) -> Result<Option<f64>> {
        self.check(a)?;
        self.check(b)?;
        let dir: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        // |a + s·dir − y|² − s²|dir|² = |a − y|² + 2 s dir·(a − y)
        let lines: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|y| {
                let c = squared_euclidean(a, y);
                let slope = 2.0 * dir.iter().zip(a.iter().zip(y)).map(|(d, (x, s))| d * (x - s)).sum::<f64>();
                (c, slope)
            })
            .collect();
        let mut best: Option<f64> = None;
        for (j, &(cj, sj)) in lines.iter().enumerate() {
            if !self.target[j] {
                continue;
            }
            // Feasible set {s ∈ [0,1] : line_j(s) < line_n(s) ∀ non-target n}.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let (mut lo_open, mut hi_open) = (false, false);
            let mut empty = false;
            for (n, &(cn, sn)) in lines.iter().enumerate() {
                if self.target[n] {
                    continue;
                }
                // (cj − cn) + (sj − sn) s < 0
                let alpha = cj - cn;
                let beta = sj - sn;
                if beta == 0.0 {
                    if alpha >= 0.0 {
                        empty = true;
                        break;
                    }
                } else if beta > 0.0 {
                    let r = -alpha / beta;
                    if r <= hi {
                        hi = r;
                        hi_open = true;
                    }
                } else {
                    let r = -alpha / beta;
                    if r >= lo {
                        lo = r;
                        lo_open = true;
                    }
                }
                if lo > hi || (lo == hi && (lo_open || hi_open)) {
                    empty = true;
                    break;
                }
            }
            if !empty {
                best = Some(best.map_or(lo, |b: f64| b.min(lo)));
            }
        }
        Ok(best)
    }
}

/// Fluid first-passage time: the first sample inside the target region is
/// bracketed with the previous sample and the entry point on the connecting
/// segment is located exactly. Returns a step at `+∞` when never entered.
pub fn fluid_fpt(traj: &Trajectory, c: &VoronoiClassifier) -> Result<FptCdf> {
    let times = traj.times();
    let mut prev = traj.point(0);
    if c.classify_point(&prev)? {
        return Ok(FptCdf::fluid_step(times[0]));
    }
    for i in 1..traj.len() {
        let cur = traj.point(i);
        if c.classify_point(&cur)? {
            let s = c.segment_entry(&prev, &cur)?.unwrap_or(1.0).clamp(0.0, 1.0);
            let t = times[i - 1] + s * (times[i] - times[i - 1]);
            return Ok(FptCdf::fluid_step(t));
        }
        prev = cur;
    }
    Ok(FptCdf::fluid_step(f64::INFINITY))
}

/// First time a sampled trajectory satisfies `inside`, located by linear
/// interpolation between bracketing samples and bisection to [`CROSSING_TOL`].
pub fn predicate_crossing(traj: &Trajectory, mut inside: impl FnMut(&[f64]) -> bool) -> FptCdf {
    let times = traj.times();
    let mut prev = traj.point(0);
    if inside(&prev) {
        return FptCdf::fluid_step(times[0]);
    }
    for i in 1..traj.len() {
        let cur = traj.point(i);
        if inside(&cur) {
            let (t0, t1) = (times[i - 1], times[i]);
            let at = |t: f64| -> Vec<f64> {
                let s = (t - t0) / (t1 - t0);
                prev.iter().zip(&cur).map(|(a, b)| a + s * (b - a)).collect()
            };
            let (mut lo, mut hi) = (t0, t1);
            while hi - lo > CROSSING_TOL {
                let mid = 0.5 * (lo + hi);
                if inside(&at(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return FptCdf::fluid_step(hi);
        }
        prev = cur;
    }
    FptCdf::fluid_step(f64::INFINITY)
}

/// Summary of how two FPT CDFs differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfComparison {
    /// `max_t |a(t) − b(t)|` over the comparison grid.
    pub sup_distance: f64,
    /// `b(t*)` when `a` is a fluid step at finite `t*`.
    pub quantile_at_step: Option<f64>,
    /// `median(a) / median(b)` when both medians are finite.
    pub median_ratio: Option<f64>,
}

pub fn compare_cdfs(a: &FptCdf, b: &FptCdf, t_grid: &[f64]) -> Result<CdfComparison> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(GfaError::invalid("comparison grid must be non-empty and finite"));
    }
    let sup_distance = t_grid.iter().map(|&t| (a.eval(t) - b.eval(t)).abs()).fold(0.0, f64::max);
    let quantile_at_step = match a {
        FptCdf::FluidStep { crossing_time } if crossing_time.is_finite() => Some(b.eval(*crossing_time)),
        _ => None,
    };
    let (ma, mb) = (a.median(), b.median());
    let median_ratio = (ma.is_finite() && mb.is_finite() && mb > 0.0).then(|| ma / mb);
    Ok(CdfComparison {
        sup_distance,
        quantile_at_step,
        median_ratio,
    })
}

/// CDF values of several curves on a shared grid: header `t, <names…>`.
pub fn cdf_samples_table(names: &[&str], cdfs: &[&FptCdf], t_grid: &[f64]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    let mut t = Table::new(header);
    for &time in t_grid {
        let mut row = vec![time];
        row.extend(cdfs.iter().map(|c| c.eval(time)));
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::TrajectoryKind;

    fn line_classifier() -> VoronoiClassifier {
        VoronoiClassifier::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec![false, true]).unwrap()
    }

    #[test]
    fn midpoint_rule_in_one_dimension() {
        let c = line_classifier();
        assert!(!c.classify_point(&[0.4]).unwrap());
        assert!(c.classify_point(&[0.6]).unwrap());
        assert!(c.classify_point(&[1.0]).unwrap());
        // exact tie stays outside
        assert!(!c.classify_point(&[0.5]).unwrap());
    }

    #[test]
    fn classifier_needs_both_labels() {
        let seeds = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(VoronoiClassifier::new(seeds.clone(), vec![true, true]).is_err());
        assert!(VoronoiClassifier::new(seeds, vec![false, false]).is_err());
    }

    #[test]
    fn indexed_search_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let seeds = DMatrix::from_fn(500, 3, |_, _| rng.random::<f64>());
        let mask: Vec<bool> = (0..500).map(|i| i % 7 == 0).collect();
        let c = VoronoiClassifier::new(seeds, mask).unwrap();
        for _ in 0..200 {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
            assert_eq!(c.nearest_brute(&p), c.nearest_indexed(&p));
        }
    }

    #[test]
    fn duplicate_seeds_are_indexed() {
        let seeds = DMatrix::from_fn(40, 2, |i, _| (i / 20) as f64);
        let mask: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let c = VoronoiClassifier::new(seeds, mask).unwrap();
        assert_eq!(c.nearest_indexed(&[0.9, 0.9]), c.nearest_brute(&[0.9, 0.9]));
    }

    fn traj(points: &[f64], dt: f64) -> Trajectory {
        let times = (0..points.len()).map(|i| i as f64 * dt).collect();
        Trajectory::new(
            times,
            DMatrix::from_column_slice(points.len(), 1, points),
            TrajectoryKind::GfaFluid,
        )
        .unwrap()
    }

    #[test]
    fn fluid_crossing_is_exact_on_a_line() {
        let c = line_classifier();
        // y(t) = 0.1 t crosses the midpoint 0.5 at t = 5.
        let pts: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let FptCdf::FluidStep { crossing_time } = fluid_fpt(&traj(&pts, 1.0), &c).unwrap() else {
            panic!()
        };
        assert!((crossing_time - 5.0).abs() < 1e-12);
    }

    #[test]
    fn starting_inside_and_never_entering() {
        let c = line_classifier();
        assert_eq!(fluid_fpt(&traj(&[0.9, 0.95], 1.0), &c).unwrap(), FptCdf::fluid_step(0.0));
        let never = fluid_fpt(&traj(&[0.0, 0.2, 0.4], 1.0), &c).unwrap();
        assert_eq!(never.eval(1e9), 0.0);
    }

    #[test]
    fn predicate_bisection_converges() {
        let pts: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let step = predicate_crossing(&traj(&pts, 1.0), |p| p[0] >= 0.55);
        let FptCdf::FluidStep { crossing_time } = step else { panic!() };
        assert!((crossing_time - 5.5).abs() <= CROSSING_TOL);
    }

    #[test]
    fn empirical_cdf_counts_censored_in_denominator() {
        let cdf = FptCdf::empirical(vec![3.0, 1.0, 2.0], 1, 10.0).unwrap();
        assert_eq!(cdf.eval(0.5), 0.0);
        assert_eq!(cdf.eval(2.0), 0.5);
        assert_eq!(cdf.eval(100.0), 0.75);
        assert_eq!(cdf.median(), 2.0);
        assert_eq!(cdf.quantile(0.9), f64::INFINITY);
        assert_eq!(cdf.censored_fraction(), 0.25);
    }

    #[test]
    fn comparisons() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let a = FptCdf::empirical(vec![1.0, 2.0, 3.0], 0, 10.0).unwrap();
        assert_eq!(compare_cdfs(&a, &a, &grid).unwrap().sup_distance, 0.0);
        let never = FptCdf::fluid_step(f64::INFINITY);
        let r = compare_cdfs(&never, &a, &grid).unwrap();
        assert_eq!(r.sup_distance, 1.0);
        assert_eq!(r.quantile_at_step, None);
        let step = FptCdf::fluid_step(2.5);
        let r = compare_cdfs(&step, &a, &grid).unwrap();
        assert!((r.quantile_at_step.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.median_ratio, Some(1.25));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for cdf in [
            FptCdf::empirical(vec![0.25, 1.5], 3, 20.0).unwrap(),
            FptCdf::fluid_step(4.125),
            FptCdf::fluid_step(f64::INFINITY),
        ] {
            let p = dir.path().join("fpt.csv");
            cdf.save(&p).unwrap();
            assert_eq!(FptCdf::load(&p).unwrap(), cdf);
        }
    }
}
