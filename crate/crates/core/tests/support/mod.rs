//! Property suites shared by the `invariants` and `acceptance` targets. Each
//! suite drives a proptest runner with a fixed case count and reports the
//! first failing case as a string.

#![allow(dead_code)]

use gfa_core::ctmc::models::sirs;
use gfa_core::ctmc::{perturb_rates, remove_transitions, uniformise, GeneratorMatrix};
use gfa_core::fluid::classical_fluid_sirs;
use gfa_core::fluid::ode::OdeOptions;
use gfa_core::fluid::{uniform_grid, Trajectory, TrajectoryKind};
use gfa_core::fpt::{fluid_fpt, VoronoiClassifier};
use gfa_core::gp::{gp_fit, GpHyperparameters, GpOptions};
use gfa_core::ssa::ssa_ensemble;
use nalgebra::{DMatrix, Rotation2};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

/// Row sums of a generator are zero to this multiple of its largest exit rate.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Stochastic-row tolerance of the uniformised similarity matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Mean-field population drift on `[0, 100]` at the default ODE tolerances.
pub const ODE_CONSERVATION_TOL: f64 = 1e-9;
/// Interpolation error of a noise-free GP at its training points, relative to
/// the largest target.
pub const INTERPOLATION_TOL: f64 = 1e-6;
/// Jitter used for the noise-free interpolation check.
pub const INTERPOLATION_JITTER: f64 = 1e-10;
/// Linearity and permutation tolerance of the posterior mean, relative to the
/// largest target.
pub const GP_ALGEBRA_TOL: f64 = 1e-10;
/// Crossing-time agreement under a rigid motion of the embedding.
pub const RIGID_MOTION_TOL: f64 = 1e-9;

pub type SuiteResult = std::result::Result<(), String>;

/// A named property suite.
pub struct Suite {
    pub name: &'static str,
    pub run: fn() -> SuiteResult,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "generator rows sum to zero", run: generator_row_sums },
    Suite { name: "uniformisation has unit diagonal and stochastic rows", run: uniformisation_rows },
    Suite { name: "SIRS paths conserve the population", run: sirs_paths_conserve_population },
    Suite { name: "SIRS mean field conserves the population", run: sirs_ode_conserves_population },
    Suite { name: "noise-free GP interpolates", run: gp_interpolates },
    Suite { name: "GP mean is linear in the targets", run: gp_linear_in_targets },
    Suite { name: "GP mean ignores the order of the data", run: gp_permutation_invariant },
    Suite { name: "Voronoi crossing is invariant under rigid motions", run: voronoi_rigid_motion },
    Suite { name: "Voronoi crossing is monotone in the target", run: voronoi_target_monotone },
    Suite { name: "simulation is bit-reproducible per seed", run: ssa_seed_reproducible },
    Suite { name: "perturbations are reproducible and keep structure", run: perturbation_structure },
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(r: std::result::Result<(), proptest::test_runner::TestError<T>>) -> SuiteResult {
    r.map_err(|e| e.to_string())
}

fn fail<E: std::fmt::Display>(e: E) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

/// Random rate lists on up to 12 states; self-loops are dropped by the generator.
fn rate_lists() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..=12).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0.01f64..10.0), 1..40)))
}

fn generator(n: usize, rates: &[(usize, usize, f64)]) -> GeneratorMatrix {
    GeneratorMatrix::from_rates(n, rates.iter().copied().filter(|(i, j, _)| i != j)).expect("valid rates")
}

/// A connected random generator: a bidirectional path plus random extra edges.
fn connected_generator(n: usize, extra: &[(usize, usize, f64)]) -> GeneratorMatrix {
    let chain = (0..n - 1).flat_map(|i| [(i, i + 1, 1.0), (i + 1, i, 0.5)]);
    let all: Vec<_> = chain.chain(extra.iter().copied()).collect();
    generator(n, &all)
}

pub fn generator_row_sums() -> SuiteResult {
    report(runner(256).run(&rate_lists(), |(n, rates)| {
        let q = generator(n, &rates);
        let dense = q.to_dense();
        let scale = q.max_exit_rate().max(1.0);
        for i in 0..n {
            let s: f64 = dense.row(i).iter().sum();
            prop_assert!(s.abs() <= ROW_SUM_TOL * scale, "row {i} sums to {s}");
            for j in 0..n {
                if i != j {
                    prop_assert!(dense[(i, j)] >= 0.0);
                }
            }
        }
        Ok(())
    }))
}

pub fn uniformisation_rows() -> SuiteResult {
    report(runner(256).run(&(rate_lists(), 0.01f64..0.99), |((n, rates), frac)| {
        let q = generator(n, &rates);
        let eps = if q.max_exit_rate() > 0.0 { frac / q.max_exit_rate() } else { frac };
        let w = uniformise(&q, eps).map_err(fail)?;
        for i in 0..n {
            prop_assert_eq!(w[(i, i)], 1.0);
            prop_assert!(w.row(i).iter().all(|v| *v >= 0.0));
            // Undoing the diagonal scaling recovers the stochastic matrix I + eps Q.
            let p_ii = 1.0 + eps * q.diag()[i];
            let s: f64 = w.row(i).iter().sum::<f64>() * p_ii;
            prop_assert!((s - 1.0).abs() <= STOCHASTIC_TOL, "row {i}: {s}");
        }
        Ok(())
    }))
}

pub fn sirs_paths_conserve_population() -> SuiteResult {
    let n = 20;
    let chain = sirs(n).map_err(|e| e.to_string())?;
    let q = chain.generator.clone();
    let n_states = chain.n_states();
    report(runner(16).run(&(0..n_states, any::<u64>()), |(s0, seed)| {
        for path in ssa_ensemble(&q, s0, 50.0, 8, seed).map_err(fail)? {
            for &s in &path.states {
                let total: u32 = chain.labels[s].coords.iter().sum();
                prop_assert_eq!(total, n);
            }
        }
        Ok(())
    }))
}

pub fn sirs_ode_conserves_population() -> SuiteResult {
    let simplex = (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter_map("non-degenerate", |(a, b, c)| {
        let s = a + b + c;
        (s > 1e-3).then(|| [a / s, b / s, c / s])
    });
    let rates = (0.01f64..2.0, 0.01f64..1.0, 0.001f64..0.5);
    report(runner(64).run(&(simplex, rates), |(x0, (ki, kr, ks))| {
        let times = uniform_grid(100.0, 101).map_err(fail)?;
        let x0 = [x0[0], x0[1], 1.0 - x0[0] - x0[1]];
        let traj = classical_fluid_sirs(ki, kr, ks, x0, &times, &OdeOptions::default()).map_err(fail)?;
        for i in 0..traj.len() {
            let total: f64 = traj.point(i).iter().sum();
            prop_assert!((total - 1.0).abs() <= ODE_CONSERVATION_TOL, "t = {}: {total}", times[i]);
        }
        Ok(())
    }))
}

/// Random 1-3 dimensional inputs with well-separated points and smooth targets.
fn gp_problem() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, GpHyperparameters)> {
    (1usize..=3, 3usize..=15, 1usize..=2, any::<u64>()).prop_map(|(k, n, d, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        let r = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let h = GpHyperparameters {
            lengthscales: (0..k).map(|_| rng.random_range(0.2..1.0)).collect(),
            amplitudes: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
            noise_sds: (0..d).map(|_| rng.random_range(0.01..0.3)).collect(),
            jitter: gfa_core::gp::DEFAULT_JITTER,
        };
        (y, r, h)
    })
}

fn fixed() -> GpOptions {
    GpOptions {
        optimize: false,
        ..GpOptions::default()
    }
}

fn scale(r: &DMatrix<f64>) -> f64 {
    r.amax().max(1.0)
}

pub fn gp_interpolates() -> SuiteResult {
    report(runner(64).run(&gp_problem(), |(y, r, mut h)| {
        // Keep the Gram matrix well conditioned: distinct points, short lengthscales.
        let min_gap = (0..y.nrows())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (y.row(i) - y.row(j)).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 0.05);
        h.lengthscales.iter_mut().for_each(|l| *l = 0.1);
        h.noise_sds.iter_mut().for_each(|s| *s = 0.0);
        h.jitter = INTERPOLATION_JITTER;
        let opts = GpOptions {
            jitter: INTERPOLATION_JITTER,
            ..fixed()
        };
        let f = gp_fit(&y, &r, &h, &opts).map_err(fail)?;
        for i in 0..y.nrows() {
            let m = f.mean(&y.row(i).iter().copied().collect::<Vec<_>>());
            for (c, v) in m.iter().enumerate() {
                prop_assert!((v - r[(i, c)]).abs() <= INTERPOLATION_TOL * scale(&r), "point {i}: {v} vs {}", r[(i, c)]);
            }
        }
        Ok(())
    }))
}

pub fn gp_linear_in_targets() -> SuiteResult {
    report(runner(64).run(&(gp_problem(), -3.0f64..3.0, any::<u64>()), |((y, r1, h), c, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let r2 = DMatrix::from_fn(r1.nrows(), r1.ncols(), |_, _| rng.random_range(-2.0..2.0));
        let combo = &r1 + &r2 * c;
        let f1 = gp_fit(&y, &r1, &h, &fixed()).map_err(fail)?;
        let f2 = gp_fit(&y, &r2, &h, &fixed()).map_err(fail)?;
        let fc = gp_fit(&y, &combo, &h, &fixed()).map_err(fail)?;
        let tol = GP_ALGEBRA_TOL * scale(&combo).max(scale(&r1) + c.abs() * scale(&r2));
        for _ in 0..5 {
            let x: Vec<f64> = (0..y.ncols()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (m1, m2, mc) = (f1.mean(&x), f2.mean(&x), fc.mean(&x));
            for d in 0..mc.len() {
                prop_assert!((mc[d] - (m1[d] + c * m2[d])).abs() <= tol);
            }
        }
        Ok(())
    }))
}

pub fn gp_permutation_invariant() -> SuiteResult {
    let problem = gp_problem().prop_flat_map(|(y, r, h)| {
        let n = y.nrows();
        (Just((y, r, h)), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    });
    report(runner(64).run(&problem, |((y, r, h), perm)| {
        let yp = DMatrix::from_fn(y.nrows(), y.ncols(), |i, c| y[(perm[i], c)]);
        let rp = DMatrix::from_fn(r.nrows(), r.ncols(), |i, c| r[(perm[i], c)]);
        let f = gp_fit(&y, &r, &h, &fixed()).map_err(fail)?;
        let fp = gp_fit(&yp, &rp, &h, &fixed()).map_err(fail)?;
        for i in 0..y.nrows() {
            let x: Vec<f64> = y.row(i).iter().map(|v| v * 0.9 + 0.05).collect();
            for (a, b) in f.mean(&x).iter().zip(fp.mean(&x)) {
                prop_assert!((a - b).abs() <= GP_ALGEBRA_TOL * scale(&r), "{a} vs {b}");
            }
        }
        Ok(())
    }))
}

/// Random planar seeds, a random target mask and a random polyline that
/// ends in a target cell.
fn voronoi_problem() -> impl Strategy<Value = (DMatrix<f64>, Vec<bool>, Vec<[f64; 2]>)> {
    (3usize..=25, any::<u64>()).prop_map(|(n, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let seeds = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut target: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        target[0] = true;
        target[n - 1] = false;
        let mut path = vec![[seeds[(n - 1, 0)], seeds[(n - 1, 1)]]];
        for _ in 0..10 {
            path.push([rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)]);
        }
        path.push([seeds[(0, 0)], seeds[(0, 1)]]);
        (seeds, target, path)
    })
}

fn polyline(points: &[[f64; 2]]) -> Trajectory {
    let times: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
    let m = DMatrix::from_fn(points.len(), 2, |i, c| points[i][c]);
    Trajectory::new(times, m, TrajectoryKind::GfaFluid).expect("valid polyline")
}

fn crossing(seeds: DMatrix<f64>, target: Vec<bool>, path: &[[f64; 2]]) -> std::result::Result<f64, TestCaseError> {
    let c = VoronoiClassifier::new(seeds, target).map_err(fail)?;
    let cdf = fluid_fpt(&polyline(path), &c).map_err(fail)?;
    Ok(cdf.median())
}

pub fn voronoi_rigid_motion() -> SuiteResult {
    let motion = (0.0f64..std::f64::consts::TAU, -5.0f64..5.0, -5.0f64..5.0);
    report(runner(256).run(&(voronoi_problem(), motion), |((seeds, target, path), (angle, dx, dy))| {
        let rot = Rotation2::new(angle);
        let mv = |x: f64, y: f64| {
            let p = rot * nalgebra::Point2::new(x, y);
            [p.x + dx, p.y + dy]
        };
        let seeds_m = DMatrix::from_fn(seeds.nrows(), 2, |i, c| mv(seeds[(i, 0)], seeds[(i, 1)])[c]);
        let path_m: Vec<[f64; 2]> = path.iter().map(|p| mv(p[0], p[1])).collect();
        let t0 = crossing(seeds, target.clone(), &path)?;
        let t1 = crossing(seeds_m, target, &path_m)?;
        prop_assert!(t0.is_finite());
        prop_assert!((t0 - t1).abs() <= RIGID_MOTION_TOL, "{t0} vs {t1}");
        Ok(())
    }))
}

pub fn voronoi_target_monotone() -> SuiteResult {
    report(runner(256).run(&(voronoi_problem(), any::<u64>()), |((seeds, target, path), seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = target.len();
        // Grow the target, keeping at least one non-target seed.
        let mut grown: Vec<bool> = target.iter().map(|&t| t || rng.random_bool(0.3)).collect();
        grown[n - 1] = false;
        let t_small = crossing(seeds.clone(), target, &path)?;
        let t_big = crossing(seeds, grown, &path)?;
        prop_assert!(t_big <= t_small, "grown target crossed later: {t_big} > {t_small}");
        Ok(())
    }))
}

pub fn ssa_seed_reproducible() -> SuiteResult {
    report(runner(16).run(&(rate_lists(), any::<u64>()), |((n, rates), seed)| {
        let q = connected_generator(n, &rates);
        let a = ssa_ensemble(&q, 0, 5.0, 16, seed).map_err(fail)?;
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(fail)?;
        let b = single.install(|| ssa_ensemble(&q, 0, 5.0, 16, seed)).map_err(fail)?;
        prop_assert!(a == b, "ensembles differ between thread pools");
        for (pa, pb) in a.iter().zip(&b) {
            let bits = |p: &gfa_core::ssa::SsaPath| p.jump_times.iter().map(|t| t.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(pa), bits(pb));
        }
        Ok(())
    }))
}

pub fn perturbation_structure() -> SuiteResult {
    report(runner(128).run(&(rate_lists(), 0.0f64..1.0, 0.0f64..0.5, any::<u64>()), |((n, rates), sigma, p, seed)| {
        let q = connected_generator(n, &rates);
        let noisy = perturb_rates(&q, sigma, seed).map_err(fail)?;
        prop_assert_eq!(&noisy, &perturb_rates(&q, sigma, seed).map_err(fail)?);
        prop_assert_eq!(noisy.n_transitions(), q.n_transitions());
        for (i, j, r) in q.entries() {
            prop_assert!(noisy.rate(i, j) >= r);
        }
        let thinned = match remove_transitions(&q, p, seed) {
            Ok(t) => t,
            Err(gfa_core::GfaError::RemovalExhausted { .. }) => return Ok(()),
            Err(e) => return Err(fail(e)),
        };
        prop_assert_eq!(&thinned, &remove_transitions(&q, p, seed).map_err(fail)?);
        for (i, j, r) in thinned.entries() {
            prop_assert_eq!(r, q.rate(i, j));
        }
        for i in 0..n {
            prop_assert!(q.exit_rate(i) == 0.0 || thinned.exit_rate(i) > 0.0);
        }
        let undirected = |g: &GeneratorMatrix| {
            gfa_core::ctmc::perturb::undirected_components(n, g.entries().map(|(i, j, _)| (i, j)))
        };
        prop_assert_eq!(undirected(&thinned), undirected(&q));
        Ok(())
    }))
}
