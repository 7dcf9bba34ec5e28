//! `gfa`: run geometric-fluid experiments stage by stage.
//!
//! Exit codes: 0 on success, 2 when the configuration (or command line) is
//! invalid, 3 when a numerical stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gfa_core::config::{ExperimentConfig, PRESETS};
use gfa_core::io::read_json;
use gfa_core::pipeline::{CompareReport, FptReport, Pipeline, RunOptions, Stage};
use gfa_core::GfaError;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gfa", version, about = "Geometric fluid approximation of continuous-time Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Built-in preset to use instead of a config file.
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,
    /// Output directory (default: the config's `out`, else `runs/<name>`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// With `all`, stop after this stage; otherwise must match the subcommand.
    #[arg(long, global = true, value_name = "NAME")]
    stage: Option<String>,
    /// CI-scale ensembles.
    #[arg(long, global = true)]
    fast: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build the chain and write its generator and state labels.
    Build,
    /// Embed the state space.
    Embed,
    /// Fit the Gaussian-process drift field.
    Drift,
    /// Integrate the geometric fluid.
    Gfa,
    /// Simulate the SSA ensemble and project it onto the embedding.
    Ssa,
    /// Compare the fluid with the ensemble mean and the exact projected mean.
    Compare,
    /// First-passage-time analysis for the configured target.
    Fpt,
    /// Every stage in order.
    All,
    /// List the built-in presets.
    Presets,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Build => Stage::Build,
            Command::Embed => Stage::Embed,
            Command::Drift => Stage::Drift,
            Command::Gfa => Stage::Gfa,
            Command::Ssa => Stage::Ssa,
            Command::Compare => Stage::Compare,
            Command::Fpt => Stage::Fpt,
            Command::All | Command::Presets => return None,
        })
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, GfaError> {
    let mut cfg = match (&c.config, &c.model) {
        (Some(path), _) => ExperimentConfig::load(path).map_err(|e| match e {
            GfaError::Io { .. } => GfaError::Config(e.to_string()),
            other => other,
        })?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(GfaError::Config("pass --config PATH or --model NAME".into())),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.name.as_deref().unwrap_or("experiment")))
}

fn run(cli: &Cli) -> Result<(), GfaError> {
    if cli.command == Command::Presets {
        for (name, _) in PRESETS {
            println!("{name}");
        }
        return Ok(());
    }
    let c = &cli.common;
    let requested = c.stage.as_deref().map(Stage::parse).transpose()?;
    let cfg = load_config(c)?;
    let opts = RunOptions {
        out: out_dir(c, &cfg),
        fast: c.fast,
    };
    let mut p = Pipeline::new(cfg, &opts)?;
    let last = match (cli.command.stage(), requested) {
        (Some(s), Some(r)) if s != r => {
            return Err(GfaError::Config(format!(
                "--stage {r} conflicts with the `{s}` subcommand"
            )))
        }
        (Some(s), _) => {
            p.run(s)?;
            s
        }
        (None, Some(r)) => {
            p.run_through(r)?;
            r
        }
        (None, None) => {
            p.run_all()?;
            *p.default_stages().last().expect("at least one stage")
        }
    };
    summarize(&p, last);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "never".to_string(), |x| format!("{x:.4}"))
}

fn summarize(p: &Pipeline, last: Stage) {
    let dir = p.out_dir();
    for (name, secs) in p.timings() {
        if p.manifest().stages.contains_key(name) {
            println!("{name:<8} done  {secs:8.2} s");
        }
    }
    if last >= Stage::Compare {
        if let Ok(r) = read_json::<CompareReport>(&dir.join("compare_report.json")) {
            println!(
                "compare: RMSE vs ensemble mean {:.4e} ({:.2}% of bbox diagonal, {} paths)",
                r.rmse_gfa_ssa,
                100.0 * r.rmse_gfa_ssa_relative,
                r.n_paths
            );
            if let (Some(a), Some(b)) = (r.rmse_gfa_exact, r.rmse_gfa_exact_relative) {
                println!("compare: RMSE vs exact projected mean {a:.4e} ({:.2}%)", 100.0 * b);
            }
        }
    }
    if last == Stage::Fpt {
        if let Ok(r) = read_json::<FptReport>(&dir.join("fpt_report.json")) {
            println!(
                "fpt: target `{}` fluid crossing {} classical {} ; SSA median {} [q10 {}, q90 {}], censored {:.3}",
                r.target,
                fmt_opt(r.gfa_crossing),
                fmt_opt(r.classical_crossing),
                fmt_opt(r.ssa_median),
                fmt_opt(r.ssa_q10),
                fmt_opt(r.ssa_q90),
                r.ssa_censored_fraction
            );
        }
    }
    println!("artifacts in {}", dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_CONFIG } else { EXIT_NUMERIC })
        }
    }
}
