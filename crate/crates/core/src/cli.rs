//! Command-line front end: config loading, the four commands and their
//! CSV outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::apparatus::Apparatus;
use crate::config::RunConfig;
use crate::detector_model::derive_seed;
use crate::estimator::{bootstrap_precision, default_bracket, EstimateError, FrameSet, PrecisionReport};
use crate::fisher::{fisher_sweep, total_fisher};
use crate::io::{fmt_f64, read_frame_pool, render_csv, write_atomic, write_frame_pool};
use crate::spectral_meter::SchemeConfig;

pub const FISHER_COLUMNS: [&str; 8] =
    ["scheme", "n", "B", "epsilon", "m", "extinction_ratio", "fi_total", "crb_precision"];
pub const PRECISION_COLUMNS: [&str; 12] = [
    "scheme",
    "n",
    "B",
    "epsilon",
    "m",
    "extinction_ratio",
    "batch_size",
    "repeats",
    "failed_repeats",
    "delta_B",
    "crb_precision",
    "flagged",
];

/// Stream index reserved for a pool's bootstrap draws.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

#[derive(Debug, Parser)]
#[command(name = "weakmeter", version, about = "Fisher information and MLE precision for saturating spectral weak measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher information and Cramér–Rao bound over the photon-number grid.
    FisherSweep(Common),
    /// Simulate one frame pool per (scheme, n).
    Simulate(Common),
    /// Bootstrap precision from one saved frame pool.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Bootstrap precision over the photon-number grid.
    PrecisionSweep {
        #[command(flatten)]
        common: Common,
        /// Read pools written by `simulate` from this directory instead of
        /// simulating them.
        #[arg(long)]
        pools: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.threads > 0 {
            // a second call in one process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(self.threads).build_global();
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::FisherSweep(c) => {
            let cfg = c.load()?;
            let (csv, failures) = fisher_sweep_csv(&cfg)?;
            let path = cfg.output.dir.join(&cfg.output.fisher_csv);
            write_atomic(&path, csv.as_bytes()).map_err(run_err)?;
            if failures > 0 {
                return Err(CliError::Run(format!("{failures} sweep points failed; see {}", path.display())));
            }
            Ok(())
        }
        Command::Simulate(c) => {
            let cfg = c.load()?;
            simulate_pools(&cfg, &cfg.output.dir.join(&cfg.output.pools_dir)).map(|_| ())
        }
        Command::Estimate { common, pool } => {
            let cfg = common.load()?;
            let csv = estimate_csv(&cfg, &pool)?;
            write_atomic(&cfg.output.dir.join(&cfg.output.estimate_csv), csv.as_bytes()).map_err(run_err)
        }
        Command::PrecisionSweep { common, pools } => {
            let cfg = common.load()?;
            let csv = precision_sweep_csv(&cfg, pools.as_deref())?;
            write_atomic(&cfg.output.dir.join(&cfg.output.precision_csv), csv.as_bytes()).map_err(run_err)
        }
    }
}

fn apparatus(cfg: &RunConfig) -> Result<Apparatus, CliError> {
    Apparatus::new(cfg.physical, cfg.detector.clone()).map_err(|e| CliError::Config(e.to_string()))
}

fn scheme_fields(s: &SchemeConfig, n: f64, b: f64) -> Vec<String> {
    vec![
        s.scheme.tag().to_string(),
        fmt_f64(n),
        fmt_f64(b),
        fmt_f64(s.epsilon),
        s.bias_order.to_string(),
        fmt_f64(s.extinction_ratio),
    ]
}

/// Fisher sweep CSV and the number of failed points, which are written as
/// `nan` rows.
pub fn fisher_sweep_csv(cfg: &RunConfig) -> Result<(String, usize), CliError> {
    let app = apparatus(cfg)?;
    let b = cfg.sweep.b_true;
    let points = fisher_sweep(&app, &cfg.schemes, &cfg.sweep.n_grid.values(), b, cfg.sweep.step());
    let mut failures = 0;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut row = scheme_fields(&p.scheme, p.n, b);
            match &p.result {
                Ok(r) => {
                    let r = r.clone().with_frames(cfg.sweep.frames_for_crb);
                    row.extend([fmt_f64(r.fi_total), fmt_f64(r.crb_precision)]);
                }
                Err(e) => {
                    log::error!("{} at n = {}: {e}", p.scheme.scheme, p.n);
                    failures += 1;
                    row.extend([fmt_f64(f64::NAN), fmt_f64(f64::NAN)]);
                }
            }
            row
        })
        .collect();
    Ok((render_csv(&cfg.hash(), &FISHER_COLUMNS, &rows), failures))
}

pub fn pool_file_name(scheme_index: usize, scheme: &SchemeConfig, n_index: usize) -> String {
    format!("pool_{scheme_index:02}_{}_{n_index:02}.csv", scheme.scheme.tag())
}

/// Seed of the pool for grid point `(scheme_index, n_index)`.
pub fn pool_seed(cfg: &RunConfig, scheme_index: usize, n_index: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, scheme_index as u64), n_index as u64)
}

fn grid_points(cfg: &RunConfig) -> Vec<(usize, SchemeConfig, usize, f64)> {
    let grid = cfg.sweep.n_grid.values();
    cfg.schemes
        .iter()
        .enumerate()
        .flat_map(|(s, scheme)| grid.iter().enumerate().map(move |(i, &n)| (s, *scheme, i, n)).collect::<Vec<_>>())
        .collect()
}

/// Simulate and write every pool; returns the pool paths in grid order.
pub fn simulate_pools(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let app = apparatus(cfg)?;
    let hash = cfg.hash();
    let mut paths = Vec::new();
    for (s, scheme, i, n) in grid_points(cfg) {
        let set = FrameSet::simulate(&app, &scheme, n, cfg.sweep.b_true, cfg.estimation.pool_size, pool_seed(cfg, s, i))
            .map_err(run_err)?;
        let path = dir.join(pool_file_name(s, &scheme, i));
        write_frame_pool(&path, &set, &hash).map_err(run_err)?;
        paths.push(path);
    }
    Ok(paths)
}

fn bracket(cfg: &RunConfig, b_true: f64) -> (f64, f64) {
    default_bracket(b_true, cfg.estimation.bracket_factor, cfg.estimation.zero_bracket_scale)
}

/// Bootstrap one pool. Returns the report and whether it is flagged for
/// too many failed repeats.
pub fn precision_for_pool(app: &Apparatus, cfg: &RunConfig, pool: &FrameSet) -> Result<(PrecisionReport, bool), CliError> {
    let prov = pool.provenance();
    let seed = derive_seed(prov.seed, BOOTSTRAP_STREAM);
    let e = &cfg.estimation;
    match bootstrap_precision(app, pool, e.batch_size, e.repeats, bracket(cfg, prov.b_true), seed) {
        Ok(r) => Ok((r, false)),
        Err(EstimateError::TooManyFailures { report, .. }) => Ok((*report, true)),
        Err(err) => Err(run_err(err)),
    }
}

fn precision_row(app: &Apparatus, cfg: &RunConfig, pool: &FrameSet) -> Result<Vec<String>, CliError> {
    let prov = pool.provenance();
    let (report, flagged) = precision_for_pool(app, cfg, pool)?;
    let crb = total_fisher(app, &prov.scheme, prov.n, prov.b_true, cfg.sweep.step())
        .map_err(run_err)?
        .with_frames(report.batch_size)
        .crb_precision;
    let mut row = scheme_fields(&prov.scheme, prov.n, prov.b_true);
    row.extend([
        report.batch_size.to_string(),
        report.repeats.to_string(),
        report.failed_repeats.to_string(),
        fmt_f64(report.delta_b),
        fmt_f64(crb),
        flagged.to_string(),
    ]);
    Ok(row)
}

fn checked_pool(app: &Apparatus, path: &Path) -> Result<FrameSet, CliError> {
    let pool = read_frame_pool(path).map_err(run_err)?;
    if pool.provenance().detector_hash != app.det().fingerprint() {
        return Err(CliError::Run(format!("{} was simulated with a different detector model", path.display())));
    }
    Ok(pool)
}

pub fn precision_sweep_csv(cfg: &RunConfig, pools: Option<&Path>) -> Result<String, CliError> {
    let app = apparatus(cfg)?;
    let mut rows = Vec::new();
    for (s, scheme, i, n) in grid_points(cfg) {
        let pool = match pools {
            Some(dir) => checked_pool(&app, &dir.join(pool_file_name(s, &scheme, i)))?,
            None => FrameSet::simulate(&app, &scheme, n, cfg.sweep.b_true, cfg.estimation.pool_size, pool_seed(cfg, s, i))
                .map_err(run_err)?,
        };
        rows.push(precision_row(&app, cfg, &pool)?);
    }
    Ok(render_csv(&cfg.hash(), &PRECISION_COLUMNS, &rows))
}

pub fn estimate_csv(cfg: &RunConfig, pool: &Path) -> Result<String, CliError> {
    let app = apparatus(cfg)?;
    let set = checked_pool(&app, pool)?;
    let row = precision_row(&app, cfg, &set)?;
    Ok(render_csv(&cfg.hash(), &PRECISION_COLUMNS, &[row]))
}
