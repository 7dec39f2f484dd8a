//! Command-line interface: simulation, estimation, Monte Carlo studies, and
//! scaling benchmarks for the spatio-temporal autoregressive regression
//! model.

mod bench;
mod config;
mod fit;
mod mc;
mod sim;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use starq_core::alloc_track::TrackingAllocator;
use starq_core::error::Result;

use config::RawConfig;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator::new();

#[derive(Parser)]
#[command(
    name = "starq",
    version,
    about = "Scalable quasi-maximum-likelihood estimation for spatio-temporal \
             autoregressive regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file (requires `schema_version = 1`)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides the config key
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides STARQ_THREADS and the config key
    /// (0 = physical cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Log filter (error|warn|info|debug|trace)
    #[arg(long, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weights matrix and panel from a grid design
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the model from a weights matrix and a panel file
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Spatial weights in Matrix Market symmetric coordinate format
        #[arg(long)]
        weights: PathBuf,
        /// Panel in long CSV format (`cell_id,time,y,x1,...,xk`)
        #[arg(long)]
        panel: PathBuf,
        /// Confidence level for the coefficient intervals
        #[arg(long)]
        level: Option<f64>,
    },
    /// Run a Monte Carlo study of the estimator
    McStudy {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Time likelihood evaluations and full fits across problem sizes
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn init_runtime(common: &CommonArgs, cfg: &RawConfig) -> Result<(u64, usize)> {
    let level = common
        .log_level
        .parse::<log::LevelFilter>()
        .unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::from_default_env()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let seed = match common.seed {
        Some(s) => s,
        None => cfg.get_u64("seed", 20200510)?,
    };
    let threads = config::resolve_threads(common.threads, cfg)?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok((seed, threads))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = RawConfig::load(common.config.as_deref())?;
            let (seed, threads) = init_runtime(&common, &cfg)?;
            let out = config::ensure_out_dir(&common.out)?;
            sim::run(&cfg, &out, seed, threads)
        }
        Command::Fit {
            common,
            weights,
            panel,
            level,
        } => {
            let cfg = RawConfig::load(common.config.as_deref())?;
            let (seed, threads) = init_runtime(&common, &cfg)?;
            let out = config::ensure_out_dir(&common.out)?;
            let level = match level {
                Some(l) => l,
                None => cfg.get_f64("inference.level", 0.95)?,
            };
            fit::run(&cfg, &out, &weights, &panel, level, seed, threads)
        }
        Command::McStudy { common } => {
            let cfg = RawConfig::load(common.config.as_deref())?;
            let (seed, threads) = init_runtime(&common, &cfg)?;
            let out = config::ensure_out_dir(&common.out)?;
            mc::run(&cfg, &out, seed, threads)
        }
        Command::Bench { common } => {
            let cfg = RawConfig::load(common.config.as_deref())?;
            let (seed, threads) = init_runtime(&common, &cfg)?;
            let out = config::ensure_out_dir(&common.out)?;
            bench::run(&cfg, &out, seed, threads)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_model_error() {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}
