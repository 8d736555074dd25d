//! `maf`: slice-wise 3D image translation with fused uncertainty maps.
//!
//! Subcommands: `preprocess` (intensity standardization), `fuse` (run an
//! uncertainty estimator), `eval` (cohort MAE/uncertainty correlation) and
//! `phantom` (synthetic test data). Exit codes: 0 success, 1 validation
//! error, 2 I/O error, 3 external-predictor failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{InputPaths, RunConfig};
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "maf", version, about = "Multi-axis fusion uncertainty estimation for slice-wise 3D image translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize exam intensities or train histogram landmarks.
    Preprocess(PreprocessArgs),
    /// Run an uncertainty estimator and write prediction/uncertainty volumes.
    Fuse(Box<FuseArgs>),
    /// Correlate per-case errors with uncertainty over a cohort.
    Eval(EvalArgs),
    /// Generate synthetic volumes and cohorts.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Train landmarks over a cohort instead of standardizing one exam.
    #[arg(long)]
    train_landmarks: bool,
    /// Native T1 input (repeatable in training mode).
    #[arg(long = "t1n")]
    t1n: Vec<PathBuf>,
    /// T2-weighted input (repeatable in training mode).
    #[arg(long = "t2w")]
    t2w: Vec<PathBuf>,
    /// T2-FLAIR input (repeatable in training mode).
    #[arg(long = "t2f")]
    t2f: Vec<PathBuf>,
    /// Contrast-enhanced T1 target (optional; repeatable in training mode).
    #[arg(long = "t1c")]
    t1c: Vec<PathBuf>,
    /// Landmark JSON to apply (default: train from this exam's volumes).
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Output directory (apply mode) or landmark JSON path (training mode).
    #[arg(long)]
    out: PathBuf,
    /// Bound worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FuseArgs {
    /// Declarative run config (.toml or .json); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimator: mc-dropout, ensemble or maf.
    #[arg(long)]
    method: Option<String>,
    /// Sample count M (default 9; for maf the plan size).
    #[arg(long)]
    m: Option<usize>,
    /// Slicing plan for maf: canonical[:angle], principal, a plane name or
    /// a .json plane list.
    #[arg(long)]
    plan: Option<String>,
    /// Slicing plane for mc-dropout/ensemble (default axial).
    #[arg(long)]
    plane: Option<String>,
    /// Predictor spec (repeat for ensemble members): identity, affine:a,b,
    /// blur:sigma, noise:sigma[,seed], external[-stochastic]:cmd...
    #[arg(long = "predictor")]
    predictor: Vec<String>,
    /// Comma-separated mc-dropout seeds (default 1..=m).
    #[arg(long, alias = "seed", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    t1n: Option<PathBuf>,
    #[arg(long)]
    t2w: Option<PathBuf>,
    #[arg(long)]
    t2f: Option<PathBuf>,
    /// Ground-truth target, recorded in the manifest for later evaluation.
    #[arg(long)]
    t1c: Option<PathBuf>,
    /// Segmentation, recorded in the manifest for later evaluation.
    #[arg(long)]
    segmentation: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bound worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Scratch directory for external-predictor exchanges.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Cases manifest (JSON); paths resolve relative to this file.
    #[arg(long)]
    cases: PathBuf,
    /// Output directory for records.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Method label recorded in the report.
    #[arg(long)]
    method: Option<String>,
    /// Bound worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct PhantomArgs {
    #[command(subcommand)]
    which: PhantomCommand,
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Smooth low-frequency phantom volume.
    Volume {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic exams with per-case noise levels for cohort experiments.
    Cohort {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.02)]
        sigma_min: f64,
        #[arg(long, default_value_t = 0.30)]
        sigma_max: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.render());
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess(args) => {
            commands::init_threads(args.threads);
            let inputs = commands::preprocess::PreprocessInputs {
                t1n: args.t1n,
                t2w: args.t2w,
                t2f: args.t2f,
                t1c: args.t1c,
            };
            if args.train_landmarks {
                commands::preprocess::train_landmarks(&inputs, &args.out)
            } else {
                commands::preprocess::apply(&inputs, args.landmarks.as_deref(), &args.out)
            }
        }
        Command::Fuse(args) => {
            let base = match &args.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            let config = base.override_with(
                args.method,
                args.m,
                args.plan,
                args.plane,
                args.predictor,
                args.seeds,
                InputPaths {
                    t1n: args.t1n,
                    t2w: args.t2w,
                    t2f: args.t2f,
                    t1c: args.t1c,
                    segmentation: args.segmentation,
                },
                args.out,
                args.threads,
                args.workdir,
            );
            commands::init_threads(config.threads);
            commands::fuse::run(config)
        }
        Command::Eval(args) => {
            commands::init_threads(args.threads);
            commands::eval::run(&args.cases, &args.out, args.method)
        }
        Command::Phantom(args) => match args.which {
            PhantomCommand::Volume { size, out } => commands::phantom::volume(size, &out),
            PhantomCommand::Cohort {
                cases,
                size,
                out,
                seed,
                sigma_min,
                sigma_max,
            } => commands::phantom::cohort(cases, size, &out, seed, sigma_min, sigma_max),
        },
    }
}
