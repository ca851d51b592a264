//! `mcgan` command-line front end: dataset generation, training, width
//! sweeps, evaluation and manifold generation for the rotated-line and
//! chain-simulation experiments.

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mcgan_core::{Error, Result};

use commands::{EvaluateArgs, GenerateArgs, Split};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mcgan", version, about = "Conditional-GAN manifold transfer experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: `out` from the config, else `.`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rotated-line train/validation/test CSVs and split manifest.
    ToyGen,
    /// Chain simulation, PCA compression and temperature splits.
    SimGen,
    /// Train one generator/discriminator pair; writes checkpoint and KL history.
    Train {
        /// Directory with the split CSVs (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Hidden-width × restart sweep; writes the leaderboard and best checkpoint.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use the full 10..800 × 10 grid unless sweep keys are set.
        #[arg(long)]
        paper_scale: bool,
    },
    /// KL report and real/generated point files per code.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split to read from the data directory.
        #[arg(long, default_value = "test")]
        split: Split,
        /// Explicit dataset CSV; overrides --data/--split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated physical codes (default: every code present).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        codes: Vec<f64>,
        /// Score the real points against themselves (sanity check).
        #[arg(long)]
        replay: bool,
    },
    /// Dense sweep of codes through the generator.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Lowest physical code (default: lowest training code).
        #[arg(long, allow_negative_numbers = true)]
        code_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        code_max: Option<f64>,
        #[arg(long, default_value_t = 100)]
        n_codes: usize,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
    },
}

/// Summary lines for stdout and warnings for stderr.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn load_config(common: &CommonArgs, paper_scale: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if paper_scale {
        let explicit = match &common.config {
            Some(path) => explicit_keys(path)?,
            None => Vec::new(),
        };
        cfg.use_paper_sweep(&explicit);
    }
    Ok(cfg)
}

fn explicit_keys(path: &Path) -> Result<Vec<String>> {
    Ok(artifacts::read_text(path)?
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
        .collect())
}

pub fn run(cli: &Cli) -> Result<Report> {
    let paper = matches!(cli.command, Command::Sweep { paper_scale: true, .. });
    let cfg = load_config(&cli.common, paper)?;
    let out = cli
        .common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let data_dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.clone());
    let lines = match &cli.command {
        Command::ToyGen => commands::toy_gen(&cfg, &out)?,
        Command::SimGen => commands::sim_gen(&cfg, &out)?,
        Command::Train { data } => commands::train(&cfg, &data_dir(data), &out)?,
        Command::Sweep { data, .. } => commands::sweep(&cfg, &data_dir(data), &out)?,
        Command::Evaluate {
            checkpoint,
            data,
            split,
            dataset,
            codes,
            replay,
        } => {
            let dataset = dataset
                .clone()
                .unwrap_or_else(|| data_dir(data).join(commands::split_file(cfg.experiment, *split)));
            let args = EvaluateArgs {
                checkpoint: checkpoint.clone(),
                dataset,
                codes: codes.clone(),
                replay: *replay,
            };
            commands::evaluate(&cfg, &args, &out)?
        }
        Command::Generate {
            checkpoint,
            data,
            code_min,
            code_max,
            n_codes,
            n_samples,
        } => {
            let args = GenerateArgs {
                checkpoint: checkpoint.clone(),
                data: data_dir(data),
                code_min: *code_min,
                code_max: *code_max,
                n_codes: *n_codes,
                n_samples: *n_samples,
            };
            let (lines, warnings) = commands::generate(&cfg, &args, &out)?;
            return Ok(Report { lines, warnings });
        }
    };
    Ok(Report {
        lines,
        warnings: Vec::new(),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Report>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(first_line(&e.to_string())))?;
    run(&cli)
}

pub fn first_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_start_matches("error: ")
        .to_string()
}

/// The one-line failure message printed on stderr.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", err.category())
}
