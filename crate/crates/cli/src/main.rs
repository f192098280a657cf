//! `evolab` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or input error,
//! 3 numeric failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(origin: &str, line: Option<usize>, message: &str) -> CliError {
        match line {
            Some(l) => CliError::Config(format!("{origin}:{l}: {message}")),
            None => CliError::Config(format!("{origin}: {message}")),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<evolab::Error> for CliError {
    fn from(e: evolab::Error) -> Self {
        use evolab::Error as E;
        match e {
            E::Config(_) | E::Format(_) | E::Json(_) => CliError::Config(e.to_string()),
            E::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Config(e.to_string()),
            E::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        evolab::Error::from(e).into()
    }
}

#[derive(Parser)]
#[command(name = "evolab", version, about = "Evolutionary grid-world experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RenderFormat {
    Text,
    Ppm,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ProtocolArgs {
    /// Run configuration (world section and architectures).
    #[arg(long)]
    pub config: PathBuf,
    /// Network checkpoint; lineage k uses checkpoint k modulo the count.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Use uniformly random policies instead of checkpoints.
    #[arg(long, conflicts_with = "checkpoints")]
    pub random: bool,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub length: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: a subdirectory of the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run episodes on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy pool with kin-weighted value decomposition.
    TrainEvdn {
        config: PathBuf,
        /// Continue from the run directory's latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Override the configured tick budget.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Evolve one search distribution per founder family with CMA-ES.
    TrainCmaes {
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        generations: Option<u64>,
    },
    /// Minimise the sphere function as a CMA-ES self-test.
    CmaesSelftest {
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 1e-8)]
        target: f64,
        #[arg(long, default_value_t = 200)]
        generations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Test-protocol evaluation of a pool.
    Eval {
        #[command(flatten)]
        args: ProtocolArgs,
        /// Record frames of the first N episodes for `render`.
        #[arg(long, default_value_t = 0)]
        record: usize,
    },
    /// Two policies against two policies in a four-founder world.
    Headtohead {
        #[command(flatten)]
        args: ProtocolArgs,
        /// CHECKPOINT=GENOME, exactly four; CHECKPOINT may be `random`.
        /// The first two pairs form side A.
        #[arg(long = "pair", required = true)]
        pairs: Vec<String>,
    },
    /// Paired runs with and without intra-family attacks in one family.
    Ablate {
        #[command(flatten)]
        args: ProtocolArgs,
        #[arg(long, default_value_t = 1)]
        family: u32,
    },
    /// Allele entropy with the kinship observation intact and zeroed.
    Drift {
        #[command(flatten)]
        args: ProtocolArgs,
    },
    /// Render recorded episode frames.
    Render {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long, value_enum, default_value_t = RenderFormat::Text)]
        format: RenderFormat,
        /// Pixels per tile for pixmaps.
        #[arg(long, default_value_t = 8)]
        cell: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainEvdn { config, resume, ticks } => commands::train_evdn(&config, resume, ticks),
        Command::TrainCmaes { config, resume, generations } => commands::train_cmaes(&config, resume, generations),
        Command::CmaesSelftest { dim, target, generations, seed } => commands::cmaes_selftest(dim, target, generations, seed),
        Command::Eval { args, record } => commands::eval(&args, record),
        Command::Headtohead { args, pairs } => commands::head_to_head(&args, &pairs),
        Command::Ablate { args, family } => commands::ablate(&args, family),
        Command::Drift { args } => commands::drift(&args),
        Command::Render { run_dir, episode, format, cell, out } => commands::render(&run_dir, episode, format, cell, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
