//! Library side of the `anchormech` command: config loading and the
//! subcommand implementations, so tests can drive them without a process.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{audit, compare, compare_rows, lower_bound, synthesize, CompareRow, Overrides};
pub use config::{Config, LoadedConfig, Timing};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "anchormech", version, about = "Synthesize, audit and compare metric-DP location mechanisms")]
pub struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, global = true, env = "ANCHORMECH_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Comma-separated ε list, replacing the config's.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Method tag; repeatable, replaces the config's list.
    #[arg(long = "method", global = true)]
    pub methods: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build mechanisms and write them with their tables and sweep curves.
    Synthesize,
    /// Audit a mechanism file at one ε.
    Audit {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Expected loss and violation ratio of every method at every ε.
    Compare {
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Universal lower bound on expected loss.
    LowerBound,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let mut loaded = LoadedConfig::load(cli.config.as_deref())?;
    let overrides = Overrides { seed: cli.seed, eps: cli.eps.clone(), methods: cli.methods.clone() };
    overrides.apply(&mut loaded.config)?;
    match &cli.command {
        Command::Synthesize => {
            synthesize(&loaded, &cli.out_dir)?;
        }
        Command::Audit { mechanism, samples, bins } => {
            if let Some(s) = samples {
                loaded.config.audit.samples = *s;
            }
            if let Some(b) = bins {
                loaded.config.audit.bins = *b;
            }
            loaded.config.validate()?;
            audit(&loaded, mechanism, &cli.out_dir)?;
        }
        Command::Compare { replicates } => {
            if let Some(r) = replicates {
                loaded.config.compare.replicates = *r;
            }
            loaded.config.validate()?;
            compare(&loaded, &cli.out_dir)?;
        }
        Command::LowerBound => {
            lower_bound(&loaded, &cli.out_dir)?;
        }
    }
    Ok(())
}
