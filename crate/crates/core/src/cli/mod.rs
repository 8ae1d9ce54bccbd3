//! Command-line front end. Every command reads the same flat configuration
//! (defaults, then `--config FILE`, then `--set key=value` overrides) and
//! writes a manifest next to its outputs echoing that configuration, the
//! seeds used and the SHA-256 of every file written.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or format
//! error, 4 solver non-convergence, 5 internal error.

mod commands;
mod config;
mod ppm;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{read_dataset, sample_name, StoredDataset, DATASET_MANIFEST, EVAL_SUMMARY, METRICS_FILE};
pub use config::{RunConfig, KEYS};
pub use ppm::{colormap, heatmap};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "pefno", version, about = "Divergence-free stress prediction with Fourier neural operators")]
pub struct Cli {
    /// Configuration file of `key=value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw random periodic polycrystals into `micro.dir`.
    GenMicro,
    /// Solve for equilibrated stress and write the dataset into `data.dir`.
    GenData,
    /// Train a model on `data.dir`; writes metrics and a checkpoint into `out.dir`.
    Train,
    /// Evaluate `eval.checkpoint` on one dataset sample; writes into `eval.dir`.
    Eval {
        /// Sample index in `data.dir`.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Render every channel of the given field files as PPM heatmaps in `plots.dir`.
    ExportPlots {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Check a microstructure, dataset or checkpoint directory.
    Verify { dir: PathBuf },
    /// Print the effective configuration.
    ShowConfig,
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::GenMicro => commands::gen_micro(&cfg),
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval { sample } => commands::eval_cmd(&cfg, *sample),
        Command::ExportPlots { files } => commands::export_plots(&cfg, files),
        Command::Verify { dir } => commands::verify(dir),
        Command::ShowConfig => {
            print!("{}", cfg.resolved.render());
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 5,
    }
}
