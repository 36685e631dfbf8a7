//! `tps`: data generation, training, evaluation, sweeps and rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or malformed file,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tps::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "tps", version, about = "Temporal pseudo supervision at desk scale")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides `dataset`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides `out_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides `checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.dataset = self.dataset.or(c.dataset);
        c.out_dir = self.out.or(c.out_dir);
        c.checkpoint = self.checkpoint.or(c.checkpoint);
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain benchmark into `dataset`.
    GenData(Common),
    /// Train and write checkpoint, loss log and config echo into `out_dir`.
    Train(Common),
    /// Score a checkpoint on the evaluation split.
    Eval(Common),
    /// Run one hyper-parameter grid, one report per cell plus a summary.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// eta, tau or lambda_t.
        #[arg(long)]
        grid: String,
    },
    /// Write colour-mapped prediction, label and pseudo-label images.
    Render(Common),
    /// Tabulate every report under a run directory, best mIoU first.
    Summarize {
        run_dir: PathBuf,
        /// Print CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ClipTooShort(_) | Error::InvalidManifest(_) | Error::Shape(_) => 2,
        Error::Io { .. }
        | Error::Format(_)
        | Error::Truncated { .. }
        | Error::Checksum { .. }
        | Error::Json(_)
        | Error::InvalidLabel { .. } => 3,
        Error::NonFinite(_) | Error::NoEvaluatedPixels => 4,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData(c) => commands::gen_data(&c.resolve()?),
        Command::Train(c) => commands::train(&c.resolve()?),
        Command::Eval(c) => commands::eval(&c.resolve()?),
        Command::Ablate { common, grid } => commands::ablate(&common.resolve()?, &grid),
        Command::Render(c) => commands::render(&c.resolve()?),
        Command::Summarize { run_dir, csv } => commands::summarize(&run_dir, csv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
