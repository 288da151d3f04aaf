//! `fakepcd`: simulate data, train, attribute, explain and run ablations.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

mod ablate;
mod attribute;
mod explain;
mod manifest;
mod run;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fakepcd_core::Error;

#[derive(Parser, Debug, Clone)]
#[command(name = "fakepcd", version, about = "Attribute 3D point clouds to the process that produced them")]
pub struct Cli {
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a simulated dataset.
    Simulate,
    /// Train the close-world or open-world stage.
    Train(train::TrainArgs),
    /// Attribute clouds with an open-stage model.
    Attribute(attribute::AttributeArgs),
    /// Critical points, fingerprints and Chamfer matches.
    Explain(explain::ExplainArgs),
    /// Ablation experiments.
    Ablate(ablate::AblateArgs),
    /// Re-run the command recorded in a run manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageArg {
    Closed,
    Open,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = std::env::var("FAKEPCD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot cap worker threads: {e}");
        }
    }
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run::dispatch(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Numeric(_) => 3,
                _ => 2,
            };
        }
    }
    1
}
