mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "subnet-forge", version, about = "Multi-task lottery-ticket pruning on synthetic speech-like tasks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured precision (f32 or f64).
    #[arg(long, global = true)]
    pub precision: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes every task's splits in the text dataset format.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task: Option<String>,
    },
    /// Trains the dense multi-task model from its seeded initialization.
    TrainDense {
        #[arg(long)]
        out: PathBuf,
    },
    /// Finds pruning masks by iterative magnitude pruning with rewinding.
    FindMasks {
        /// Checkpoint holding the initialization (from train-dense).
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// task-specific or task-agnostic.
        #[arg(long, default_value = "task-specific")]
        mode: String,
    },
    /// Trains the pruned subnetworks from the rewind point stored with the masks.
    TrainSubnets {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// multi-task or single-task.
        #[arg(long, default_value = "multi-task")]
        mode: String,
    },
    /// Continues training one task on its extra data shard.
    Continual {
        /// Checkpoint holding the model to continue from.
        #[arg(long)]
        init: PathBuf,
        /// Masks (required in pruned mode).
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        task: String,
        /// pruned, dense-full or dense-encoder-only.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the mask overlap matrix and prints Param(%) accounting.
    Analyze {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares backward-pass gradients with finite differences.
    Gradcheck,
    /// Runs the full comparison and writes every report.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Skip the SVG charts.
        #[arg(long)]
        no_svg: bool,
    },
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code == 1 {
                manifest::append(&argv, None, None, None, &[], "usage-error");
            }
            return ExitCode::from(code);
        }
    };
    let mut run = commands::Run::new(cli.common.clone());
    let result = run.execute(&cli.command);
    let (code, status) = match &result {
        Ok(()) => (0, "ok"),
        Err(e) if e.is_config() => (1, "config-error"),
        Err(_) => (2, "runtime-error"),
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    manifest::append(&argv, run.config_hash(), run.seed(), run.manifest_dir(&cli.command), &run.outputs, status);
    ExitCode::from(code)
}
