mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Run};
use config::Experiment;

/// Train and evaluate SNR-adaptive deep JSCC image codecs.
#[derive(Parser)]
#[command(name = "adjscc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both `train.seed` and `eval.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the generation-time line from CSVs and zero the timing column of
    /// the training log.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints and train_log.csv.
    Train(Common),
    /// PSNR over `eval.snr_list` for each checkpoint.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// PSNR over the `eval.mismatch_grid` feedback x true SNR grid.
    Mismatch {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
    },
    /// Scaling-factor statistics of every AF module.
    Attention {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
    },
    /// Storage table, plus ensemble sweeps for `[[report.group]]` entries.
    Report {
        #[command(flatten)]
        common: Common,
        checkpoints: Vec<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    let common = match &command {
        Command::Train(c) => c,
        Command::Sweep { common, .. }
        | Command::Mismatch { common, .. }
        | Command::Attention { common, .. }
        | Command::Report { common, .. } => common,
    };
    let exp = Experiment::load(&common.config, common.out.as_deref(), common.seed)?;
    let run = Run {
        exp,
        timestamp: !common.no_timestamp,
    };
    match &command {
        Command::Train(_) => commands::train(&run),
        Command::Sweep { checkpoints, .. } => commands::sweep_cmd(&run, checkpoints),
        Command::Mismatch { checkpoint, .. } => commands::mismatch_cmd(&run, checkpoint),
        Command::Attention { checkpoint, .. } => commands::attention_cmd(&run, checkpoint),
        Command::Report { checkpoints, .. } => commands::report_cmd(&run, checkpoints),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
