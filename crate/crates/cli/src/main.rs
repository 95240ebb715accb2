use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use groupsparse_cli::{cmd_prox_check, cmd_prune, cmd_report, cmd_train};

#[derive(Parser)]
#[command(name = "groupsparse", version, about = "Group-sparse training and neuron pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a JSON experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Remove dead neurons from a checkpoint.
    Prune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Sparsity report for a checkpoint and its compacted form.
    Report {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// JSON with `regularized_accuracy` and `baseline_accuracy`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory for report.json and report.txt (default: next to --after).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare the closed-form proximal map with a brute-force minimizer.
    ProxCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Prune { input, output } => cmd_prune(input, output),
        Command::Report { before, after, metrics, out_dir } => {
            cmd_report(before, after, metrics.as_deref(), out_dir.as_deref())
        }
        Command::ProxCheck { trials, seed } => cmd_prox_check(*trials, *seed),
    };
    match result {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
