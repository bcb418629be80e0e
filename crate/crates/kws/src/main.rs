//! `kws` — train and evaluate desk-scale keyword-spotting models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kws::cli::{self, CliError};
use kws::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "kws",
    about = "Keyword spotting toolkit: synthetic data, multi-task training, DET evaluation",
    version
)]
struct Args {
    /// Flat key = value config file (defaults apply for every omitted key).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set epochs=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads. Only the bit-exact single-threaded path is
    /// implemented, so any other value is rejected.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize asr.bin, kws_train.bin and kws_eval.bin.
    GenData {
        /// Output directory for the dataset files.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train the configured mode; writes per-epoch checkpoints and a log.
    Train {
        /// Directory holding the dataset files from gen-data.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Output directory for checkpoints and the training log.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from the latest epoch checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score an eval set with a trained checkpoint and emit DET files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Phrase-labeled dataset file to score.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for score and DET files.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        /// ops, losses, model or all.
        #[arg(long, default_value = "all")]
        scope: String,
        /// Deliberately register a broken backward (must make the suite fail).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Re-derive a DET curve from a saved score file.
    Det {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    if args.threads != 1 {
        return Err(CliError::Usage(format!(
            "--threads {} requested, but only the bit-exact single-threaded path is implemented",
            args.threads
        )));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    // full config up front: every run is reproducible from its own output
    println!("# effective configuration");
    print!("{}", cfg.to_text());
    println!("# end configuration");

    match args.command {
        Command::GenData { out } => cli::cmd_gen_data(&cfg, &out),
        Command::Train { data, out, resume } => cli::cmd_train(&cfg, &data, &out, resume),
        Command::Eval { checkpoint, data, out } => {
            cli::cmd_eval(&cfg, &checkpoint, &data, &out).map(|_| ())
        }
        Command::GradCheck { scope, inject_fault } => {
            let failures = cli::cmd_grad_check(&scope, inject_fault)?;
            if failures > 0 {
                Err(CliError::Numerical(format!("{failures} gradient checks failed")))
            } else {
                Ok(())
            }
        }
        Command::Det { scores, out } => cli::cmd_det(&cfg, &scores, &out),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
