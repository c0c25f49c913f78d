use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpirec::commands::{run_diagnose, run_eval, run_train};
use lpirec::config::Config;
use lpirec::{Error, Split};

#[derive(Parser)]
#[command(name = "lpirec", version, about = "Train and evaluate off-policy sequential recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured objective and keep the best validation checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split and write a metrics JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare checkpoints trained at different beta (or lambda_td) values.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config } => {
            let out = run_train(&Config::load(&config)?)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("training log: {}", out.log_path.display());
        }
        Command::Eval { config, checkpoint, split } => {
            let split = Split::parse(&split)?;
            let (report, path) = run_eval(&Config::load(&config)?, &checkpoint, split)?;
            println!("{}", report.to_json());
            eprintln!("metrics written to {}", path.display());
        }
        Command::Diagnose { config, checkpoints } => {
            let (table, path) = run_diagnose(&Config::load(&config)?, &checkpoints)?;
            print!("{table}");
            eprintln!("sweep written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
