use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stua_core::experiment::{self, RunPaths};
use stua_core::{Config, Result};

/// Mobility forecasting with content and context uncertainty.
#[derive(Debug, Parser)]
#[command(name = "stua", version)]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for data, checkpoint, metrics and plots.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `<out>/data`.
    Synth,
    /// Validate the configured csv files and copy them into `<out>/data`.
    Ingest,
    /// Train and write `checkpoint.txt` and `metrics.jsonl`.
    Train,
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// Dump indicator fields for one turbulent window.
    Indicators,
    /// Summarize metrics into `report.md`.
    Report,
    /// Every step in order.
    Run,
    /// Print the effective config as TOML.
    Config,
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let paths = RunPaths::new(&cli.out);
    match cli.command {
        Command::Synth => {
            let data = experiment::step_synth(&cfg, &paths)?;
            println!(
                "wrote {} intervals x {} regions to {}",
                data.mobility.len(),
                data.graph.len(),
                paths.data_dir().display()
            );
        }
        Command::Ingest => {
            let data = experiment::step_ingest(&cfg, &paths)?;
            println!(
                "ingested {} intervals x {} regions into {}",
                data.mobility.len(),
                data.graph.len(),
                paths.data_dir().display()
            );
        }
        Command::Train => {
            let outcome = experiment::step_train(&cfg, &paths)?;
            println!(
                "best epoch {} (val {:.6}); checkpoint {}",
                outcome.report.best_epoch,
                outcome.report.best_val,
                paths.checkpoint().display()
            );
        }
        Command::Eval => {
            let report = experiment::step_eval(&cfg, &paths)?;
            println!("{}", report.to_json());
        }
        Command::Indicators => {
            experiment::step_indicators(&cfg, &paths)?;
            println!("wrote {}", paths.indicators().display());
        }
        Command::Report => print!("{}", experiment::step_report(&paths)?),
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Run => {
            let report = experiment::run_with_config(&cfg, &paths)?;
            println!("{}", report.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
