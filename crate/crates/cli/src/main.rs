use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meminfl_cli::commands;
use meminfl_cli::RunConfig;

#[derive(Parser)]
#[command(name = "meminfl", version, about = "Subsampled memorization and influence estimation")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to everything it omits.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set trials.t=500`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker count for trials and experiment repeats.
    #[arg(long, env = "MEMINFL_PARALLELISM", global = true)]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its ground truth as CSV.
    Gen,
    /// Run the configured trials, or extend an existing store.
    Trials,
    /// Write memorization and influence tables.
    Estimate,
    /// Select high-influence pairs and summarize them.
    Select,
    /// Compare the estimator with exact values on a small dataset.
    Oracle,
    /// Removal experiment: memorized versus random examples.
    Removal,
    /// Accuracy attributable to the selected pairs.
    Marginal,
    /// Agreement between this run and another run's estimates.
    Consistency {
        /// Configuration of the other run.
        #[arg(long)]
        other: PathBuf,
        /// Overrides for the other run's configuration.
        #[arg(long = "other-set", value_name = "SECTION.KEY=VALUE")]
        other_overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> meminfl::Result<Vec<String>> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.parallelism)?;
    match cli.command {
        Command::Gen => commands::cmd_gen(&cfg),
        Command::Trials => commands::cmd_trials(&cfg),
        Command::Estimate => commands::cmd_estimate(&cfg),
        Command::Select => commands::cmd_select(&cfg),
        Command::Oracle => commands::cmd_oracle(&cfg),
        Command::Removal => commands::cmd_removal(&cfg),
        Command::Marginal => commands::cmd_marginal(&cfg),
        Command::Consistency { other, other_overrides } => {
            let other_cfg = RunConfig::load(Some(&other), &other_overrides, cli.parallelism)?;
            commands::cmd_consistency(&cfg, &other_cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
