use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oko_cli::config::ExperimentConfig;
use oko_cli::verify::{print_verdicts, run_verification, write_verdicts, VerifyOptions};
use oko_cli::{exit_codes, CliError};

#[derive(Parser)]
#[command(
    name = "oko",
    about = "Set-based classification training, calibration reports, and theory checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (method x train size x seed) combination in a config.
    Train {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run the numerical theory-verification suite.
    Verify {
        /// Epsilon values (descending) for the minimizer-limit check.
        #[arg(long = "eps", num_args = 1.., value_delimiter = ' ')]
        eps: Option<Vec<f64>>,
        /// Epsilon values for the regularization-gap check.
        #[arg(long = "gap-eps", num_args = 1.., value_delimiter = ' ')]
        gap_eps: Option<Vec<f64>>,
        /// Enumeration row budget.
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the verdicts as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Force an extra failing verdict (harness self-test).
        #[arg(long, hide = true)]
        inject_failure: bool,
    },
    /// Summarize run records into CSV tables.
    Report {
        /// Directory holding run records.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Train { config, workers } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let summary = oko_cli::runner::run_experiments(&cfg, workers)?;
            println!(
                "{} runs completed, {} failed; records under {}",
                summary.completed,
                summary.failed,
                summary.output_dir.display()
            );
            Ok(if summary.failed == 0 {
                exit_codes::OK
            } else {
                exit_codes::FAILURE
            })
        }
        Command::Verify {
            eps,
            gap_eps,
            budget,
            seed,
            json,
            inject_failure,
        } => {
            let defaults = VerifyOptions::default();
            let opts = VerifyOptions {
                theorem_eps: eps.unwrap_or(defaults.theorem_eps),
                gap_eps: gap_eps.unwrap_or(defaults.gap_eps),
                enum_budget: budget,
                seed,
                inject_failure,
            };
            let verdicts = run_verification(&opts)?;
            print_verdicts(&verdicts);
            if let Some(path) = json {
                write_verdicts(&verdicts, &path)?;
            }
            Ok(if verdicts.iter().all(|v| v.pass) {
                exit_codes::OK
            } else {
                exit_codes::FAILURE
            })
        }
        Command::Report { dir } => {
            let output = oko_cli::report::write_report(&dir)?;
            for w in &output.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} methods summarized into {}",
                output.rows.len(),
                dir.join("summary.csv").display()
            );
            Ok(exit_codes::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e @ (CliError::Validation(_) | CliError::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_codes::VALIDATION as u8)
        }
        Err(CliError::Theory(
            e @ oko_core::theoryverify::TheoryError::InvalidArgument(_),
        )) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_codes::VALIDATION as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_codes::FAILURE as u8)
        }
    }
}
