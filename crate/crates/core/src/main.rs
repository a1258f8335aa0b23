//! Scenario-runner CLI.
//!
//! `run` executes one scenario file and prints per-property verdicts;
//! `suite` runs every `.toml` scenario in a directory; `replay-check`
//! verifies that two runs with the same seed produce byte-identical
//! traces. Exit code 0 means every evaluated property passed.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use switch_paxos::harness::{self, Scenario};

#[derive(Parser)]
#[command(
    name = "switch-paxos",
    version,
    about = "Simulated switch-based Multi-Paxos scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and evaluate all property checkers.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSONL trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every *.toml scenario in a directory.
    Suite {
        #[arg(long)]
        dir: PathBuf,
        /// Override every scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario twice with one seed and compare traces byte for byte.
    ReplayCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            trace,
            report,
        } => {
            let scenario = Scenario::load(&scenario)?;
            let outcome = harness::run_scenario(&scenario, seed)?;
            print!(
                "scenario {} (seed {}):\n{}",
                outcome.report.scenario,
                outcome.report.seed,
                outcome.report.summary_lines()
            );
            println!(
                "  {} submits, {} decided instances, {} executes, {} failed requests",
                outcome.report.stats.submitted,
                outcome.report.stats.decided_instances,
                outcome.report.stats.executed,
                outcome.report.stats.failed_requests,
            );
            if let Some(path) = trace {
                fs::write(&path, outcome.trace.to_jsonl())?;
                println!("  trace written to {}", path.display());
            }
            if let Some(path) = report {
                fs::write(&path, outcome.report.to_json())?;
                println!("  report written to {}", path.display());
            }
            Ok(outcome.report.pass)
        }
        Command::Suite { dir, seed } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(format!("no .toml scenarios in {}", dir.display()).into());
            }
            let mut all_pass = true;
            for path in paths {
                let scenario = Scenario::load(&path)?;
                let outcome = harness::run_scenario(&scenario, seed)?;
                let verdict = if outcome.report.pass { "pass" } else { "FAIL" };
                println!(
                    "{:<30} seed {:<6} {} ({} decided)",
                    outcome.report.scenario,
                    outcome.report.seed,
                    verdict,
                    outcome.report.stats.decided_instances
                );
                if !outcome.report.pass {
                    print!("{}", outcome.report.summary_lines());
                    all_pass = false;
                }
            }
            Ok(all_pass)
        }
        Command::ReplayCheck { scenario, seed } => {
            let scenario = Scenario::load(&scenario)?;
            let seed = seed.unwrap_or(scenario.seed);
            match harness::replay_check(&scenario, seed) {
                Ok(()) => {
                    println!(
                        "replay-check {} (seed {seed}): identical traces",
                        scenario.name
                    );
                    Ok(true)
                }
                Err(diff) => {
                    println!(
                        "replay-check {} (seed {seed}): diverged at line {}",
                        scenario.name, diff.line
                    );
                    println!("  first:  {}", diff.expected);
                    println!("  second: {}", diff.actual);
                    Ok(false)
                }
            }
        }
    }
}
