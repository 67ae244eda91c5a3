//! `nmpc-drive`: run, validate and summarize closed-loop scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nmpc_drive::scenario::{self, RunOutput, Scenario};

#[derive(Parser)]
#[command(name = "nmpc-drive", version, about = "Closed-loop NMPC trajectory tracking scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios (files or built-in names: dlc80, parking10, alden60).
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Overrides the plant noise seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Each scenario writes into `<out>/<name>/`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of scenarios run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Load and validate a scenario without running it.
    Validate { scenario: String },
    /// Recompute the summary of a saved `runlog.csv`.
    Summarize { runlog: PathBuf },
}

fn run_all(scenarios: &[Scenario], seed: Option<u64>, out: &Path, jobs: usize) -> Vec<Result<RunOutput>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput>>>> = Mutex::new((0..scenarios.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, scenarios.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sc) = scenarios.get(i) else { break };
                let dir = out.join(&sc.config.name);
                let r = scenario::run(sc, seed, Some(&dir)).with_context(|| format!("scenario `{}`", sc.config.name));
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every scenario ran")).collect()
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Command::Run { scenarios, seed, out, jobs } => {
            let loaded = scenarios.iter().map(|s| Scenario::resolve(s).with_context(|| format!("loading `{s}`"))).collect::<Result<Vec<_>>>()?;
            let mut all_passed = true;
            for (sc, result) in loaded.iter().zip(run_all(&loaded, seed, &out, jobs)) {
                let output = result?;
                println!("== {} ({})", sc.config.name, out.join(&sc.config.name).display());
                print!("{}", output.summary);
                for c in &output.checks {
                    println!("check {}: {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
                }
                all_passed &= output.passed();
            }
            Ok(all_passed)
        }
        Command::Validate { scenario } => {
            let sc = Scenario::resolve(&scenario)?;
            println!(
                "{}: ok ({:.1} m path, {} obstacle(s), horizon {} x {} s)",
                sc.config.name,
                sc.path.s_end(),
                sc.obstacles.len(),
                sc.config.ocp.horizon,
                sc.config.ocp.dt_s
            );
            Ok(true)
        }
        Command::Summarize { runlog } => {
            let log = scenario::load_log(&runlog)?;
            print!("{}", scenario::summarize(&log)?);
            Ok(true)
        }
    }
}
