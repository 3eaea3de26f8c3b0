use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spadlink::config::{ExperimentConfig, Scenario};
use spadlink::{emit_report, oracle, run_scenario};

#[derive(Parser)]
#[command(name = "spadlink", version, about = "SPAD-array optical wireless link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write its CSV files and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides experiment.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides experiment.scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Parse and check a configuration file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check the simulator against closed forms and brute force.
    Oracle,
}

const CONFIG_ERROR: u8 = 2;
const SIMULATION_ERROR: u8 = 3;
const IO_ERROR: u8 = 1;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({})", config.display(), cfg.experiment.scenario);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
        Command::Oracle => {
            let checks = oracle::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(SIMULATION_ERROR)
            }
        }
        Command::Run { config, out, seed, workers, scenario } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            };
            if let Some(name) = scenario {
                match Scenario::parse(&name) {
                    Some(s) => cfg.experiment.scenario = s,
                    None => {
                        eprintln!("error: unknown scenario {name:?}");
                        return ExitCode::from(CONFIG_ERROR);
                    }
                }
            }
            if let Some(s) = seed {
                cfg.experiment.master_seed = s;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(CONFIG_ERROR);
            }
            let workers = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1);
            let result = match run_scenario(&cfg, workers) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("simulation error: {e}");
                    return ExitCode::from(SIMULATION_ERROR);
                }
            };
            match emit_report(&result, &cfg, &out) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error writing {}: {e}", out.display());
                    ExitCode::from(IO_ERROR)
                }
            }
        }
    }
}
