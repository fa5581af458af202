use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mac_pa::equilibrium::NeConfig;
use mac_pa::experiments::{self, selftest::run_selftest, ScenarioConfig};
use mac_pa::Error;

#[derive(Parser)]
#[command(name = "mac-pa", version, about = "Power-allocation games on the MIMO multiple access channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Sum-rate versus power: fair SIC, SUD and sum-capacity.
    Fig1 {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sum-rate efficiency versus p for the three policies.
    Fig2 {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Equilibrium rate pairs versus p under the spatial policy.
    Fig3 {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the built-in property checks.
    Selftest,
}

fn finish(paths: (PathBuf, PathBuf), converged: bool) -> ExitCode {
    println!("wrote {} and {}", paths.0.display(), paths.1.display());
    if converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: at least one row did not converge (see the diagnostics file)");
        ExitCode::from(3)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let ne = NeConfig::default();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let cfg = ScenarioConfig::from_file(&config)?;
            let report = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("--threads: {e}")))?
                    .install(|| experiments::run_scenario(&cfg, &ne, seed))?,
                None => experiments::run_scenario(&cfg, &ne, seed)?,
            };
            Ok(finish(report.write(&out)?, report.all_converged()))
        }
        Command::Fig1 { out } => {
            let report = experiments::run_fig1(&ne)?;
            Ok(finish(report.write(&out)?, report.all_converged()))
        }
        Command::Fig2 { out } => {
            let report = experiments::run_fig2(&ne)?;
            Ok(finish(report.write(&out)?, report.all_converged()))
        }
        Command::Fig3 { out } => {
            let report = experiments::run_fig3(&ne)?;
            Ok(finish(report.write(&out)?, report.all_converged()))
        }
        Command::Selftest => {
            let checks = run_selftest(2024);
            for c in &checks {
                println!("{} {:<26} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
