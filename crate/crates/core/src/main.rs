use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use penaltyflow::driver::{convergence_study, rates_csv, run_experiment, summary_csv, RunConfig};
use penaltyflow::problems::{verify_forcing, Problem};
use penaltyflow::{par, Error, Result};

#[derive(Parser)]
#[command(
    name = "penaltyflow",
    version,
    about = "Adaptive-penalty Navier-Stokes solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write timeseries.csv and summary.csv.
    Run {
        config: PathBuf,
        /// Override a config entry, e.g. `--set k0=0.005` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Convergence study over constant step sizes, writes rates.csv.
    Rates {
        config: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<f64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a manufactured forcing against finite differences of its exact solution.
    Verify {
        problem: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &PathBuf, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let res = run_experiment(&cfg)?;
            print!("{}", summary_csv(&res.summary));
        }
        Command::Rates {
            config,
            steps,
            overrides,
        } => {
            let cfg = load(&config, &overrides)?;
            let rows = convergence_study(&cfg, &steps)?;
            print!("{}", rates_csv(&rows));
        }
        Command::Verify {
            problem,
            samples,
            seed,
        } => {
            let p = Problem::by_name(&problem)?;
            let r = verify_forcing(&p, samples, seed)?;
            println!("{problem}: max residual {r:e} over {samples} points");
            if r.is_nan() || r >= 1e-6 {
                return Err(Error::Config(format!(
                    "forcing residual {r:e} exceeds 1e-6"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(n) = std::env::var("PENALTYFLOW_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                par::init_threads(n);
            }
            _ => error!("ignoring PENALTYFLOW_THREADS={n}: expected a positive integer"),
        }
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
