//! Command-line front end.
//!
//! Flags take precedence over the config file, which takes precedence over
//! built-in defaults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evflex::config::{ConfigError, Mode, Overrides, RunConfig};
use evflex::pipeline;
use evflex::{ClarabelBackend, RunError};

#[derive(Parser)]
#[command(name = "evflex", version, about = "Day-ahead flexibility areas for EV charging pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the flexibility model and write the areas.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Solve the uncontrolled base case instead.
        #[arg(long)]
        base: bool,
    },
    /// Monte-Carlo check of planned (or given) areas against the network.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Areas CSV to check instead of planning.
        #[arg(long)]
        areas: Option<PathBuf>,
        /// Number of simulations.
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Settle planned (or given) areas on fresh scenarios.
    Payment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        areas: Option<PathBuf>,
    },
    /// Base case, plan, validation and payment, with a summary report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Risk level in [0, 1] for every pool and period.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of planning scenarios.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common, areas: Option<PathBuf>) -> Result<RunConfig, ConfigError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        seed: common.seed,
        beta: common.beta,
        scenarios: common.scenarios,
        out: common.out.clone(),
        areas,
    });
    Ok(config)
}

fn configure(cli: Cli) -> Result<RunConfig, ConfigError> {
    Ok(match cli.command {
        Command::Plan { common, base } => {
            let mut c = load(&common, None)?;
            c.mode = if base { Mode::Base } else { Mode::Flex };
            c
        }
        Command::Validate { common, areas, sims } => {
            let mut c = load(&common, areas)?;
            c.mode = Mode::Validate;
            if let Some(n) = sims {
                c.validation.sims = n;
            }
            c
        }
        Command::Payment { common, areas } => {
            let mut c = load(&common, areas)?;
            c.mode = Mode::Payment;
            c
        }
        Command::Report { common } => {
            let mut c = load(&common, None)?;
            c.mode = Mode::Full;
            c
        }
    })
}

fn fail(err: RunError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match configure(cli) {
        Ok(c) => c,
        Err(e) => return fail(e.into()),
    };
    match pipeline::run(&config, &ClarabelBackend::new()) {
        Ok(files) => {
            let summary = serde_json::json!({ "out": config.paths.out, "files": files });
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
