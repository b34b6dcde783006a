//! Command-line front end: one subcommand per pipeline stage plus the full
//! pipeline, all thin wrappers over the library's staged orchestrator.

use clap::{Parser, Subcommand};
use nlhomog::config::{config_hash, Config};
use nlhomog::pipeline::run_pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nlhomog",
    about = "Homogenization pipeline for nonlocal evolution equations with Markov-modulated periodic coefficients",
    version
)]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true, env = "NLHOMOG_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, env = "NLHOMOG_OUT", default_value = "out")]
    out: PathBuf,

    /// Override the configured master seed.
    #[arg(long, global = true, env = "NLHOMOG_SEED")]
    seed: Option<u64>,

    /// Worker threads for sample fan-out (0 = all cores).
    #[arg(long, global = true, env = "NLHOMOG_WORKERS")]
    workers: Option<usize>,

    /// Escalate estimation-quality warnings to hard errors.
    #[arg(long, global = true, env = "NLHOMOG_STRICT")]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model hypotheses and write the report.
    Validate,
    /// Solve the corrector and invariant-density cell problems.
    Correctors,
    /// Assemble effective diffusivity, drift, and fluctuation covariance.
    Effective,
    /// Run the multiscale simulations over the configured ε ladder.
    Simulate,
    /// Sample the integrated fluctuation process and test its limit law.
    Clt,
    /// Sample the limit equation and compute exact projection moments.
    Spde,
    /// Aggregate all artifacts into the verification report.
    Verify,
    /// Run every stage in order.
    Pipeline,
    /// Print the resolved configuration and its hash, then exit.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<Config, nlhomog::Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cli.strict {
        cfg.strict = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, nlhomog::Error> {
    let cfg = load_config(cli)?;
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            println!("# sha256 {}", config_hash(&cfg));
            return Ok(true);
        }
        Command::Validate => "validate",
        Command::Correctors => "correctors",
        Command::Effective => "effective",
        Command::Simulate => "simulate",
        Command::Clt => "clt",
        Command::Spde => "spde",
        Command::Verify | Command::Pipeline => "verify",
    };
    let outcome = run_pipeline(&cfg, &cli.out, stage)?;
    for s in &outcome.skipped {
        println!("skipped {s} (unchanged since last run)");
    }
    for s in &outcome.ran {
        println!("completed {s}");
    }
    if stage == "verify" {
        print!("{}", outcome.report.summary());
        return Ok(outcome.report.passed());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
