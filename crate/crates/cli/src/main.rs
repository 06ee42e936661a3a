use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simmering_cli::commands;
use simmering_cli::config::ExperimentConfig;
use simmering_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "simmering", version, about = "Thermostatted sampling of neural-network parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with full-batch Adam.
    TrainAdam(RunArgs),
    /// Continue Adam endpoints under the thermostat and sample ensembles.
    Retrofit(RunArgs),
    /// Sample ensembles from random initializations at constant temperature.
    Simmer(RunArgs),
    /// Re-evaluate the ensembles saved in a previous run.
    Evaluate(EvaluateArgs),
    /// Hessian eigenvalue spectrum at an Adam endpoint.
    Spectrum(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's replicate count.
    #[arg(long)]
    replicates: Option<u32>,
    /// Reuse the Adam endpoints of a `train-adam` run.
    #[arg(long)]
    from_run: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory holding saved ensembles.
    #[arg(long)]
    from_run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Config whose `[evaluation]` section replaces the run's.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(r) = self.replicates {
            config.replicates = r;
        }
        config.validate()?;
        Ok(config)
    }

    fn no_source(&self, command: &str) -> Result<()> {
        match self.from_run {
            Some(_) => Err(CliError::config("from_run", format!("not accepted by {command}"))),
            None => Ok(()),
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let summary = match cli.command {
        Command::TrainAdam(a) => {
            a.no_source("train-adam")?;
            commands::run_train_adam(&a.load()?, &a.out)?;
            serde_json::json!({ "out": a.out })
        }
        Command::Retrofit(a) => {
            let report = commands::run_retrofit(&a.load()?, &a.out, a.from_run.as_deref())?;
            serde_json::json!({ "out": a.out, "metrics": report })
        }
        Command::Simmer(a) => {
            a.no_source("simmer")?;
            let report = commands::run_simmer(&a.load()?, &a.out)?;
            serde_json::json!({ "out": a.out, "metrics": report })
        }
        Command::Evaluate(a) => {
            let evaluation = a
                .config
                .as_deref()
                .map(ExperimentConfig::load)
                .transpose()?
                .map(|c| c.evaluation);
            let report = commands::run_evaluate(&a.from_run, &a.out, evaluation)?;
            serde_json::json!({ "out": a.out, "metrics": report })
        }
        Command::Spectrum(a) => {
            let report = commands::run_spectrum(&a.load()?, &a.out, a.from_run.as_deref())?;
            serde_json::json!({
                "out": a.out,
                "decades": report.decades,
                "param_count": report.param_count,
            })
        }
    };
    Ok(summary)
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim()),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
