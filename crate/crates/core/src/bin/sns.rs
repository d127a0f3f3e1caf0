use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sns_core::experiment::{
    run_calibration, run_global_sweep, run_local, run_oscillating_sweep, run_verify,
    ExperimentConfig, ExperimentKind,
};
use sns_core::Error;

/// Stochastic Navier-Stokes experiments in critical Besov spaces.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the estimate constants and write manifest.json.
    Calibrate(Common),
    /// Run every property suite and write verify.json.
    Verify(Common),
    /// Survival over a ladder of short windows.
    Local(Common),
    /// Survival probability against the initial-data size.
    GlobalSweep(Common),
    /// Norms and survival of oscillating data across an epsilon ladder.
    OscillatingSweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self, kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::from_file(&self.config)?;
        config.experiment = Some(kind);
        if let Some(s) = self.seed {
            config.master_seed = s;
        }
        if let Some(n) = self.paths {
            config.n_paths = n;
        }
        if let Some(o) = &self.out {
            config.output_dir = o.clone();
        }
        if self.workers.is_some() {
            config.workers = self.workers;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let (kind, common) = match &cli.command {
        Command::Calibrate(c) => (ExperimentKind::Calibrate, c),
        Command::Verify(c) => (ExperimentKind::Verify, c),
        Command::Local(c) => (ExperimentKind::Local, c),
        Command::GlobalSweep(c) => (ExperimentKind::GlobalSweep, c),
        Command::OscillatingSweep(c) => (ExperimentKind::OscillatingSweep, c),
    };
    let config = common.load(kind)?;
    match kind {
        ExperimentKind::Calibrate => {
            let (manifest, hash) = run_calibration(&config)?;
            println!("manifest_sha256 {hash}");
            print(&manifest)?;
        }
        ExperimentKind::Verify => {
            let verdict = run_verify(&config)?;
            for s in &verdict.suites {
                println!("{} {}", if s.passed { "PASS" } else { "FAIL" }, s.name);
            }
            if !verdict.passed {
                return Ok(ExitCode::from(3));
            }
        }
        ExperimentKind::Local => print(&run_local(&config)?)?,
        ExperimentKind::GlobalSweep => print(&run_global_sweep(&config)?)?,
        ExperimentKind::OscillatingSweep => print(&run_oscillating_sweep(&config)?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn print<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
