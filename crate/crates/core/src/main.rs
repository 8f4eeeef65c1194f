use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dicke_sim::runner::{load_config, run, ExperimentKind, RunError};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Spectrum,
    Decay,
    Tomo,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Spectrum => ExperimentKind::Spectrum,
            Kind::Decay => ExperimentKind::Decay,
            Kind::Tomo => ExperimentKind::Tomo,
        }
    }
}

/// Simulate two-qubit cavity emission experiments from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "dicke-sim", version)]
struct Cli {
    /// Experiment to run.
    kind: Kind,
    /// Path to the JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set detection.n_noise=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the detection chain.
    #[arg(long)]
    seed: Option<u64>,
}

const THREADS_VAR: &str = "DICKE_SIM_THREADS";

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("{THREADS_VAR}={v} is not a positive integer"))?;
    if n == 0 {
        return Err(format!("{THREADS_VAR} must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let result = load_config(&text, &cli.set, cli.kind.into(), cli.seed)
        .map_err(RunError::Validation)
        .and_then(|cfg| run(&cfg, &cli.out));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                RunError::Validation(c) => eprintln!("error: invalid config at {c}"),
                e => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
