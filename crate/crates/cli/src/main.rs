use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bitstab_cli::report::render;
use bitstab_cli::{run_experiment, write_summary, ExperimentConfig, Outputs, RunError};
use clap::Parser;

const SEED_ENV: &str = "BITSTAB_SEED";

/// Runs a stabilization experiment described by a TOML file.
#[derive(Parser, Debug)]
#[command(name = "bitstab", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the file and in BITSTAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for one CSV trace per trajectory.
    #[arg(long)]
    traces_out: Option<PathBuf>,
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>, RunError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| RunError::Config(format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match real_main(args) {
        Ok(passed) => ExitCode::from(if passed { 0 } else { 3 }),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn real_main(args: Args) -> Result<bool, RunError> {
    let text = fs::read_to_string(&args.config).map_err(|e| RunError::Io(format!("{}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(RunError::Config)?;
    let seed = match args.seed.or(cfg.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let outputs = Outputs { traces_dir: args.traces_out.or_else(|| cfg.output.traces_dir.clone()) };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    let summary = pool.install(|| run_experiment(&cfg, seed, &outputs))?;
    print!("{}", render(&summary));
    if let Some(path) = args.summary_out.or_else(|| cfg.output.summary.clone()) {
        write_summary(&summary, &path)?;
    }
    Ok(summary.passed)
}
