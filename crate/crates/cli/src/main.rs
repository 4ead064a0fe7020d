use std::path::PathBuf;
use std::process::ExitCode;

use bsdelab::{preset, run, ExperimentConfig, Pipeline, RunError};
use clap::Parser;

/// Monte Carlo experiments for BSDEs with singular terminal values.
#[derive(Debug, Parser)]
#[command(name = "bsdelab", version)]
struct Cli {
    /// Pipeline to run; overrides the one in the config.
    #[arg(value_enum)]
    pipeline: Pipeline,

    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,

    /// Named built-in experiment.
    #[arg(long)]
    preset: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory. `BSDELAB_OUT` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<i32, RunError> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(RunError::Config("one of --config or --preset is required".into())),
    };
    config.pipeline = cli.pipeline;
    if let Some(seed) = cli.seed {
        config.mc.seed = seed;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Config(format!("--workers: {e}")))?;
    }
    let out = std::env::var_os("BSDELAB_OUT")
        .map(PathBuf::from)
        .or(cli.out)
        .unwrap_or_else(|| config.output.clone());
    let outcome = run(&config, &out)?;
    for c in &outcome.checks {
        let mark = if c.passed { "ok  " } else if c.gating { "FAIL" } else { "warn" };
        println!("{mark} {:<26} value {:<12.6} threshold {:<10.4} {}", c.name, c.value, c.threshold, c.detail);
    }
    println!("wrote {}", out.join("manifest.json").display());
    Ok(outcome.status())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
