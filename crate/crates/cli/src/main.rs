use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nssmc_cli::{run_experiment, CliError, ExperimentConfig, Overrides};

/// Run nested sampling, NS-SMC or tempered SMC experiments.
#[derive(Debug, Parser)]
#[command(name = "nssmc", version)]
struct Args {
    /// JSON experiment config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ns, ins, nssmc_fixed, nssmc_adaptive, tasmc_fixed or tasmc_adaptive.
    #[arg(long)]
    algorithm: Option<String>,
    /// JSON model object, or `sphere_mixture` for the 10-d benchmark.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay file with a frozen schedule and kernels.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: Args) -> Result<(), CliError> {
    let overrides = Overrides {
        algorithm: args.algorithm,
        model: args.model,
        n: args.n,
        rho: args.rho,
        alpha: args.alpha,
        runs: args.runs,
        seed: args.seed,
        out: args.out,
        replay: args.replay,
        workers: args.workers,
    };
    let config = ExperimentConfig::load(args.config.as_deref(), &overrides)?;
    let out = run_experiment(&config)?;
    let s = &out.summary;
    println!(
        "{} on {}: mean log Z = {:.6}, mean Z = {:.6e}, SE% = {}, mean evals = {:.0}",
        s.algorithm,
        s.model,
        s.mean_log_z,
        s.mean_z,
        s.se_percent.map_or("-".into(), |v| format!("{v:.2}")),
        s.mean_evals
    );
    if let Some(r) = s.mean_z_ratio {
        println!("mean Z_hat / Z = {r:.4}");
    }
    println!("outputs in {}", config.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nssmc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
