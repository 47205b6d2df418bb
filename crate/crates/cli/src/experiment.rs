//! Pilot-then-fixed workflows and repeated runs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nssmc_core::{
    run_adaptive_nssmc, run_adaptive_tasmc, run_fixed_nssmc, run_fixed_tasmc, run_ns,
    AdaptiveNssmcConfig, AdaptiveTasmcConfig, KernelPlan, LevelSchedule, NsConfig, Problem,
    Repeats, RunResult, Streams, TargetModel, Termination, TuningReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::CliError;
use crate::export::{export_diagnostic_curve, write_levels};
use crate::stats::{RunRow, Summary};

/// Schedule and kernels that make a fixed run reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    pub schedule: LevelSchedule,
    pub plan: KernelPlan,
}

impl ReplayFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path)
            .map_err(|e| CliError::Config(format!("replay file {}: {e}", path.display())))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CliError::Config(format!("replay file {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub rows: Vec<RunRow>,
    /// Wall-clock seconds per run, in run order.
    pub wall_seconds: Vec<f64>,
}

struct Sampled {
    result: RunResult,
    replay: Option<ReplayFile>,
    tuning: Option<TuningReport>,
}

/// Runs the configured experiment and writes every output file under
/// `config.out`. Run `i` (1-based) uses seed `config.seed + i`; a pilot, when
/// needed, uses `config.seed`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| execute(config))
}

fn execute(config: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let out = config.out.as_path();
    fs::create_dir_all(out)?;
    let problem = config
        .model
        .build()
        .map_err(|e| CliError::Config(format!("model: {e}")))?;

    let frozen = if config.algorithm.is_fixed() {
        let replay = match &config.replay {
            Some(path) => ReplayFile::read(path)?,
            None => pilot(config, &problem, out)?,
        };
        write_json(&out.join("replay.json"), &replay)?;
        if let KernelPlan::Tuned(report) = &replay.plan {
            write_json(&out.join("tuning.json"), report)?;
        }
        Some(replay)
    } else {
        None
    };

    let outcomes: Vec<Result<(RunRow, f64, Option<Sampled>), CliError>> = (1..=config.runs)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let model = TargetModel::new(problem.clone());
            let clock = Instant::now();
            let sampled = sample(config, &model, frozen.as_ref(), &Streams::new(seed))?;
            let wall = clock.elapsed().as_secs_f64();
            let row = write_run(config, &problem, i, seed, &sampled.result)?;
            Ok((row, wall, (i == 1).then_some(sampled)))
        })
        .collect();

    let mut rows = Vec::with_capacity(config.runs);
    let mut wall_seconds = Vec::with_capacity(config.runs);
    for outcome in outcomes {
        let (row, wall, first) = outcome?;
        if let Some(s) = first {
            if let Some(replay) = &s.replay {
                write_json(&out.join("replay.json"), replay)?;
            }
            if let Some(tuning) = &s.tuning {
                write_json(&out.join("tuning.json"), tuning)?;
            }
        }
        rows.push(row);
        wall_seconds.push(wall);
    }

    let summary = Summary::from_rows(
        config.algorithm.name(),
        problem.name(),
        config.n,
        problem.log_evidence(),
        &rows,
    )?;
    write_csv(&out.join("runs.csv"), &rows)?;
    write_csv(&out.join("summary.csv"), std::slice::from_ref(&summary))?;
    let mut timing = csv::Writer::from_path(out.join("timing.csv"))?;
    timing.write_record(["run", "wall_seconds"])?;
    for (row, wall) in rows.iter().zip(&wall_seconds) {
        timing.write_record([row.run.to_string(), wall.to_string()])?;
    }
    timing.flush()?;
    Ok(ExperimentOutput {
        summary,
        rows,
        wall_seconds,
    })
}

fn pilot(
    config: &ExperimentConfig,
    problem: &Arc<dyn Problem>,
    out: &Path,
) -> Result<ReplayFile, CliError> {
    let model = TargetModel::new(problem.clone());
    let streams = Streams::new(config.seed);
    let n = config.pilot_n();
    let (result, schedule, tuning) = match config.algorithm {
        Algorithm::NssmcFixed => {
            let o = run_adaptive_nssmc(&model, &nssmc_config(config, n), &streams)?;
            (o.result, LevelSchedule::Thresholds(o.schedule), o.tuning)
        }
        Algorithm::TasmcFixed => {
            let o = run_adaptive_tasmc(&model, &tasmc_config(config, n), &streams)?;
            (o.result, LevelSchedule::Temperatures(o.schedule), o.tuning)
        }
        other => {
            return Err(CliError::Config(format!(
                "{} has no pilot stage",
                other.name()
            )))
        }
    };
    write_levels(
        &result.levels,
        BufWriter::new(File::create(out.join("levels-pilot.csv"))?),
    )?;
    Ok(ReplayFile {
        schedule,
        plan: KernelPlan::Tuned(tuning),
    })
}

fn nssmc_config(config: &ExperimentConfig, n: usize) -> AdaptiveNssmcConfig {
    AdaptiveNssmcConfig {
        n,
        rho: config.rho,
        termination: config.termination.unwrap_or(Termination::eps(1e-2)),
        family: config.kernel.family,
        options: config.kernel.options.clone(),
        tuning: config.kernel.tuning(),
        scheme: config.scheme,
        ..AdaptiveNssmcConfig::default()
    }
}

fn tasmc_config(config: &ExperimentConfig, n: usize) -> AdaptiveTasmcConfig {
    AdaptiveTasmcConfig {
        n,
        alpha: config.alpha,
        family: config.kernel.family,
        options: config.kernel.options.clone(),
        tuning: config.kernel.tuning(),
        scheme: config.scheme,
        ..AdaptiveTasmcConfig::default()
    }
}

fn ns_config(config: &ExperimentConfig) -> NsConfig {
    let defaults = NsConfig::default();
    NsConfig {
        n: config.n,
        family: config.kernel.family,
        step_scale: config
            .kernel
            .candidates
            .as_ref()
            .map_or(defaults.step_scale, |c| c[0]),
        repeats: match config.kernel.repeats {
            Some(Repeats::Fixed(r)) => r,
            _ => defaults.repeats,
        },
        options: config.kernel.options.clone(),
        termination: config.termination.unwrap_or(defaults.termination),
        ..defaults
    }
}

fn sample(
    config: &ExperimentConfig,
    model: &TargetModel,
    frozen: Option<&ReplayFile>,
    streams: &Streams,
) -> Result<Sampled, CliError> {
    let plain = |result| Sampled {
        result,
        replay: None,
        tuning: None,
    };
    Ok(match config.algorithm {
        Algorithm::Ns => plain(run_ns(model, &ns_config(config), streams)?.ns),
        Algorithm::Ins => plain(run_ns(model, &ns_config(config), streams)?.ins),
        Algorithm::NssmcAdaptive => {
            let o = run_adaptive_nssmc(model, &nssmc_config(config, config.n), streams)?;
            Sampled {
                result: o.result,
                replay: Some(ReplayFile {
                    schedule: LevelSchedule::Thresholds(o.schedule),
                    plan: KernelPlan::Tuned(o.tuning.clone()),
                }),
                tuning: Some(o.tuning),
            }
        }
        Algorithm::TasmcAdaptive => {
            let o = run_adaptive_tasmc(model, &tasmc_config(config, config.n), streams)?;
            Sampled {
                result: o.result,
                replay: Some(ReplayFile {
                    schedule: LevelSchedule::Temperatures(o.schedule),
                    plan: KernelPlan::Tuned(o.tuning.clone()),
                }),
                tuning: Some(o.tuning),
            }
        }
        Algorithm::NssmcFixed | Algorithm::TasmcFixed => {
            let replay = frozen.expect("fixed algorithms carry a frozen schedule");
            let result = match (&replay.schedule, config.algorithm) {
                (LevelSchedule::Thresholds(s), Algorithm::NssmcFixed) => {
                    run_fixed_nssmc(model, config.n, s, &replay.plan, config.scheme, streams)?
                }
                (LevelSchedule::Temperatures(s), Algorithm::TasmcFixed) => {
                    run_fixed_tasmc(model, config.n, s, &replay.plan, config.scheme, streams)?
                }
                _ => {
                    return Err(CliError::Config(format!(
                        "replay schedule does not match algorithm {}",
                        config.algorithm.name()
                    )))
                }
            };
            plain(result)
        }
    })
}

fn write_run(
    config: &ExperimentConfig,
    problem: &Arc<dyn Problem>,
    run: usize,
    seed: u64,
    result: &RunResult,
) -> Result<RunRow, CliError> {
    let out = config.out.as_path();
    let archive = if config.archives {
        let name = format!("archive-{run}.jsonl");
        let mut w = BufWriter::new(File::create(out.join(&name))?);
        result.archive.write_jsonl(&mut w)?;
        w.flush()?;
        name
    } else {
        String::new()
    };
    write_levels(
        &result.levels,
        BufWriter::new(File::create(out.join(format!("levels-{run}.csv")))?),
    )?;
    if config.export_curve && config.algorithm.is_nested() {
        export_diagnostic_curve(
            result,
            BufWriter::new(File::create(out.join(format!("curve-{run}.csv")))?),
        )?;
    }
    let z_ratio = problem
        .log_evidence()
        .map(|lz| (result.log_evidence - lz).exp());
    Ok(RunRow {
        run,
        seed,
        log_z: result.log_evidence,
        z: result.evidence(),
        z_ratio,
        evals: result.evaluations,
        levels: result.levels.len(),
        archive,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
