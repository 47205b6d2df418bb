//! CSV exports of per-level tables and the phase-transition diagnostic.

use std::io::Write;

use nssmc_core::run::CurvePoint;
use nssmc_core::{LevelRecord, RunResult};

use crate::error::CliError;

/// Writes the `(log p, log L)` rows of a nested-sampling or NS-SMC run. For
/// NS-SMC `log p` is the running estimate of the prior mass above each
/// threshold.
pub fn export_diagnostic_curve<W: Write>(run: &RunResult, out: W) -> Result<(), CliError> {
    write_curve(run.diagnostic_curve(), out)
}

pub fn write_curve<W: Write>(curve: &[CurvePoint], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    if curve.is_empty() {
        w.write_record(["log_p", "log_like"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_levels<W: Write>(levels: &[LevelRecord], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for l in levels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}
