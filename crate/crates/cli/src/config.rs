//! Experiment configuration: a JSON tree with flag overrides layered on top.

use std::path::{Path, PathBuf};

use nssmc_core::{
    KernelFamily, KernelOptions, ModelSpec, Repeats, ResampleScheme, Termination, TuningConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ns,
    Ins,
    NssmcFixed,
    NssmcAdaptive,
    TasmcFixed,
    TasmcAdaptive,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ns => "ns",
            Algorithm::Ins => "ins",
            Algorithm::NssmcFixed => "nssmc_fixed",
            Algorithm::NssmcAdaptive => "nssmc_adaptive",
            Algorithm::TasmcFixed => "tasmc_fixed",
            Algorithm::TasmcAdaptive => "tasmc_adaptive",
        }
    }

    pub fn is_fixed(self) -> bool {
        matches!(self, Algorithm::NssmcFixed | Algorithm::TasmcFixed)
    }

    pub fn is_nested(self) -> bool {
        !matches!(self, Algorithm::TasmcFixed | Algorithm::TasmcAdaptive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub family: KernelFamily,
    /// Step-scale grid for pilot tuning (SMC) or the single scale used by NS
    /// (first entry).
    pub candidates: Option<Vec<f64>>,
    /// Sweeps per level; `None` picks the sampler default (adaptive for SMC,
    /// ten for NS).
    pub repeats: Option<Repeats>,
    pub options: KernelOptions,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            family: KernelFamily::Rw,
            candidates: None,
            repeats: None,
            options: KernelOptions::default(),
        }
    }
}

impl KernelSection {
    pub fn tuning(&self) -> TuningConfig {
        TuningConfig {
            candidates: self.candidates.clone(),
            repeats: self.repeats.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub algorithm: Algorithm,
    pub n: usize,
    pub rho: f64,
    pub alpha: f64,
    /// `None` uses eps = 1e-2 for NS-SMC and 1e-8 for NS.
    pub termination: Option<Termination>,
    pub kernel: KernelSection,
    pub scheme: ResampleScheme,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    /// Particles in the pilot run of a fixed algorithm (defaults to `n`).
    pub pilot_n: Option<usize>,
    /// Schedule and kernels from an earlier pilot; skips the pilot run.
    pub replay: Option<PathBuf>,
    /// Also write `curve-<run>.csv` for nested samplers.
    pub export_curve: bool,
    /// Write `archive-<run>.jsonl` weighted-sample files.
    pub archives: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::SphereMixture {
                dimension: 10,
                sds: vec![0.1, 0.01],
                weights: vec![0.25, 0.75],
            },
            algorithm: Algorithm::NssmcAdaptive,
            n: 1000,
            rho: 0.5,
            alpha: 0.5,
            termination: None,
            kernel: KernelSection::default(),
            scheme: ResampleScheme::Stratified,
            runs: 1,
            seed: 0,
            out: PathBuf::from("out"),
            workers: None,
            pilot_n: None,
            replay: None,
            export_curve: true,
            archives: true,
        }
    }
}

/// Command-line values that replace keys of the config tree.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algorithm: Option<String>,
    /// A JSON model object or the preset `sphere_mixture`.
    pub model: Option<String>,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Overrides {
    fn apply(&self, tree: &mut Map<String, Value>) -> Result<(), CliError> {
        if let Some(a) = &self.algorithm {
            tree.insert("algorithm".into(), Value::String(a.clone()));
        }
        if let Some(m) = &self.model {
            let model = if m.trim_start().starts_with('{') {
                serde_json::from_str(m).map_err(|e| CliError::Config(format!("--model: {e}")))?
            } else {
                serde_json::json!({ "name": m, "dimension": 10 })
            };
            tree.insert("model".into(), model);
        }
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                tree.insert(key.into(), v);
            }
        };
        set("n", self.n.map(Value::from));
        set("rho", self.rho.map(Value::from));
        set("alpha", self.alpha.map(Value::from));
        set("runs", self.runs.map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("workers", self.workers.map(Value::from));
        set(
            "out",
            self.out
                .as_ref()
                .map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        set(
            "replay",
            self.replay
                .as_ref()
                .map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses a config tree, applies the overrides and validates the result.
    pub fn from_json(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(mut tree) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        overrides.apply(&mut tree)?;
        let config: Self = serde_json::from_value(Value::Object(tree))
            .map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} must lie in (0, 1)", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if let Some(t) = &self.termination {
            if !(0.0..1.0).contains(&t.eps) {
                return bad(format!("termination eps = {} must lie in [0, 1)", t.eps));
            }
            if let Some(f) = t.max_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return bad(format!("max_fraction = {f} must lie in (0, 1]"));
                }
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.pilot_n.is_some_and(|p| p < 2) {
            return bad("pilot_n must be at least 2".into());
        }
        if let Some(c) = &self.kernel.candidates {
            if c.is_empty() || c.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return bad(
                    "kernel candidates must be a non-empty list of positive numbers".into(),
                );
            }
        }
        match self.kernel.repeats {
            Some(Repeats::Fixed(0)) => return bad("fixed repeats must be at least 1".into()),
            Some(Repeats::Adaptive { max, proportion }) => {
                if max == 0 || !(proportion > 0.0 && proportion <= 1.0) {
                    return bad("adaptive repeats need max >= 1 and proportion in (0, 1]".into());
                }
                if matches!(self.algorithm, Algorithm::Ns | Algorithm::Ins) {
                    return bad("nested sampling needs a fixed repeat count".into());
                }
            }
            _ => {}
        }
        if self.replay.is_some() && !self.algorithm.is_fixed() {
            return bad("replay files only apply to fixed algorithms".into());
        }
        let problem = self
            .model
            .build()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        if self.kernel.family == KernelFamily::Exact {
            let probe = problem.sample_constrained_prior(
                &mut nssmc_core::Streams::new(0).derive(nssmc_core::Domain::Init, 0, 0),
                f64::NEG_INFINITY,
                false,
            );
            if probe.is_err() {
                return bad(format!(
                    "model {} has no exact constrained sampler",
                    problem.name()
                ));
            }
        }
        Ok(())
    }

    pub fn pilot_n(&self) -> usize {
        self.pilot_n.unwrap_or(self.n)
    }
}
