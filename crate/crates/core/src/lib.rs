//! Nested sampling, nested sampling via SMC and temperature-annealed SMC.

pub mod covariance;
pub mod error;
pub mod kernels;
pub mod model;
pub mod mutation;
pub mod ns;
pub mod nssmc;
pub mod particles;
pub mod resampling;
pub mod rng;
pub mod run;
pub mod tasmc;
pub mod tuning;

pub use covariance::Covariance;
pub use error::{Error, Result};
pub use kernels::{Constraint, KernelConfig, KernelFamily, KernelOptions, MutationTarget};
pub use model::{ModelSpec, Problem, TargetModel};
pub use ns::{run_ns, CompressionMode, NsConfig, NsOutcome};
pub use nssmc::{run_adaptive_nssmc, run_fixed_nssmc, AdaptiveNssmcConfig, Termination};
pub use particles::{ArchiveRecord, Particle, ParticleCloud, WeightedArchive};
pub use resampling::ResampleScheme;
pub use rng::{Domain, SimRng, Streams};
pub use run::{
    LevelRecord, LevelSchedule, Provenance, RunResult, TemperatureSchedule, ThresholdSchedule,
};
pub use tasmc::{run_adaptive_tasmc, run_fixed_tasmc, AdaptiveTasmcConfig};
pub use tuning::{KernelPlan, Repeats, TuningConfig, TuningReport};
