//! Configuration, persistence and the end-to-end experiments: the staged
//! pipeline, the α sweep, the personalization study and the exact
//! mutual-information study on a tiny world.

mod artifacts;
mod config;
pub mod mi;
mod personalize;
mod pipeline;
mod sweep;

pub use artifacts::{MetricRow, RunArtifacts, Table};
pub use config::{
    ExperimentConfig, ObfuscationSettings, PersonaCounts, PersonalizationSettings, CONFIG_VERSION,
};
pub use mi::{mi_tiny_world_study, MiReport, TinyWorldConfig};
pub use personalize::{personalization_study, sensitive_classes};
pub use pipeline::{
    paired_t_p_value, run_pipeline, EvalRecord, Evaluation, ObfuscatorSuite, PersonaSplit,
    Pipeline, RolloutSeeds, Stage, OBFUSCATORS, SESSION_OBFUSCATED, SESSION_USER,
};
pub use sweep::{sweep_alpha, sweep_alphas};
