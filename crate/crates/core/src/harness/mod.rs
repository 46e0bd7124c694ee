//! Configuration files, run directories, checkpoints and metrics.

mod checkpoint;
mod config;
mod metrics;
mod run;
#[cfg(test)]
mod tests;

pub use checkpoint::{hex, Checkpoint, MAGIC, VERSION};
pub use config::{Config, EnvSection, HarnessSection, ModelSection, TrainerSection, OUTPUT_DIR_ENV};
pub use metrics::{curves, export_curves, read_metrics, CurveRow, MetricsRow, MetricsWriter, HEADER};
pub use run::{
    checkpoint_path, dump_rollout, eval_checkpoint, gradcheck_config, latest_checkpoint, load_policy,
    read_rollout_dump, replay_dump, train, write_rollout_dump, DumpDecomposition, DumpStep, RolloutDump,
    RunSummary, CHECKPOINTS, EVAL_SUMMARY, METRICS, RESOLVED_CONFIG,
};
