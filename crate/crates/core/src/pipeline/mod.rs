//! End-to-end runs: configuration, training, evaluation, sweeps and
//! artifact export.

mod artifacts;
mod config;
mod sweep;
mod train;

pub use artifacts::{
    ensure_writable_dir, export_artifacts, export_scenes, foreground_heat, scene_files,
    write_trace_csv,
};
pub use config::{RunConfig, KEYS};
pub use sweep::{
    mean_std, summarize, sweep, write_sweep_csv, SweepConfig, SweepField, SweepRun, SweepSummary,
};
pub use train::{evaluate, train, Dataset, EpochStats, Model, TrainOutcome};
