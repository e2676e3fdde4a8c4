//! Configured, seeded experiments and their artifacts.

pub mod config;
pub mod run;
pub mod tools;

pub use config::{DeltaEff, ExperimentConfig, InitKind, Steps};
pub use run::{
    read_snapshot, read_trajectory, recompute_row, run, run_to_dir, run_with, write_snapshot,
    Artifacts, LoggedStep, RunOutput, Setup, SnapshotMeta, Summary, TrajectoryRow, Violation,
};
pub use tools::{
    check_rip, flow_vs_gd, sweep, verify_derivatives, DerivativeReport, FlowVsGdReport, RipReport,
    SweepEntry,
};
