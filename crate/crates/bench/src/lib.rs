//! Load generation and measurement against the simulator or a live store,
//! plus the `pagevault` command line.

pub mod cli;
pub mod experiment;
pub mod maxstable;
pub mod workload;

pub use experiment::{run_failure_experiment, FailureExperiment, Preset, SATURATING_WORKERS};
pub use maxstable::{
    find_max_stable, pick_max_stable, BenchTarget, LiveTarget, RunReport, SimTarget, SweepPoint,
};
pub use workload::{gen_workload, BenchRequest, Level, WorkloadSpec};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("workload needs at least one volume id")]
    EmptyIds,
    #[error("bad workload: {0}")]
    BadSpec(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Sim(#[from] pagevault_sim::SimError),
}
