//! Discrete-event simulator of three replicated read-serving cluster
//! architectures with failure injection.
//!
//! A run is a single-threaded event loop over virtual time, so identical
//! inputs and seed give identical series and event logs.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod engine;
pub mod placement;
pub mod schedule;
pub mod series;

pub use config::{parse_kv, ClusterConfig, ReadPreference, Topology};
pub use engine::{
    run, ClientMode, ClientSpec, ClientStats, EventKind, JobKind, JobRecord, NodeStats, RunStats,
    SimEvent, SimOutput, Simulation,
};
pub use schedule::{Failure, FailureSchedule, Target};
pub use series::{measure, ThroughputSeries, Window};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("failure schedule: {0}")]
    Schedule(String),
    #[error("clients: {0}")]
    Clients(String),
}
