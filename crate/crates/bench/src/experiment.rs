use std::fmt;
use std::str::FromStr;

use pagevault_sim::{ClusterConfig, FailureSchedule, SimOutput, Topology};

use crate::maxstable::clients_for;
use crate::workload::Level;
use crate::BenchError;

/// Workers per client used to hold a cluster at its maximum stable load.
/// Every shipped profile saturates well below this (see the sweep tests).
pub const SATURATING_WORKERS: usize = 32;

/// The failure scenarios from the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    RingRepairOn,
    RingRepairOff,
    /// Two region-server kills.
    MasterRegionCase1,
    /// Master and namenode first, then a region server.
    MasterRegionCase2,
    ShardedSameShard,
    ShardedDifferentShards,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::RingRepairOn,
        Preset::RingRepairOff,
        Preset::MasterRegionCase1,
        Preset::MasterRegionCase2,
        Preset::ShardedSameShard,
        Preset::ShardedDifferentShards,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::RingRepairOn => "ring-repair-on",
            Preset::RingRepairOff => "ring-repair-off",
            Preset::MasterRegionCase1 => "master-region-case1",
            Preset::MasterRegionCase2 => "master-region-case2",
            Preset::ShardedSameShard => "sharded-same-shard",
            Preset::ShardedDifferentShards => "sharded-different-shards",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| BenchError::BadSpec(format!("unknown preset {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureExperiment {
    pub cfg: ClusterConfig,
    pub level: Level,
    pub workers: usize,
    pub schedule: FailureSchedule,
    pub duration_s: f64,
}

impl FailureExperiment {
    pub fn preset(p: Preset) -> Self {
        let (topology, schedule, duration_s) = match p {
            Preset::RingRepairOn | Preset::RingRepairOff => {
                (Topology::Ring, "100:node=1,200:node=4", 400.0)
            }
            Preset::MasterRegionCase1 => (
                Topology::MasterRegion,
                "100:regionserver,200:regionserver",
                300.0,
            ),
            Preset::MasterRegionCase2 => (
                Topology::MasterRegion,
                "50:master+namenode,100:regionserver",
                200.0,
            ),
            Preset::ShardedSameShard => (
                Topology::Sharded,
                "100:shard-member=0,200:shard-member=0",
                300.0,
            ),
            Preset::ShardedDifferentShards => (
                Topology::Sharded,
                "100:shard-member=0,200:shard-member=1",
                300.0,
            ),
        };
        let mut cfg = ClusterConfig::profile(topology);
        if p == Preset::RingRepairOff {
            cfg.ring.read_repair_chance = 0.0;
        }
        Self {
            cfg,
            level: Level::Volume,
            workers: SATURATING_WORKERS,
            schedule: schedule.parse().expect("preset schedules parse"),
            duration_s,
        }
    }
}

/// Runs the cluster at saturating load through the kill schedule.
pub fn run_failure_experiment(x: &FailureExperiment, seed: u64) -> Result<SimOutput, BenchError> {
    if x.workers == 0 {
        return Err(BenchError::BadSpec("workers must be positive".into()));
    }
    let clients = clients_for(x.level, 10, x.workers);
    Ok(pagevault_sim::run(
        &x.cfg,
        &clients,
        &x.schedule,
        x.duration_s,
        seed,
    )?)
}
