use std::fmt;
use std::str::FromStr;

use crate::config::{ClusterConfig, Topology};
use crate::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Node(usize),
    /// A random live node.
    AnyNode,
    /// The active master and primary namenode processes only.
    MasterNamenode,
    /// A random live node that runs only a region server and data node.
    RegionServer,
    /// A random live member of the given shard, or of any shard.
    ShardMember(Option<usize>),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(n) => write!(f, "node={n}"),
            Target::AnyNode => write!(f, "any"),
            Target::MasterNamenode => write!(f, "master+namenode"),
            Target::RegionServer => write!(f, "regionserver"),
            Target::ShardMember(None) => write!(f, "shard-member"),
            Target::ShardMember(Some(s)) => write!(f, "shard-member={s}"),
        }
    }
}

impl FromStr for Target {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::Schedule(format!("unknown failure target {s:?}"));
        let (name, arg) = match s.split_once('=') {
            Some((n, a)) => (n, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (name, arg) {
            ("node", Some(n)) => Ok(Target::Node(n)),
            ("any", None) => Ok(Target::AnyNode),
            ("master+namenode", None) => Ok(Target::MasterNamenode),
            ("regionserver", None) => Ok(Target::RegionServer),
            ("shard-member", shard) => Ok(Target::ShardMember(shard)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Failure {
    pub at_s: f64,
    pub target: Target,
}

/// Kills in strictly increasing time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FailureSchedule {
    failures: Vec<Failure>,
}

impl FailureSchedule {
    pub fn new(failures: Vec<Failure>) -> Result<Self, SimError> {
        for (i, f) in failures.iter().enumerate() {
            if !(f.at_s >= 0.0 && f.at_s.is_finite()) {
                return Err(SimError::Schedule(format!(
                    "failure time {} is not a non-negative number",
                    f.at_s
                )));
            }
            if i > 0 && f.at_s <= failures[i - 1].at_s {
                return Err(SimError::Schedule(
                    "failure times must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { failures })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn failures(&self) -> &[Failure] {
        &self.failures
    }

    /// Checks every target makes sense for the cluster.
    pub fn check(&self, cfg: &ClusterConfig) -> Result<(), SimError> {
        for f in &self.failures {
            let ok = match f.target {
                Target::Node(n) => n < cfg.nodes,
                Target::AnyNode => true,
                Target::MasterNamenode | Target::RegionServer => {
                    cfg.topology == Topology::MasterRegion
                }
                Target::ShardMember(s) => {
                    cfg.topology == Topology::Sharded && s.is_none_or(|s| s < cfg.sharded.shards)
                }
            };
            if !ok {
                return Err(SimError::Schedule(format!(
                    "target {} is not valid for a {} cluster of {} nodes",
                    f.target, cfg.topology, cfg.nodes
                )));
            }
        }
        Ok(())
    }
}

/// Comma-separated `<seconds>:<target>` items, e.g.
/// `50:master+namenode,100:regionserver` or `100:node=2,200:node=4`.
impl FromStr for FailureSchedule {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (t, target) = item.split_once(':').ok_or_else(|| {
                SimError::Schedule(format!("expected <seconds>:<target>, got {item:?}"))
            })?;
            let at_s = t
                .trim()
                .parse()
                .map_err(|_| SimError::Schedule(format!("bad failure time {t:?}")))?;
            out.push(Failure {
                at_s,
                target: target.trim().parse()?,
            });
        }
        Self::new(out)
    }
}

impl fmt::Display for FailureSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.failures.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", x.at_s, x.target)?;
        }
        Ok(())
    }
}
