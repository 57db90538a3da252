use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::SimError;

/// Every profile's rates are Table-3 maxima times this factor, which keeps
/// event counts small enough for desk-scale runs.
pub const GLOBAL_SCALE: f64 = 0.25;

/// Measured maximum stable volume-level and page-level read qps.
pub const REFERENCE_RING: (f64, f64) = (1665.0, 8560.0);
pub const REFERENCE_MASTER_REGION: (f64, f64) = (1040.0, 7402.0);
pub const REFERENCE_SHARDED: (f64, f64) = (2166.0, 9373.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Ring,
    MasterRegion,
    Sharded,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Ring, Topology::MasterRegion, Topology::Sharded];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Ring => "ring",
            Topology::MasterRegion => "master_region",
            Topology::Sharded => "sharded",
        }
    }

    /// Table-3 (volume, page) maxima for the system this topology stands for.
    pub fn reference_qps(self) -> (f64, f64) {
        match self {
            Topology::Ring => REFERENCE_RING,
            Topology::MasterRegion => REFERENCE_MASTER_REGION,
            Topology::Sharded => REFERENCE_SHARDED,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(Topology::Ring),
            "master_region" => Ok(Topology::MasterRegion),
            "sharded" => Ok(Topology::Sharded),
            _ => Err(SimError::Config(format!("unknown topology {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadPreference {
    Primary,
    Nearest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingKnobs {
    pub read_repair_chance: f64,
    /// Cost of one replica's repair read relative to the request itself.
    pub repair_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasterRegionKnobs {
    pub heartbeat_timeout_s: f64,
    pub region_count: u32,
    pub meta_cache: bool,
    pub meta_refetch_s: f64,
    pub reassign_delay_s: f64,
    pub namenode_promotion_s: f64,
    pub master_retry_s: f64,
    /// Extra cost fraction for regions served away from their data.
    pub locality_penalty: f64,
    /// Aggregate client-side processing capacity as a fraction of the
    /// cluster's service capacity; 0 disables the client stage.
    pub client_ceiling: f64,
    pub retry_budget_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardedKnobs {
    pub shards: usize,
    pub replica_set_size: usize,
    pub read_preference: ReadPreference,
    /// Fraction of a request's cost spent in the router; the rest is
    /// spent on the shard member.
    pub router_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub topology: Topology,
    pub nodes: usize,
    pub replication_factor: usize,
    /// Requests per second one node completes at volume-level cost 1.
    pub service_rate: f64,
    pub net_base_ms: f64,
    pub net_jitter_ms: f64,
    /// Cost of a 10-field page request relative to a volume request.
    pub page_cost: f64,
    pub keys: u32,
    pub window_s: f64,
    pub error_backoff_ms: f64,
    pub ring: RingKnobs,
    pub master_region: MasterRegionKnobs,
    pub sharded: ShardedKnobs,
}

impl ClusterConfig {
    /// Shipped calibrated profile for a topology.
    pub fn profile(topology: Topology) -> Self {
        let ring = RingKnobs {
            read_repair_chance: 0.1,
            repair_weight: 8.0,
        };
        let master_region = MasterRegionKnobs {
            heartbeat_timeout_s: 10.0,
            region_count: 60,
            meta_cache: true,
            meta_refetch_s: 1.0,
            reassign_delay_s: 2.0,
            namenode_promotion_s: 5.0,
            master_retry_s: 2.0,
            locality_penalty: 0.1,
            client_ceiling: 0.76,
            retry_budget_s: 1200.0,
        };
        let sharded = ShardedKnobs {
            shards: 2,
            replica_set_size: 3,
            read_preference: ReadPreference::Nearest,
            router_cost: 0.6,
        };
        let mut cfg = Self {
            topology,
            nodes: 6,
            replication_factor: 3,
            service_rate: 1.0,
            net_base_ms: 0.25,
            net_jitter_ms: 0.1,
            page_cost: 1.0,
            keys: 180_000,
            window_s: 5.0,
            error_backoff_ms: 10.0,
            ring,
            master_region,
            sharded,
        };
        let (volume_qps, page_qps) = topology.reference_qps();
        cfg.page_cost = volume_qps / page_qps;
        let work_per_request = cfg.capacity_factor();
        cfg.service_rate = volume_qps * GLOBAL_SCALE / work_per_request;
        cfg
    }

    /// Saturated cluster qps per unit of node service rate, before any
    /// failure, for volume-level requests.
    pub fn capacity_factor(&self) -> f64 {
        let n = self.nodes as f64;
        match self.topology {
            Topology::Ring => {
                let live = self.replication_factor.min(self.nodes) as f64;
                n / (1.0 + self.ring.read_repair_chance * self.ring.repair_weight * (live - 1.0))
            }
            Topology::MasterRegion if self.master_region.client_ceiling > 0.0 => {
                n * self.master_region.client_ceiling.min(1.0)
            }
            Topology::MasterRegion => n,
            Topology::Sharded => match self.sharded.read_preference {
                ReadPreference::Nearest => n,
                // storage work lands on primaries only
                ReadPreference::Primary => {
                    n.min(self.sharded.shards as f64 / (1.0 - self.sharded.router_cost))
                }
            },
        }
    }

    /// Expected saturated volume-level qps of the healthy cluster.
    pub fn expected_capacity(&self) -> f64 {
        self.service_rate * self.capacity_factor()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.nodes == 0 || self.nodes > u16::MAX as usize {
            return bad("nodes must be in 1..=65535");
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return bad("service_rate must be positive");
        }
        if !(self.page_cost > 0.0) || !(self.window_s > 0.0) {
            return bad("page_cost and window_s must be positive");
        }
        if self.net_base_ms < 0.0 || self.net_jitter_ms < 0.0 || self.error_backoff_ms <= 0.0 {
            return bad("network delays must be non-negative and error_backoff_ms positive");
        }
        if self.keys == 0 {
            return bad("keys must be positive");
        }
        match self.topology {
            Topology::Ring => {
                if self.replication_factor == 0 || self.replication_factor > self.nodes {
                    return bad("replication_factor must be in 1..=nodes");
                }
                if !(0.0..=1.0).contains(&self.ring.read_repair_chance)
                    || self.ring.repair_weight < 0.0
                {
                    return bad(
                        "read_repair_chance must be in [0,1] and repair_weight non-negative",
                    );
                }
            }
            Topology::MasterRegion => {
                let m = &self.master_region;
                if self.nodes < 2 {
                    return bad("master_region needs at least 2 nodes (master and backup)");
                }
                if m.region_count == 0 || m.region_count > self.keys {
                    return bad("region_count must be in 1..=keys");
                }
                if self.replication_factor > self.nodes {
                    return bad("replication_factor must not exceed nodes");
                }
                let times = [
                    m.heartbeat_timeout_s,
                    m.meta_refetch_s,
                    m.reassign_delay_s,
                    m.namenode_promotion_s,
                    m.master_retry_s,
                    m.retry_budget_s,
                ];
                if times.iter().any(|t| !(*t >= 0.0))
                    || m.locality_penalty < 0.0
                    || m.client_ceiling < 0.0
                {
                    return bad("master_region times and knobs must be non-negative");
                }
            }
            Topology::Sharded => {
                let s = &self.sharded;
                if s.shards == 0
                    || s.replica_set_size == 0
                    || s.shards * s.replica_set_size != self.nodes
                {
                    return bad("shards * replica_set_size must equal nodes");
                }
                if self.replication_factor > s.replica_set_size {
                    return bad("replication_factor must not exceed replica_set_size");
                }
                if !(0.0..1.0).contains(&s.router_cost) {
                    return bad("router_cost must be in [0,1)");
                }
            }
        }
        Ok(())
    }

    /// Applies and removes every cluster key found in `map`; other keys
    /// are left for the caller.
    pub fn apply(&mut self, map: &mut BTreeMap<String, String>) -> Result<(), SimError> {
        fn take<T: FromStr>(
            map: &mut BTreeMap<String, String>,
            key: &str,
            slot: &mut T,
        ) -> Result<(), SimError> {
            if let Some(v) = map.remove(key) {
                *slot = v
                    .parse()
                    .map_err(|_| SimError::Config(format!("{key}: cannot parse {v:?}")))?;
            }
            Ok(())
        }
        take(map, "nodes", &mut self.nodes)?;
        take(map, "replication_factor", &mut self.replication_factor)?;
        take(map, "service_rate", &mut self.service_rate)?;
        take(map, "net_base_ms", &mut self.net_base_ms)?;
        take(map, "net_jitter_ms", &mut self.net_jitter_ms)?;
        take(map, "page_cost", &mut self.page_cost)?;
        take(map, "keys", &mut self.keys)?;
        take(map, "window_s", &mut self.window_s)?;
        take(map, "error_backoff_ms", &mut self.error_backoff_ms)?;
        if let Some(c) = map.remove("consistency") {
            if !c.eq_ignore_ascii_case("one") {
                return Err(SimError::Config(format!(
                    "consistency {c:?}: only ONE is modeled"
                )));
            }
        }
        take(map, "read_repair_chance", &mut self.ring.read_repair_chance)?;
        take(map, "repair_weight", &mut self.ring.repair_weight)?;
        let m = &mut self.master_region;
        take(map, "heartbeat_timeout_s", &mut m.heartbeat_timeout_s)?;
        take(map, "region_count", &mut m.region_count)?;
        take(map, "meta_cache", &mut m.meta_cache)?;
        take(map, "meta_refetch_s", &mut m.meta_refetch_s)?;
        take(map, "reassign_delay_s", &mut m.reassign_delay_s)?;
        take(map, "namenode_promotion_s", &mut m.namenode_promotion_s)?;
        take(map, "master_retry_s", &mut m.master_retry_s)?;
        take(map, "locality_penalty", &mut m.locality_penalty)?;
        take(map, "client_ceiling", &mut m.client_ceiling)?;
        take(map, "retry_budget_s", &mut m.retry_budget_s)?;
        let s = &mut self.sharded;
        take(map, "shards", &mut s.shards)?;
        take(map, "replica_set_size", &mut s.replica_set_size)?;
        take(map, "router_cost", &mut s.router_cost)?;
        if let Some(p) = map.remove("read_preference") {
            s.read_preference = match p.as_str() {
                "primary" => ReadPreference::Primary,
                "nearest" => ReadPreference::Nearest,
                _ => return Err(SimError::Config(format!("read_preference {p:?}"))),
            };
        }
        Ok(())
    }

    /// Profile for `topology` (or the map's `topology` key) with the map's
    /// overrides applied.
    pub fn from_map(
        map: &mut BTreeMap<String, String>,
        topology: Option<Topology>,
    ) -> Result<Self, SimError> {
        let topology = match map.remove("topology") {
            Some(t) => t.parse()?,
            None => topology.ok_or_else(|| SimError::Config("topology not set".into()))?,
        };
        let mut cfg = Self::profile(topology);
        cfg.apply(map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key = value` lines in a stable order; parsing them back gives an
    /// identical config.
    pub fn echo(&self) -> Vec<(String, String)> {
        let m = &self.master_region;
        let s = &self.sharded;
        let pref = match s.read_preference {
            ReadPreference::Primary => "primary",
            ReadPreference::Nearest => "nearest",
        };
        let mut out = vec![
            ("topology", self.topology.to_string()),
            ("nodes", self.nodes.to_string()),
            ("replication_factor", self.replication_factor.to_string()),
            ("service_rate", self.service_rate.to_string()),
            ("net_base_ms", self.net_base_ms.to_string()),
            ("net_jitter_ms", self.net_jitter_ms.to_string()),
            ("page_cost", self.page_cost.to_string()),
            ("keys", self.keys.to_string()),
            ("window_s", self.window_s.to_string()),
            ("error_backoff_ms", self.error_backoff_ms.to_string()),
        ];
        match self.topology {
            Topology::Ring => out.extend([
                (
                    "read_repair_chance",
                    self.ring.read_repair_chance.to_string(),
                ),
                ("repair_weight", self.ring.repair_weight.to_string()),
            ]),
            Topology::MasterRegion => out.extend([
                ("heartbeat_timeout_s", m.heartbeat_timeout_s.to_string()),
                ("region_count", m.region_count.to_string()),
                ("meta_cache", m.meta_cache.to_string()),
                ("meta_refetch_s", m.meta_refetch_s.to_string()),
                ("reassign_delay_s", m.reassign_delay_s.to_string()),
                ("namenode_promotion_s", m.namenode_promotion_s.to_string()),
                ("master_retry_s", m.master_retry_s.to_string()),
                ("locality_penalty", m.locality_penalty.to_string()),
                ("client_ceiling", m.client_ceiling.to_string()),
                ("retry_budget_s", m.retry_budget_s.to_string()),
            ]),
            Topology::Sharded => out.extend([
                ("shards", s.shards.to_string()),
                ("replica_set_size", s.replica_set_size.to_string()),
                ("read_preference", pref.to_string()),
                ("router_cost", s.router_cost.to_string()),
            ]),
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Parses `key = value` text. `#` starts a comment; blank lines are
/// skipped; a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, SimError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(SimError::Config(format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(SimError::Config(format!(
                "line {}: duplicate key {k}",
                n + 1
            )));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_hit_scaled_reference() {
        for t in Topology::ALL {
            let cfg = ClusterConfig::profile(t);
            cfg.validate().unwrap();
            let (v, p) = t.reference_qps();
            assert!((cfg.expected_capacity() - v * GLOBAL_SCALE).abs() < 1e-9);
            assert!((cfg.page_cost - v / p).abs() < 1e-12);
        }
    }

    #[test]
    fn kv_round_trip_through_echo() {
        for t in Topology::ALL {
            let mut cfg = ClusterConfig::profile(t);
            cfg.net_jitter_ms = 0.3;
            let text: String = cfg
                .echo()
                .iter()
                .map(|(k, v)| format!("{k} = {v}\n"))
                .collect();
            let mut map = parse_kv(&text).unwrap();
            let back = ClusterConfig::from_map(&mut map, None).unwrap();
            assert!(map.is_empty());
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("novalue").is_err());
        let mut m = parse_kv("topology = ring\nreplication_factor = 9").unwrap();
        assert!(ClusterConfig::from_map(&mut m, None).is_err());
        let mut m = parse_kv("topology = sharded\nshards = 4").unwrap();
        assert!(ClusterConfig::from_map(&mut m, None).is_err());
        let mut m = parse_kv("consistency = quorum").unwrap();
        assert!(ClusterConfig::from_map(&mut m, Some(Topology::Ring)).is_err());
        let mut m = parse_kv("service_rate = -3 # nope").unwrap();
        assert!(ClusterConfig::from_map(&mut m, Some(Topology::Ring)).is_err());
    }
}
