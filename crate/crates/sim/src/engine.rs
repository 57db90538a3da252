use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::config::{ClusterConfig, ReadPreference, Topology};
use crate::placement::{key_name, region_of, ring_replicas, shard_of, Ring};
use crate::schedule::{FailureSchedule, Target};
use crate::series::ThroughputSeries;
use crate::SimError;

const NS: f64 = 1e9;

/// Nodes 0 and 1 host the active and backup master (and the primary and
/// secondary namenode) in the master/region topology.
const MASTER_HOST: u32 = 0;
const BACKUP_HOST: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientMode {
    Volume,
    /// Page-level reads naming `fields` page sequences each.
    Page {
        fields: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientSpec {
    pub mode: ClientMode,
    /// Closed-loop workers, each with at most one outstanding request.
    pub workers: usize,
}

impl ClientSpec {
    pub fn volume(workers: usize) -> Self {
        Self {
            mode: ClientMode::Volume,
            workers,
        }
    }

    pub fn page(workers: usize) -> Self {
        Self {
            mode: ClientMode::Page { fields: 10 },
            workers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Kill,
    RoleKill,
    KillSkipped,
    ClientError,
    ZkExpired,
    RegionsReassigned,
    ReassignmentBlocked,
    CacheInvalidation,
    BackupMasterActivating,
    BackupMasterCrashed,
    NamenodePromoted,
    MasterActive,
    Retry,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Kill => "kill",
            EventKind::RoleKill => "role-kill",
            EventKind::KillSkipped => "kill-skipped",
            EventKind::ClientError => "client-error",
            EventKind::ZkExpired => "zk-expired",
            EventKind::RegionsReassigned => "regions-reassigned",
            EventKind::ReassignmentBlocked => "reassignment-blocked",
            EventKind::CacheInvalidation => "cache-invalidation",
            EventKind::BackupMasterActivating => "backup-master-activating",
            EventKind::BackupMasterCrashed => "backup-master-crashed",
            EventKind::NamenodePromoted => "namenode-promoted",
            EventKind::MasterActive => "master-active",
            EventKind::Retry => "retry",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent {
    pub t_ns: u64,
    pub kind: EventKind,
    pub node: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JobKind {
    Read,
    Repair,
    Route,
    Store,
    /// Client-side processing of a reply.
    Client,
}

/// One unit of service work done by a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JobRecord {
    pub start_ns: u64,
    pub end_ns: u64,
    pub node: usize,
    /// Serial number of the request the work belongs to.
    pub request: u64,
    pub kind: JobKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeStats {
    pub served: u64,
    pub work: f64,
    pub last_done_ns: Option<u64>,
    pub killed_at_ns: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub issued: u64,
    pub completed: u64,
    pub errored: u64,
    pub in_flight: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub issued: u64,
    pub completed: u64,
    pub errored: u64,
    pub in_flight: u64,
    /// Reads that triggered read repair.
    pub repaired: u64,
    pub meta_lookups: u64,
    pub nodes: Vec<NodeStats>,
    pub clients: Vec<ClientStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub series: ThroughputSeries,
    pub events: Vec<SimEvent>,
    pub stats: RunStats,
    /// Empty unless job tracing was enabled.
    pub jobs: Vec<JobRecord>,
}

impl SimOutput {
    /// The event log as `t,type,node,detail` CSV with a header row.
    pub fn events_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "type", "node", "detail"])
            .expect("in-memory write");
        for e in &self.events {
            let node = e.node.map(|n| n.to_string()).unwrap_or_default();
            let t = format!("{:.6}", e.t_ns as f64 / NS);
            w.write_record([
                t.as_str(),
                e.kind.as_str(),
                node.as_str(),
                e.detail.as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Runs one simulation without job tracing.
pub fn run(
    cfg: &ClusterConfig,
    clients: &[ClientSpec],
    schedule: &FailureSchedule,
    duration_s: f64,
    seed: u64,
) -> Result<SimOutput, SimError> {
    Simulation::new(cfg, clients, schedule, duration_s, seed)?.run()
}

/// A validated simulation, ready to run.
pub struct Simulation {
    cfg: ClusterConfig,
    clients: Vec<ClientSpec>,
    schedule: FailureSchedule,
    duration_s: f64,
    seed: u64,
    trace_jobs: bool,
}

impl Simulation {
    pub fn new(
        cfg: &ClusterConfig,
        clients: &[ClientSpec],
        schedule: &FailureSchedule,
        duration_s: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        schedule.check(cfg)?;
        if clients.is_empty() || clients.iter().all(|c| c.workers == 0) {
            return Err(SimError::Clients("at least one worker is required".into()));
        }
        if clients
            .iter()
            .any(|c| c.mode == ClientMode::Page { fields: 0 })
        {
            return Err(SimError::Clients(
                "page-mode requests need at least one field".into(),
            ));
        }
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(SimError::Config("duration must be positive".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            clients: clients.to_vec(),
            schedule: schedule.clone(),
            duration_s,
            seed,
            trace_jobs: false,
        })
    }

    /// Records every completed unit of node work in `SimOutput::jobs`.
    pub fn trace_jobs(mut self, on: bool) -> Self {
        self.trace_jobs = on;
        self
    }

    pub fn run(self) -> Result<SimOutput, SimError> {
        let mut engine = Engine::new(&self);
        engine.start(&self.schedule);
        engine.run_until((self.duration_s * NS) as u64, &self.schedule);
        Ok(engine.finish())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ReqId {
    idx: u32,
    gen: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Sent,
    Parked,
    Replying,
}

#[derive(Clone, Debug)]
struct Request {
    gen: u32,
    live: bool,
    serial: u64,
    worker: u32,
    key: u32,
    cost: f64,
    /// Serving node: coordinator, region server or shard member.
    node: u32,
    router: u32,
    pending: u32,
    phase: Phase,
}

#[derive(Clone, Copy, Debug)]
struct Job {
    req: ReqId,
    cost: f64,
    kind: JobKind,
}

struct Station {
    alive: bool,
    epoch: u32,
    rate: f64,
    queue: VecDeque<Job>,
    busy: Option<(Job, u64)>,
    outstanding: u32,
    stats: NodeStats,
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    Issue(u32),
    Arrive(u32, Job),
    Done(u32, u32),
    Reply(ReqId),
    Fail(usize),
    ZkExpire(u32),
    Reassign(u32),
    NamenodePromoted,
    BackupGiveUp,
    Refetch(u32),
    Expire(ReqId),
}

struct Scheduled {
    t: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.seq) == (other.t, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

struct Client {
    keys: Vec<u32>,
    cursor: usize,
    cost: f64,
    meta: Vec<u32>,
    parked: Vec<ReqId>,
    refetch_pending: bool,
    stats: ClientStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MasterPhase {
    Active(u32),
    FailingOver,
    Down,
}

struct MasterRegion {
    /// Authoritative region assignment.
    truth: Vec<u32>,
    moved: Vec<bool>,
    phase: MasterPhase,
    namenode_promoted: bool,
    blocked: Vec<u32>,
}

struct Engine {
    cfg: ClusterConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Scheduled>,
    stations: Vec<Station>,
    nodes: u32,
    workers: Vec<u32>,
    clients: Vec<Client>,
    reqs: Vec<Request>,
    free: Vec<u32>,
    serial: u64,
    replicas: Vec<u32>,
    shards: Vec<u8>,
    mr: Option<MasterRegion>,
    client_stage: bool,
    completions: Vec<u64>,
    errors: Vec<u64>,
    events: Vec<SimEvent>,
    jobs: Option<Vec<JobRecord>>,
    repaired: u64,
    meta_lookups: u64,
}

impl Engine {
    fn new(sim: &Simulation) -> Self {
        let cfg = sim.cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
        let n = cfg.nodes as u32;

        let replicas = if cfg.topology == Topology::Ring {
            let ring = Ring::even(cfg.nodes);
            (0..cfg.keys)
                .flat_map(|k| ring_replicas(&key_name(k), &ring, cfg.replication_factor))
                .map(|r| r as u32)
                .collect()
        } else {
            Vec::new()
        };
        let shards = if cfg.topology == Topology::Sharded {
            (0..cfg.keys)
                .map(|k| shard_of(&key_name(k), cfg.sharded.shards) as u8)
                .collect()
        } else {
            Vec::new()
        };
        let mr = (cfg.topology == Topology::MasterRegion).then(|| {
            let regions = cfg.master_region.region_count as u64;
            MasterRegion {
                truth: (0..regions)
                    .map(|r| (r * n as u64 / regions) as u32)
                    .collect(),
                moved: vec![false; regions as usize],
                phase: MasterPhase::Active(MASTER_HOST),
                namenode_promoted: false,
                blocked: Vec::new(),
            }
        });
        let client_stage = mr.is_some() && cfg.master_region.client_ceiling > 0.0;

        let mut stations: Vec<Station> = (0..n).map(|_| Station::new(cfg.service_rate)).collect();
        if client_stage {
            let rate = cfg.master_region.client_ceiling * cfg.nodes as f64 * cfg.service_rate
                / sim.clients.len() as f64;
            stations.extend(sim.clients.iter().map(|_| Station::new(rate)));
        }

        let mut clients = Vec::new();
        let mut workers = Vec::new();
        for (i, spec) in sim.clients.iter().enumerate() {
            let mut keys: Vec<u32> = (0..cfg.keys).collect();
            keys.shuffle(&mut rng);
            let cost = match spec.mode {
                ClientMode::Volume => 1.0,
                ClientMode::Page { fields } => cfg.page_cost * fields as f64 / 10.0,
            };
            clients.push(Client {
                keys,
                cursor: 0,
                cost,
                meta: mr.as_ref().map(|m| m.truth.clone()).unwrap_or_default(),
                parked: Vec::new(),
                refetch_pending: false,
                stats: ClientStats::default(),
            });
            workers.extend(std::iter::repeat_n(i as u32, spec.workers));
        }

        let windows = (sim.duration_s / cfg.window_s).ceil() as usize;
        Self {
            rng,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            stations,
            nodes: n,
            workers,
            clients,
            reqs: Vec::new(),
            free: Vec::new(),
            serial: 0,
            replicas,
            shards,
            mr,
            client_stage,
            completions: vec![0; windows],
            errors: vec![0; windows],
            events: Vec::new(),
            jobs: sim.trace_jobs.then(Vec::new),
            repaired: 0,
            meta_lookups: 0,
            cfg,
        }
    }

    fn start(&mut self, schedule: &FailureSchedule) {
        for (i, f) in schedule.failures().iter().enumerate() {
            self.at((f.at_s * NS) as u64, Ev::Fail(i));
        }
        for w in 0..self.workers.len() as u32 {
            self.at(0, Ev::Issue(w));
        }
    }

    fn run_until(&mut self, end: u64, schedule: &FailureSchedule) {
        while let Some(top) = self.heap.peek() {
            if top.t >= end {
                break;
            }
            let Scheduled { t, ev, .. } = self.heap.pop().unwrap();
            self.now = t;
            match ev {
                Ev::Issue(w) => self.issue(w),
                Ev::Arrive(s, job) => self.arrive(s, job),
                Ev::Done(s, epoch) => self.done(s, epoch),
                Ev::Reply(r) => {
                    if self.current(r) {
                        self.complete(r)
                    }
                }
                Ev::Fail(i) => self.inject(schedule.failures()[i].target),
                Ev::ZkExpire(n) => self.zk_expire(n),
                Ev::Reassign(n) => self.reassign(n),
                Ev::NamenodePromoted => self.namenode_promoted(),
                Ev::BackupGiveUp => self.backup_give_up(),
                Ev::Refetch(c) => self.refetch(c),
                Ev::Expire(r) => self.expire(r),
            }
        }
    }

    fn finish(mut self) -> SimOutput {
        let live: Vec<u32> = self
            .reqs
            .iter()
            .filter(|r| r.live)
            .map(|r| r.worker)
            .collect();
        for w in live {
            self.clients[self.workers[w as usize] as usize]
                .stats
                .in_flight += 1;
        }
        let clients: Vec<ClientStats> = self.clients.iter().map(|c| c.stats.clone()).collect();
        let sum = |f: fn(&ClientStats) -> u64| clients.iter().map(f).sum();
        let stats = RunStats {
            issued: sum(|c| c.issued),
            completed: sum(|c| c.completed),
            errored: sum(|c| c.errored),
            in_flight: sum(|c| c.in_flight),
            repaired: self.repaired,
            meta_lookups: self.meta_lookups,
            nodes: self.stations[..self.nodes as usize]
                .iter()
                .map(|s| s.stats.clone())
                .collect(),
            clients,
        };
        SimOutput {
            series: ThroughputSeries::from_counts(
                self.cfg.window_s,
                &self.completions,
                &self.errors,
            ),
            events: self.events,
            stats,
            jobs: self.jobs.unwrap_or_default(),
        }
    }

    fn at(&mut self, t: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled {
            t,
            seq: self.seq,
            ev,
        });
    }

    fn after_s(&mut self, secs: f64, ev: Ev) {
        self.at(self.now + (secs * NS) as u64, ev);
    }

    fn net_delay(&mut self) -> u64 {
        let x: f64 = Exp1.sample(&mut self.rng);
        ((self.cfg.net_base_ms + x * self.cfg.net_jitter_ms) * 1e6) as u64
    }

    fn log(&mut self, kind: EventKind, node: Option<u32>, detail: impl Into<String>) {
        self.events.push(SimEvent {
            t_ns: self.now,
            kind,
            node: node.map(|n| n as usize),
            detail: detail.into(),
        });
    }

    fn window(&self) -> usize {
        ((self.now as f64 / NS / self.cfg.window_s) as usize).min(self.completions.len() - 1)
    }

    // ---- requests ----

    fn current(&self, r: ReqId) -> bool {
        let q = &self.reqs[r.idx as usize];
        q.live && q.gen == r.gen
    }

    fn req(&mut self, r: ReqId) -> &mut Request {
        &mut self.reqs[r.idx as usize]
    }

    fn client_of(&self, r: ReqId) -> usize {
        self.workers[self.reqs[r.idx as usize].worker as usize] as usize
    }

    fn issue(&mut self, worker: u32) {
        let c = self.workers[worker as usize] as usize;
        let client = &mut self.clients[c];
        let key = client.keys[client.cursor];
        client.cursor = (client.cursor + 1) % client.keys.len();
        client.stats.issued += 1;
        let cost = client.cost;
        self.serial += 1;
        let fresh = Request {
            gen: 0,
            live: true,
            serial: self.serial,
            worker,
            key,
            cost,
            node: u32::MAX,
            router: u32::MAX,
            pending: 0,
            phase: Phase::Sent,
        };
        let idx = match self.free.pop() {
            Some(i) => {
                let gen = self.reqs[i as usize].gen + 1;
                self.reqs[i as usize] = Request { gen, ..fresh };
                i
            }
            None => {
                self.reqs.push(fresh);
                self.reqs.len() as u32 - 1
            }
        };
        let r = ReqId {
            idx,
            gen: self.reqs[idx as usize].gen,
        };
        self.dispatch(r);
    }

    fn release(&mut self, r: ReqId) -> u32 {
        let q = self.req(r);
        q.live = false;
        let w = q.worker;
        self.free.push(r.idx);
        w
    }

    fn complete(&mut self, r: ReqId) {
        let c = self.client_of(r);
        self.clients[c].stats.completed += 1;
        let w = self.window();
        self.completions[w] += 1;
        let worker = self.release(r);
        self.issue(worker);
    }

    fn fail(&mut self, r: ReqId, reason: &str) {
        let c = self.client_of(r);
        self.clients[c].stats.errored += 1;
        let w = self.window();
        self.errors[w] += 1;
        let node = self.reqs[r.idx as usize].node;
        let key = self.reqs[r.idx as usize].key;
        self.log(
            EventKind::ClientError,
            (node != u32::MAX).then_some(node),
            format!("client {c} key {}: {reason}", key_name(key)),
        );
        let worker = self.release(r);
        let backoff = self.cfg.error_backoff_ms / 1e3;
        self.after_s(backoff, Ev::Issue(worker));
    }

    fn dispatch(&mut self, r: ReqId) {
        let (key, cost) = {
            let q = self.req(r);
            q.phase = Phase::Sent;
            (q.key, q.cost)
        };
        match self.cfg.topology {
            Topology::Ring => {
                let rf = self.cfg.replication_factor;
                let reps = &self.replicas[key as usize * rf..(key as usize + 1) * rf];
                match least_loaded(&self.stations, reps.iter().copied()) {
                    Some(n) => {
                        self.req(r).node = n;
                        self.send(
                            n,
                            Job {
                                req: r,
                                cost,
                                kind: JobKind::Read,
                            },
                            0,
                        );
                    }
                    None => self.fail(r, "unavailable: all replicas dead"),
                }
            }
            Topology::MasterRegion => {
                let c = self.client_of(r);
                let region = self.region(key) as usize;
                let (truth, moved) = {
                    let mr = self.mr.as_ref().unwrap();
                    (mr.truth[region], mr.moved[region])
                };
                let mut extra = 0;
                let server = if self.cfg.master_region.meta_cache {
                    self.clients[c].meta[region]
                } else {
                    self.meta_lookups += 1;
                    extra = self.net_delay() + self.net_delay();
                    truth
                };
                let penalty = if moved {
                    self.cfg.master_region.locality_penalty
                } else {
                    0.0
                };
                self.req(r).node = server;
                self.send(
                    server,
                    Job {
                        req: r,
                        cost: cost * (1.0 + penalty),
                        kind: JobKind::Read,
                    },
                    extra,
                );
            }
            Topology::Sharded => match least_loaded(&self.stations, 0..self.nodes) {
                Some(router) => {
                    let a = self.cfg.sharded.router_cost;
                    self.req(r).router = router;
                    self.send(
                        router,
                        Job {
                            req: r,
                            cost: cost * a,
                            kind: JobKind::Route,
                        },
                        0,
                    );
                }
                None => self.fail(r, "unavailable: no live router"),
            },
        }
    }

    fn region(&self, key: u32) -> u32 {
        region_of(key, self.cfg.keys, self.cfg.master_region.region_count)
    }

    fn reply(&mut self, r: ReqId, hops: u32) {
        self.req(r).phase = Phase::Replying;
        let mut d = 0;
        for _ in 0..hops {
            d += self.net_delay();
        }
        self.at(self.now + d, Ev::Reply(r));
    }

    // ---- stations ----

    fn send(&mut self, s: u32, job: Job, extra: u64) {
        self.stations[s as usize].outstanding += 1;
        let d = self.net_delay() + extra;
        self.at(self.now + d, Ev::Arrive(s, job));
    }

    fn arrive(&mut self, s: u32, job: Job) {
        let st = &mut self.stations[s as usize];
        if !st.alive {
            self.lost(s, job);
            return;
        }
        st.queue.push_back(job);
        if st.busy.is_none() {
            self.start_service(s);
        }
    }

    fn start_service(&mut self, s: u32) {
        let Some(job) = self.stations[s as usize].queue.pop_front() else {
            return;
        };
        let x: f64 = Exp1.sample(&mut self.rng);
        let st = &mut self.stations[s as usize];
        st.busy = Some((job, self.now));
        let t = self.now + (x * job.cost / st.rate * NS) as u64;
        let epoch = st.epoch;
        self.at(t, Ev::Done(s, epoch));
    }

    fn done(&mut self, s: u32, epoch: u32) {
        let st = &mut self.stations[s as usize];
        if !st.alive || st.epoch != epoch {
            return;
        }
        let (job, started) = st.busy.take().expect("a completion implies a busy station");
        st.outstanding = st.outstanding.saturating_sub(1);
        st.stats.served += 1;
        st.stats.work += job.cost;
        st.stats.last_done_ns = Some(self.now);
        if s < self.nodes {
            if let Some(trace) = self.jobs.as_mut() {
                trace.push(JobRecord {
                    start_ns: started,
                    end_ns: self.now,
                    node: s as usize,
                    request: self.reqs[job.req.idx as usize].serial,
                    kind: job.kind,
                });
            }
        }
        self.start_service(s);
        if self.current(job.req) {
            self.job_done(s, job);
        }
    }

    fn job_done(&mut self, s: u32, job: Job) {
        let r = job.req;
        match job.kind {
            JobKind::Read if self.cfg.topology == Topology::Ring => {
                let p = self.cfg.ring.read_repair_chance;
                if p > 0.0 && self.rng.random_bool(p) {
                    self.repaired += 1;
                    let rf = self.cfg.replication_factor;
                    let key = self.reqs[r.idx as usize].key as usize;
                    let others: Vec<u32> = self.replicas[key * rf..(key + 1) * rf]
                        .iter()
                        .copied()
                        .filter(|&n| n != s && self.stations[n as usize].alive)
                        .collect();
                    let cost = job.cost * self.cfg.ring.repair_weight;
                    self.req(r).pending = others.len() as u32;
                    for n in &others {
                        self.send(
                            *n,
                            Job {
                                req: r,
                                cost,
                                kind: JobKind::Repair,
                            },
                            0,
                        );
                    }
                    if others.is_empty() {
                        self.reply(r, 1);
                    }
                } else {
                    self.reply(r, 1);
                }
            }
            JobKind::Read => {
                if self.client_stage {
                    let c = self.client_of(r) as u32;
                    let cost = self.reqs[r.idx as usize].cost;
                    self.req(r).phase = Phase::Replying;
                    self.send(
                        self.nodes + c,
                        Job {
                            req: r,
                            cost,
                            kind: JobKind::Client,
                        },
                        0,
                    );
                } else {
                    self.reply(r, 1);
                }
            }
            JobKind::Repair => self.repair_settled(r),
            JobKind::Route => {
                let key = self.reqs[r.idx as usize].key as usize;
                let rs = self.cfg.sharded.replica_set_size as u32;
                let first = self.shards[key] as u32 * rs;
                let members = first..first + rs;
                let member = match self.cfg.sharded.read_preference {
                    ReadPreference::Nearest => least_loaded(&self.stations, members),
                    ReadPreference::Primary => {
                        members.clone().find(|&m| self.stations[m as usize].alive)
                    }
                };
                match member {
                    Some(m) => {
                        let cost =
                            self.reqs[r.idx as usize].cost * (1.0 - self.cfg.sharded.router_cost);
                        self.req(r).node = m;
                        self.send(
                            m,
                            Job {
                                req: r,
                                cost,
                                kind: JobKind::Store,
                            },
                            0,
                        );
                    }
                    None => self.fail(r, "unavailable: shard has no live member"),
                }
            }
            JobKind::Store => self.reply(r, 2),
            JobKind::Client => self.complete(r),
        }
    }

    fn repair_settled(&mut self, r: ReqId) {
        let q = self.req(r);
        q.pending -= 1;
        if q.pending == 0 {
            self.reply(r, 1);
        }
    }

    /// A job that reached, or was queued at, a dead node.
    fn lost(&mut self, _s: u32, job: Job) {
        if !self.current(job.req) {
            return;
        }
        match (self.cfg.topology, job.kind) {
            // the driver retries on another replica
            (Topology::Ring, JobKind::Read) => self.dispatch(job.req),
            (Topology::Ring, JobKind::Repair) => self.repair_settled(job.req),
            (Topology::MasterRegion, JobKind::Read) => self.park(job.req),
            _ => self.fail(job.req, "connection lost"),
        }
    }

    fn kill(&mut self, n: u32, role: &str) {
        let st = &mut self.stations[n as usize];
        if !st.alive {
            self.log(EventKind::KillSkipped, Some(n), "node already dead");
            return;
        }
        st.alive = false;
        st.epoch += 1;
        st.outstanding = 0;
        st.stats.killed_at_ns = Some(self.now);
        let mut lost: Vec<Job> = st.busy.take().map(|(j, _)| j).into_iter().collect();
        lost.extend(st.queue.drain(..));
        self.log(EventKind::Kill, Some(n), role);

        if self.cfg.topology == Topology::Sharded {
            // requests coordinated by the dead router fail wherever they are
            let routed: Vec<ReqId> = self
                .reqs
                .iter()
                .enumerate()
                .filter(|(_, q)| q.live && q.router == n)
                .map(|(i, q)| ReqId {
                    idx: i as u32,
                    gen: q.gen,
                })
                .collect();
            for r in routed {
                self.fail(r, "router died");
            }
        }
        for job in lost {
            self.lost(n, job);
        }
        if self.mr.is_some() {
            let hb = self.cfg.master_region.heartbeat_timeout_s;
            self.after_s(hb, Ev::ZkExpire(n));
            if self.mr.as_ref().unwrap().phase == MasterPhase::Active(n) {
                self.master_lost(n);
            }
        }
    }

    fn inject(&mut self, target: Target) {
        let live: Vec<u32> = (0..self.nodes)
            .filter(|&n| self.stations[n as usize].alive)
            .collect();
        let pick = |rng: &mut ChaCha8Rng, pool: Vec<u32>| {
            pool.get(rng.random_range(0..pool.len().max(1))).copied()
        };
        match target {
            Target::Node(n) => self.kill(n as u32, "node"),
            Target::AnyNode => match pick(&mut self.rng, live) {
                Some(n) => self.kill(n, "node"),
                None => self.log(EventKind::KillSkipped, None, "no live node"),
            },
            Target::RegionServer => {
                let pool: Vec<u32> = live
                    .iter()
                    .copied()
                    .filter(|&n| n != MASTER_HOST && n != BACKUP_HOST)
                    .collect();
                let pool = if pool.is_empty() { live } else { pool };
                match pick(&mut self.rng, pool) {
                    Some(n) => self.kill(n, "regionserver"),
                    None => self.log(EventKind::KillSkipped, None, "no live region server"),
                }
            }
            Target::ShardMember(shard) => {
                let rs = self.cfg.sharded.replica_set_size as u32;
                let pool: Vec<u32> = live
                    .into_iter()
                    .filter(|&n| shard.is_none_or(|s| n / rs == s as u32))
                    .collect();
                match pick(&mut self.rng, pool) {
                    Some(n) => self.kill(n, "shard-member"),
                    None => self.log(EventKind::KillSkipped, None, "no live shard member"),
                }
            }
            Target::MasterNamenode => {
                let phase = self.mr.as_ref().unwrap().phase;
                match phase {
                    MasterPhase::Active(host) => {
                        self.log(EventKind::RoleKill, Some(host), "master+namenode");
                        self.master_lost(host);
                    }
                    _ => self.log(EventKind::KillSkipped, None, "no active master"),
                }
            }
        }
    }

    // ---- master/region ----

    fn master_lost(&mut self, host: u32) {
        let m = &self.cfg.master_region;
        let (promote, give_up) = (m.namenode_promotion_s, m.master_retry_s);
        let mr = self.mr.as_mut().unwrap();
        if host != MASTER_HOST || mr.namenode_promoted {
            // the backup is already the master; nothing is left to fail over to
            mr.phase = MasterPhase::Down;
            self.log(
                EventKind::BackupMasterCrashed,
                Some(host),
                "no standby master",
            );
            return;
        }
        mr.phase = MasterPhase::FailingOver;
        self.log(
            EventKind::BackupMasterActivating,
            Some(BACKUP_HOST),
            "connecting to namenode",
        );
        self.after_s(promote, Ev::NamenodePromoted);
        self.after_s(give_up, Ev::BackupGiveUp);
    }

    fn namenode_promoted(&mut self) {
        let mr = self.mr.as_mut().unwrap();
        mr.namenode_promoted = true;
        self.log(
            EventKind::NamenodePromoted,
            Some(BACKUP_HOST),
            "secondary namenode is primary",
        );
        let mr = self.mr.as_mut().unwrap();
        if mr.phase == MasterPhase::FailingOver && self.stations[BACKUP_HOST as usize].alive {
            mr.phase = MasterPhase::Active(BACKUP_HOST);
            let blocked = std::mem::take(&mut mr.blocked);
            self.log(
                EventKind::MasterActive,
                Some(BACKUP_HOST),
                "backup master took over",
            );
            let delay = self.cfg.master_region.reassign_delay_s;
            for n in blocked {
                self.after_s(delay, Ev::Reassign(n));
            }
        }
    }

    fn backup_give_up(&mut self) {
        let mr = self.mr.as_mut().unwrap();
        if mr.phase == MasterPhase::FailingOver {
            mr.phase = MasterPhase::Down;
            self.log(
                EventKind::BackupMasterCrashed,
                Some(BACKUP_HOST),
                "namenode not yet promoted; uncaught exception",
            );
        }
    }

    fn zk_expire(&mut self, n: u32) {
        self.log(
            EventKind::ZkExpired,
            Some(n),
            "region server session expired",
        );
        let mr = self.mr.as_mut().unwrap();
        if matches!(mr.phase, MasterPhase::Active(_)) {
            let delay = self.cfg.master_region.reassign_delay_s;
            self.after_s(delay, Ev::Reassign(n));
        } else {
            mr.blocked.push(n);
            self.log(EventKind::ReassignmentBlocked, Some(n), "no active master");
        }
    }

    fn reassign(&mut self, dead: u32) {
        let live: Vec<u32> = (0..self.nodes)
            .filter(|&n| self.stations[n as usize].alive)
            .collect();
        if live.is_empty() {
            self.log(
                EventKind::ReassignmentBlocked,
                Some(dead),
                "no live region server",
            );
            return;
        }
        let mr = self.mr.as_mut().unwrap();
        let mut load = vec![0u32; self.nodes as usize];
        for &s in &mr.truth {
            load[s as usize] += 1;
        }
        let mut gained = vec![0u32; self.nodes as usize];
        for r in 0..mr.truth.len() {
            if mr.truth[r] == dead {
                let to = *live.iter().min_by_key(|&&n| (load[n as usize], n)).unwrap();
                load[to as usize] += 1;
                gained[to as usize] += 1;
                mr.truth[r] = to;
                mr.moved[r] = true;
            }
        }
        let moved: u32 = gained.iter().sum();
        let spread: Vec<String> = live
            .iter()
            .map(|&n| format!("{n}:{}", gained[n as usize]))
            .collect();
        self.log(
            EventKind::RegionsReassigned,
            Some(dead),
            format!("{moved} regions to {}", spread.join(" ")),
        );
        if moved > 0 {
            let delay = self.cfg.master_region.meta_refetch_s;
            for c in 0..self.clients.len() as u32 {
                self.log(EventKind::CacheInvalidation, None, format!("client {c}"));
                self.clients[c as usize].refetch_pending = true;
                self.after_s(delay, Ev::Refetch(c));
            }
        }
    }

    fn park(&mut self, r: ReqId) {
        let c = self.client_of(r);
        self.req(r).phase = Phase::Parked;
        self.clients[c].parked.push(r);
        let budget = self.cfg.master_region.retry_budget_s;
        self.after_s(budget, Ev::Expire(r));
        // the region already moved: a fresh lookup will find it
        let key = self.reqs[r.idx as usize].key;
        let owner = self.mr.as_ref().unwrap().truth[self.region(key) as usize];
        if self.stations[owner as usize].alive && !self.clients[c].refetch_pending {
            self.clients[c].refetch_pending = true;
            let delay = self.cfg.master_region.meta_refetch_s;
            self.after_s(delay, Ev::Refetch(c as u32));
        }
    }

    fn refetch(&mut self, c: u32) {
        let truth = self.mr.as_ref().unwrap().truth.clone();
        let client = &mut self.clients[c as usize];
        client.meta = truth;
        client.refetch_pending = false;
        let parked = std::mem::take(&mut client.parked);
        let resend: Vec<ReqId> = parked.into_iter().filter(|&r| self.current(r)).collect();
        if !resend.is_empty() {
            self.log(
                EventKind::Retry,
                None,
                format!("client {c} resent {}", resend.len()),
            );
        }
        for r in resend {
            self.dispatch(r);
        }
    }

    fn expire(&mut self, r: ReqId) {
        if !self.current(r) || self.reqs[r.idx as usize].phase != Phase::Parked {
            return;
        }
        let c = self.client_of(r);
        self.clients[c].parked.retain(|&p| p != r);
        self.fail(r, "region unavailable beyond retry budget");
    }
}

impl Station {
    fn new(rate: f64) -> Self {
        Self {
            alive: true,
            epoch: 0,
            rate,
            queue: VecDeque::new(),
            busy: None,
            outstanding: 0,
            stats: NodeStats::default(),
        }
    }
}

/// Live station with the fewest outstanding jobs; ties go to the first.
fn least_loaded(stations: &[Station], candidates: impl Iterator<Item = u32>) -> Option<u32> {
    candidates
        .filter(|&n| stations[n as usize].alive)
        .min_by_key(|&n| stations[n as usize].outstanding)
}
