//! `pagevault` subcommands. Exit codes: 0 ok, 2 usage, 3 data error,
//! 4 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use pagevault_core::corpus::{
    corpus_stats, ingest_pairtree, parse_volume_zip, synth_corpus, write_pairtree, write_stats_csv,
    write_volume_zip, CorpusError, ZipMethod, REFERENCE_SIZE_MODEL,
};
use pagevault_core::federated::{ExecOptions, FederatedQuery, Federation};
use pagevault_core::index::{synth_bib_records, IndexError, MetadataIndex};
use pagevault_core::rights::{RightsError, RightsStore, RuleTable};
use pagevault_core::store::{Codec, StoreError, StoreOptions, VolumeStore};
use pagevault_sim::{parse_kv, ClusterConfig, FailureSchedule, SimError, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiment::{run_failure_experiment, FailureExperiment, Preset, SATURATING_WORKERS};
use crate::maxstable::{find_max_stable, BenchTarget, LiveTarget, SimTarget};
use crate::workload::{Level, WorkloadSpec};
use crate::BenchError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Parser)]
#[command(
    name = "pagevault",
    version,
    about = "Page-level corpus storage, rights-aware access and cluster benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `key = value` configuration file; see docs/config.md.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic corpus: pairtree zips, bib.csv and rights.csv.
    Synth {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Load a pairtree of volume zips into a volume store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Size summary (KiB) of the volumes in a pairtree, as `stat,kb` CSV.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bulk-load `id,code` rights into a rights log.
    RightsLoad {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Validate and normalize a bibliographic CSV into an index file.
    IndexLoad {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a JSON federated request; writes one JSON envelope per line.
    Query {
        #[arg(long)]
        request: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        rights: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Maximum-stable-throughput sweep against the simulator or a store.
    Bench {
        #[arg(long, conflicts_with = "store")]
        topology: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        level: Option<String>,
        /// Comma-separated workers per client, strictly increasing.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        warmup: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the cluster simulator through a kill schedule.
    Simulate {
        #[arg(long, conflicts_with = "topology")]
        preset: Option<String>,
        #[arg(long)]
        topology: Option<String>,
        /// Comma-separated `<seconds>:<target>` kills.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        level: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Fail {
    fn code(&self) -> i32 {
        match self {
            Fail::Usage(_) => EXIT_USAGE,
            Fail::Data(_) => EXIT_DATA,
            Fail::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Fail::Usage(m) | Fail::Data(m) | Fail::Runtime(m) => m,
        }
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail::Runtime(e.to_string())
    }
}

impl From<SimError> for Fail {
    fn from(e: SimError) -> Self {
        Fail::Usage(e.to_string())
    }
}

impl From<BenchError> for Fail {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Unreachable(_) => Fail::Runtime(e.to_string()),
            BenchError::EmptyIds => Fail::Data(e.to_string()),
            BenchError::BadSpec(_) | BenchError::Sim(_) => Fail::Usage(e.to_string()),
        }
    }
}

impl From<CorpusError> for Fail {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(e) => Fail::Runtime(e.to_string()),
            e => Fail::Data(e.to_string()),
        }
    }
}

impl From<StoreError> for Fail {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(e) => Fail::Runtime(e.to_string()),
            e => Fail::Data(e.to_string()),
        }
    }
}

impl From<RightsError> for Fail {
    fn from(e: RightsError) -> Self {
        match e {
            RightsError::Io(e) => Fail::Runtime(e.to_string()),
            e => Fail::Data(e.to_string()),
        }
    }
}

impl From<IndexError> for Fail {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Io(e) => Fail::Runtime(e.to_string()),
            e => Fail::Data(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Fail> {
    match cmd {
        Cmd::Synth { n, common } => synth(n, &common),
        Cmd::Ingest { input, common } => ingest(&input, &common),
        Cmd::Stats { input, common } => stats(&input, &common),
        Cmd::RightsLoad { input, common } => rights_load(&input, &common),
        Cmd::IndexLoad { input, common } => index_load(&input, &common),
        Cmd::Query {
            request,
            store,
            rights,
            index,
            common,
        } => query(&request, &store, &rights, &index, &common),
        Cmd::Bench {
            topology,
            store,
            level,
            sweep,
            duration,
            warmup,
            common,
        } => bench(topology, store, level, sweep, duration, warmup, &common),
        Cmd::Simulate {
            preset,
            topology,
            schedule,
            duration,
            workers,
            level,
            common,
        } => simulate(
            preset, topology, schedule, duration, workers, level, &common,
        ),
    }
}

// ---- config plumbing ----

struct Config(BTreeMap<String, String>);

impl Config {
    fn load(common: &Common) -> Result<Self, Fail> {
        let Some(path) = &common.config else {
            return Ok(Self(BTreeMap::new()));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Fail::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self(parse_kv(&text)?))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Fail> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Fail::Usage(format!("config {key}: cannot parse {v:?}"))),
        }
    }

    fn finish(self) -> Result<(), Fail> {
        match self.0.keys().next() {
            None => Ok(()),
            Some(k) => Err(Fail::Usage(format!("unknown config key {k:?}"))),
        }
    }
}

fn need_out(common: &Common) -> Result<&Path, Fail> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Fail::Usage("--out is required for this command".into()))
}

fn parse_flag<T: FromStr>(name: &str, v: &str) -> Result<T, Fail>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Fail::Usage(format!("--{name} {v:?}: {e}")))
}

fn rule_table(cfg: &mut Config) -> Result<RuleTable, Fail> {
    match cfg.take::<PathBuf>("rules")? {
        None => Ok(RuleTable::default()),
        Some(p) => {
            Ok(RuleTable::from_csv(File::open(&p).map_err(|e| {
                Fail::Usage(format!("{}: {e}", p.display()))
            })?)?)
        }
    }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

// ---- corpus commands ----

/// Share of each rights code in synthetic corpora.
const SYNTH_RIGHTS: [(&str, f64); 5] = [
    ("PD", 0.30),
    ("PDUS", 0.10),
    ("IC", 0.50),
    ("OP", 0.05),
    ("UND", 0.05),
];

fn synth(n: usize, common: &Common) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let method = match cfg.take::<String>("zip_method")?.as_deref() {
        None | Some("stored") => ZipMethod::Stored,
        Some("deflated") => ZipMethod::Deflated,
        Some(m) => {
            return Err(Fail::Usage(format!(
                "config zip_method: unknown method {m:?}"
            )))
        }
    };
    cfg.finish()?;
    let out = need_out(common)?;
    let root = out.join("volumes");
    fs::create_dir_all(&root)?;

    let mut ids = Vec::with_capacity(n);
    for v in synth_corpus(n, common.seed, &REFERENCE_SIZE_MODEL)? {
        write_pairtree(&root, v.id(), &write_volume_zip(&v, method)?)?;
        ids.push(v.id().clone());
    }
    let index = MetadataIndex::new();
    index.index_all(synth_bib_records(&ids, common.seed));
    index.save_csv(&out.join("bib.csv"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(common.seed ^ 0x5249_4748_5453);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("rights.csv"))?));
    let csv_err = |e: csv::Error| Fail::Runtime(e.to_string());
    w.write_record(["id", "code"]).map_err(csv_err)?;
    for id in &ids {
        let mut x: f64 = rng.random();
        let code = SYNTH_RIGHTS
            .iter()
            .find(|(_, p)| {
                x -= p;
                x < 0.0
            })
            .map_or("UND", |(c, _)| c);
        w.write_record([id.as_str(), code]).map_err(csv_err)?;
    }
    w.flush()?;
    println!("wrote {n} volumes to {}", out.display());
    Ok(())
}

fn store_options(cfg: &mut Config) -> Result<StoreOptions, Fail> {
    let mut opts = StoreOptions::default();
    match cfg.take::<String>("codec")?.as_deref() {
        None | Some("snappy") => opts.codec = Codec::Snappy,
        Some("none") => opts.codec = Codec::None,
        Some(c) => return Err(Fail::Usage(format!("config codec: unknown codec {c:?}"))),
    }
    if let Some(b) = cfg.take("memtable_bytes")? {
        opts.memtable_bytes = b;
    }
    if let Some(s) = cfg.take("sync_writes")? {
        opts.sync_writes = s;
    }
    if let Some(v) = cfg.take("verify_reads")? {
        opts.verify_reads = v;
    }
    Ok(opts)
}

fn ingest(input: &Path, common: &Common) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let opts = store_options(&mut cfg)?;
    cfg.finish()?;
    let out = need_out(common)?;
    let walk = ingest_pairtree(input).map_err(|e| Fail::Data(e.to_string()))?;
    let store = VolumeStore::open(out, opts)?;
    let (mut ok, mut bad) = (0usize, 0usize);
    for item in walk {
        let parsed = item.map_err(|e| e.to_string()).and_then(|(id, bytes)| {
            parse_volume_zip(&bytes, id.clone()).map_err(|e| format!("{id}: {e}"))
        });
        match parsed {
            Ok(v) => {
                store.put_volume(&v)?;
                ok += 1;
            }
            Err(e) => {
                eprintln!("skipped {e}");
                bad += 1;
            }
        }
    }
    store.flush()?;
    println!("ingested {ok} volumes into {}", out.display());
    if bad > 0 {
        return Err(Fail::Data(format!("{bad} archives could not be ingested")));
    }
    Ok(())
}

fn stats(input: &Path, common: &Common) -> Result<(), Fail> {
    Config::load(common)?.finish()?;
    let mut volumes = Vec::new();
    let mut bad = 0usize;
    for item in ingest_pairtree(input).map_err(|e| Fail::Data(e.to_string()))? {
        match item.map_err(|e| e.to_string()).and_then(|(id, bytes)| {
            parse_volume_zip(&bytes, id.clone()).map_err(|e| format!("{id}: {e}"))
        }) {
            Ok(v) => volumes.push(v),
            Err(e) => {
                eprintln!("skipped {e}");
                bad += 1;
            }
        }
    }
    let summary = corpus_stats(&volumes)?;
    let mut buf = Vec::new();
    write_stats_csv(&summary, &mut buf)?;
    write_text(common.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    if bad > 0 {
        return Err(Fail::Data(format!("{bad} archives could not be read")));
    }
    Ok(())
}

fn open_input(p: &Path) -> Result<File, Fail> {
    File::open(p).map_err(|e| Fail::Data(format!("{}: {e}", p.display())))
}

fn rights_load(input: &Path, common: &Common) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let table = rule_table(&mut cfg)?;
    let sync = cfg.take("sync_writes")?.unwrap_or(false);
    cfg.finish()?;
    let out = need_out(common)?;
    let rights = RightsStore::open(out, table, sync)?;
    let n = rights.load_csv(open_input(input)?)?;
    rights.checkpoint()?;
    println!(
        "loaded {n} rights rows; {} volumes registered",
        rights.len()
    );
    Ok(())
}

fn index_load(input: &Path, common: &Common) -> Result<(), Fail> {
    Config::load(common)?.finish()?;
    let out = need_out(common)?;
    let index = MetadataIndex::new();
    let n = index.load_csv(open_input(input)?)?;
    index.save_csv(out)?;
    println!("indexed {n} records ({} distinct volumes)", index.len());
    Ok(())
}

fn query(
    request: &Path,
    store: &Path,
    rights: &Path,
    index: &Path,
    common: &Common,
) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let table = rule_table(&mut cfg)?;
    let mut opts = ExecOptions::default();
    if let Some(b) = cfg.take("batch_size")? {
        opts.batch_size = b;
    }
    if let Some(p) = cfg.take("parallelism")? {
        opts.parallelism = p;
    }
    cfg.finish()?;

    let text = fs::read_to_string(request)
        .map_err(|e| Fail::Data(format!("{}: {e}", request.display())))?;
    let q = FederatedQuery::from_json(&text).map_err(|e| Fail::Data(e.to_string()))?;
    if !store.is_dir() {
        return Err(Fail::Data(format!(
            "{} is not a volume store",
            store.display()
        )));
    }
    let volumes = VolumeStore::open(store, StoreOptions::default())?;
    let registry = RightsStore::open(rights, table, false)?;
    let meta = MetadataIndex::new();
    meta.load_csv(open_input(index)?)?;

    let fed = Federation::new(&meta, &registry, &volumes, opts);
    let plan = fed.plan(&q).map_err(|e| Fail::Data(e.to_string()))?;
    let (envelopes, trace) = fed
        .execute(&plan)
        .map_err(|e| Fail::Runtime(e.to_string()))?;
    let mut lines = String::new();
    for e in &envelopes {
        lines.push_str(&serde_json::to_string(e).expect("envelopes serialize"));
        lines.push('\n');
    }
    write_text(common.out.as_deref(), &lines)?;
    eprintln!(
        "trace {}: metadata_calls={} rights_batches={} content_reads={} envelopes={}",
        trace.trace_id,
        trace.metadata_calls(),
        trace.rights_batches(),
        trace.content_reads(),
        envelopes.len()
    );
    Ok(())
}

// ---- simulator commands ----

/// Cluster config from an optional base, the topology (flag beats config
/// key) and the remaining config keys.
fn cluster_config(
    cfg: &mut Config,
    base: Option<ClusterConfig>,
    topology_flag: Option<String>,
) -> Result<ClusterConfig, Fail> {
    let key: Option<String> = cfg.take("topology")?;
    let mut cluster = match (base, topology_flag.or(key)) {
        (Some(b), None) => b,
        (Some(_), Some(_)) => return Err(Fail::Usage("a preset fixes the topology".into())),
        (None, Some(t)) => ClusterConfig::profile(parse_flag::<Topology>("topology", &t)?),
        (None, None) => {
            return Err(Fail::Usage(
                "--topology (or config key topology) is required".into(),
            ))
        }
    };
    cluster.apply(&mut cfg.0)?;
    cluster.validate()?;
    Ok(cluster)
}

fn parse_sweep(s: &str) -> Result<Vec<usize>, Fail> {
    s.split(',')
        .map(|x| parse_flag::<usize>("sweep", x.trim()))
        .collect()
}

fn level_of(flag: Option<String>, cfg: &mut Config) -> Result<Level, Fail> {
    match flag.or(cfg.take("level")?) {
        None => Ok(Level::Volume),
        Some(l) => Ok(parse_flag("level", &l)?),
    }
}

#[allow(clippy::too_many_arguments)]
fn bench(
    topology: Option<String>,
    store: Option<PathBuf>,
    level: Option<String>,
    sweep: Option<String>,
    duration: Option<f64>,
    warmup: Option<f64>,
    common: &Common,
) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let mut spec = WorkloadSpec::new(level_of(level, &mut cfg)?);
    if let Some(s) = sweep.or(cfg.take("sweep")?) {
        spec.sweep = parse_sweep(&s)?;
    }
    if let Some(f) = cfg.take("page_fields")? {
        spec.page_fields = f;
    }
    spec.workset_size = cfg.take("workset_size")?;
    let duration = duration.or(cfg.take("duration_s")?);
    let warmup = warmup.or(cfg.take("warmup_s")?);

    let report = match store {
        Some(dir) => {
            let window = cfg.take::<f64>("window_s")?.unwrap_or(1.0);
            cfg.finish()?;
            if !dir.is_dir() {
                return Err(Fail::Data(format!(
                    "{} is not a volume store",
                    dir.display()
                )));
            }
            let volumes = VolumeStore::open(&dir, StoreOptions::default())?;
            let secs =
                |s: f64| Duration::try_from_secs_f64(s).map_err(|e| Fail::Usage(e.to_string()));
            let target = LiveTarget {
                source: &volumes,
                ids: volumes.scan_ids(),
                duration: secs(duration.unwrap_or(5.0))?,
                warmup: secs(warmup.unwrap_or(1.0))?,
                window: secs(window)?,
            };
            find_max_stable(&BenchTarget::Live(target), &spec, common.seed)?
        }
        None => {
            let cluster = cluster_config(&mut cfg, None, topology)?;
            cfg.finish()?;
            let mut target = SimTarget::new(cluster);
            if let Some(d) = duration {
                target.duration_s = d;
            }
            if let Some(w) = warmup {
                target.warmup_s = w;
            }
            find_max_stable(&BenchTarget::Sim(target), &spec, common.seed)?
        }
    };
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut report = report;
            fs::write(dir.join("series.csv"), report.series.to_csv())?;
            report.series_csv = Some("series.csv".into());
            fs::write(dir.join("report.json"), report.to_json() + "\n")?;
            println!(
                "max stable {:.1} qps at {} workers per client",
                report.max_stable_qps, report.max_stable_workers
            );
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    preset: Option<String>,
    topology: Option<String>,
    schedule: Option<String>,
    duration: Option<f64>,
    workers: Option<usize>,
    level: Option<String>,
    common: &Common,
) -> Result<(), Fail> {
    let mut cfg = Config::load(common)?;
    let preset = preset
        .map(|p| parse_flag::<Preset>("preset", &p))
        .transpose()?;
    let mut x = match preset {
        Some(p) => FailureExperiment::preset(p),
        None => FailureExperiment {
            cfg: ClusterConfig::profile(Topology::Ring),
            level: Level::Volume,
            workers: SATURATING_WORKERS,
            schedule: FailureSchedule::none(),
            duration_s: 400.0,
        },
    };
    x.level = level_of(level, &mut cfg)?;
    if let Some(s) = schedule.or(cfg.take("schedule")?) {
        x.schedule = parse_flag("schedule", &s)?;
    }
    if let Some(d) = duration.or(cfg.take("duration_s")?) {
        x.duration_s = d;
    }
    if let Some(w) = workers.or(cfg.take("workers")?) {
        x.workers = w;
    }
    x.cfg = cluster_config(&mut cfg, preset.map(|_| x.cfg.clone()), topology)?;
    cfg.finish()?;
    x.schedule.check(&x.cfg)?;

    let out = run_failure_experiment(&x, common.seed)?;
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("series.csv"), out.series.to_csv())?;
            fs::write(dir.join("events.csv"), out.events_csv())?;
            let mut echo: Vec<(String, String)> = x.cfg.echo();
            echo.extend([
                ("level".into(), x.level.to_string()),
                ("workers".into(), x.workers.to_string()),
                ("schedule".into(), x.schedule.to_string()),
                ("duration_s".into(), x.duration_s.to_string()),
            ]);
            let mut conf = format!("# seed = {}\n", common.seed);
            for (k, v) in echo {
                conf.push_str(&format!("{k} = {v}\n"));
            }
            fs::write(dir.join("run.conf"), conf)?;
            println!(
                "{} windows, {} completed, {} errors, {} events",
                out.series.windows.len(),
                out.stats.completed,
                out.stats.errored,
                out.events.len()
            );
        }
        None => print!("{}", out.series.to_csv()),
    }
    Ok(())
}
