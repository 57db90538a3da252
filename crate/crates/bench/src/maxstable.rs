use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use pagevault_core::corpus::VolumeId;
use pagevault_core::federated::ContentSource;
use pagevault_core::store::PageLookup;
use pagevault_sim::{
    measure, ClientMode, ClientSpec, ClusterConfig, FailureSchedule, ThroughputSeries,
};
use serde::Serialize;

use crate::workload::{gen_workload, Level, WorkloadSpec};
use crate::BenchError;

/// A sweep step whose successor improves mean qps by less than this
/// fraction counts as stable.
pub const STABILITY_GAIN: f64 = 0.03;

/// Logical load-generating clients; each runs the swept worker count.
pub const CLIENTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub workers_per_client: usize,
    pub mean_qps: f64,
    pub stddev_qps: f64,
    pub errors: u64,
    /// Requested page sequences the volume does not have (live target only).
    pub page_misses: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub target: String,
    pub level: Level,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub points: Vec<SweepPoint>,
    pub max_stable_qps: f64,
    pub max_stable_workers: usize,
    /// False when no step met the stability rule; the last step is
    /// reported instead.
    pub saturated: bool,
    pub series_csv: Option<String>,
    #[serde(skip)]
    pub series: ThroughputSeries,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields serialize")
    }
}

/// Index of the highest mean among steps whose next step gains less than
/// [`STABILITY_GAIN`], and whether any step qualified.
pub fn pick_max_stable(means: &[f64]) -> (usize, bool) {
    let mut best: Option<usize> = None;
    for i in 0..means.len().saturating_sub(1) {
        if means[i + 1] < means[i] * (1.0 + STABILITY_GAIN)
            && best.is_none_or(|b| means[i] > means[b])
        {
            best = Some(i);
        }
    }
    match best {
        Some(i) => (i, true),
        None => (means.len().saturating_sub(1), false),
    }
}

#[derive(Clone, Debug)]
pub struct SimTarget {
    pub cfg: ClusterConfig,
    pub duration_s: f64,
    pub warmup_s: f64,
}

impl SimTarget {
    pub fn new(cfg: ClusterConfig) -> Self {
        Self {
            cfg,
            duration_s: 60.0,
            warmup_s: 10.0,
        }
    }
}

pub struct LiveTarget<'a> {
    pub source: &'a dyn ContentSource,
    pub ids: Vec<VolumeId>,
    pub duration: Duration,
    pub warmup: Duration,
    pub window: Duration,
}

pub enum BenchTarget<'a> {
    Sim(SimTarget),
    Live(LiveTarget<'a>),
}

struct Measured {
    series: ThroughputSeries,
    page_misses: u64,
}

pub fn find_max_stable(
    target: &BenchTarget<'_>,
    spec: &WorkloadSpec,
    seed: u64,
) -> Result<RunReport, BenchError> {
    spec.validate()?;
    let mut measured = Vec::new();
    let (name, config, from, to) = match target {
        BenchTarget::Sim(t) => {
            if !(t.warmup_s >= 0.0 && t.duration_s > t.warmup_s) {
                return Err(BenchError::BadSpec("duration must exceed warmup".into()));
            }
            for &w in &spec.sweep {
                measured.push(run_sim(t, spec, w, seed)?);
            }
            let mut config = t.cfg.echo();
            config.push(("duration_s".into(), t.duration_s.to_string()));
            config.push(("warmup_s".into(), t.warmup_s.to_string()));
            (
                format!("sim:{}", t.cfg.topology),
                config,
                t.warmup_s,
                t.duration_s,
            )
        }
        BenchTarget::Live(t) => {
            if t.duration <= t.warmup || t.window.is_zero() {
                return Err(BenchError::BadSpec(
                    "duration must exceed warmup and window must be positive".into(),
                ));
            }
            for &w in &spec.sweep {
                measured.push(run_live(t, spec, w, seed)?);
            }
            let config = vec![
                ("volumes".into(), t.ids.len().to_string()),
                ("duration_s".into(), t.duration.as_secs_f64().to_string()),
                ("warmup_s".into(), t.warmup.as_secs_f64().to_string()),
            ];
            (
                "live".to_string(),
                config,
                t.warmup.as_secs_f64(),
                t.duration.as_secs_f64(),
            )
        }
    };
    let mut config = config;
    config.extend([
        ("level".into(), spec.level.to_string()),
        ("clients".into(), CLIENTS.to_string()),
        (
            "sweep".into(),
            spec.sweep
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
    ]);
    let points: Vec<SweepPoint> = spec
        .sweep
        .iter()
        .zip(&measured)
        .map(|(&w, m)| {
            let xs: Vec<f64> = m.series.range(from, to).map(|x| x.qps).collect();
            let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
            let var =
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
            SweepPoint {
                workers_per_client: w,
                mean_qps: mean,
                stddev_qps: var.sqrt(),
                errors: m.series.errors(0.0, to),
                page_misses: m.page_misses,
            }
        })
        .collect();
    if points.iter().all(|p| p.mean_qps == 0.0) {
        return Err(BenchError::Unreachable(format!(
            "{name} completed no requests"
        )));
    }
    let means: Vec<f64> = points.iter().map(|p| p.mean_qps).collect();
    let (knee, saturated) = pick_max_stable(&means);
    Ok(RunReport {
        target: name,
        level: spec.level,
        seed,
        config,
        max_stable_qps: points[knee].mean_qps,
        max_stable_workers: points[knee].workers_per_client,
        points,
        saturated,
        series_csv: None,
        series: measured.swap_remove(knee).series,
    })
}

pub fn clients_for(level: Level, fields: usize, workers: usize) -> Vec<ClientSpec> {
    let mode = match level {
        Level::Volume => ClientMode::Volume,
        Level::Page => ClientMode::Page {
            fields: fields as u32,
        },
    };
    vec![ClientSpec { mode, workers }; CLIENTS]
}

fn run_sim(
    t: &SimTarget,
    spec: &WorkloadSpec,
    workers: usize,
    seed: u64,
) -> Result<Measured, BenchError> {
    let clients = clients_for(spec.level, spec.page_fields, workers);
    let out = pagevault_sim::run(
        &t.cfg,
        &clients,
        &FailureSchedule::none(),
        t.duration_s,
        seed,
    )?;
    Ok(Measured {
        series: out.series,
        page_misses: 0,
    })
}

#[derive(Default)]
struct Tally {
    done: Vec<f64>,
    failed: Vec<f64>,
    misses: u64,
}

fn run_live(
    t: &LiveTarget<'_>,
    spec: &WorkloadSpec,
    workers: usize,
    seed: u64,
) -> Result<Measured, BenchError> {
    let streams = (0..CLIENTS)
        .map(|c| gen_workload(&t.ids, spec, seed.wrapping_add(c as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let stop = AtomicBool::new(false);
    let start = Instant::now();
    let tallies: Vec<Tally> = std::thread::scope(|s| {
        let handles: Vec<_> = streams
            .iter()
            .flat_map(|stream| (0..workers).map(move |w| (stream, w)))
            .map(|(stream, w)| {
                let stop = &stop;
                s.spawn(move || {
                    let mut tally = Tally::default();
                    let mut i = w * stream.len() / workers;
                    while !stop.load(Ordering::Relaxed) {
                        let req = &stream[i % stream.len()];
                        i += 1;
                        let ok = match spec.level {
                            Level::Volume => t.source.get_volume(&req.id).is_ok(),
                            Level::Page => match t.source.get_pages(&req.id, &req.pages) {
                                Ok(found) => {
                                    tally.misses += found
                                        .iter()
                                        .filter(|p| matches!(p, PageLookup::Missing(_)))
                                        .count()
                                        as u64;
                                    true
                                }
                                Err(_) => false,
                            },
                        };
                        let at = start.elapsed().as_secs_f64();
                        if ok {
                            tally.done.push(at)
                        } else {
                            tally.failed.push(at)
                        }
                    }
                    tally
                })
            })
            .collect();
        std::thread::sleep(t.duration);
        stop.store(true, Ordering::Relaxed);
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let done: Vec<f64> = tallies
        .iter()
        .flat_map(|x| x.done.iter().copied())
        .collect();
    let failed: Vec<f64> = tallies
        .iter()
        .flat_map(|x| x.failed.iter().copied())
        .collect();
    let series = measure(
        &done,
        &failed,
        t.window.as_secs_f64(),
        t.duration.as_secs_f64(),
    )?;
    Ok(Measured {
        series,
        page_misses: tallies.iter().map(|x| x.misses).sum(),
    })
}
