use pagevault_bench::*;
use pagevault_core::corpus::{ChecksumType, PageRecord, Sequence, VolumeId, VolumeRecord};
use pagevault_core::federated::{
    ContentSpec, EnvelopeBody, ExecOptions, FederatedQuery, Federation, Selector,
};
use pagevault_core::index::MetadataIndex;
use pagevault_core::rights::{RightsStore, RuleTable, UserContext};
use pagevault_core::store::MemoryStore;
use pagevault_sim::{run, ClientSpec, ClusterConfig, FailureSchedule, Topology};
use std::time::Duration;

fn sim(topology: Topology) -> SimTarget {
    let mut t = SimTarget::new(ClusterConfig::profile(topology));
    t.duration_s = 40.0;
    t.warmup_s = 10.0;
    t
}

#[test]
fn single_worker_closed_loop_arithmetic() {
    // one worker: qps = 1 / (mean service time + two mean network delays)
    for rate in [100.0, 10_000.0] {
        let mut cfg = ClusterConfig::profile(Topology::Ring);
        cfg.nodes = 1;
        cfg.replication_factor = 1;
        cfg.ring.read_repair_chance = 0.0;
        cfg.service_rate = rate;
        let latency = 1.0 / rate + 2.0 * (cfg.net_base_ms + cfg.net_jitter_ms) / 1e3;
        let expected = rate.min(1.0 / latency);
        let o = run(
            &cfg,
            &[ClientSpec::volume(1)],
            &FailureSchedule::none(),
            100.0,
            5,
        )
        .unwrap();
        let qps = o.series.mean_qps(0.0, 100.0);
        assert!(
            (qps / expected - 1.0).abs() < 0.03,
            "rate {rate}: {qps} vs {expected}"
        );
    }
}

#[test]
fn sweep_is_monotone_up_to_the_knee() {
    let mut spec = WorkloadSpec::new(Level::Volume);
    spec.sweep = vec![1, 2, 4, 8, 16, 32];
    for seed in 1..=3 {
        let r = find_max_stable(&BenchTarget::Sim(sim(Topology::Ring)), &spec, seed).unwrap();
        assert!(r.saturated);
        let knee = r
            .points
            .iter()
            .position(|p| p.workers_per_client == r.max_stable_workers)
            .unwrap();
        for w in r.points[..=knee].windows(2) {
            assert!(w[1].mean_qps >= w[0].mean_qps * 0.97, "{:?}", r.points);
        }
        assert_eq!(r.max_stable_qps, r.points[knee].mean_qps);
    }
}

#[test]
fn max_stable_search_is_deterministic() {
    let mut spec = WorkloadSpec::new(Level::Page);
    spec.sweep = vec![2, 8, 32];
    let a = find_max_stable(&BenchTarget::Sim(sim(Topology::Sharded)), &spec, 4).unwrap();
    let b = find_max_stable(&BenchTarget::Sim(sim(Topology::Sharded)), &spec, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.to_json().contains("\"seed\": 4"));
    assert!(a
        .config
        .iter()
        .any(|(k, v)| k == "topology" && v == "sharded"));
}

#[test]
fn ring_page_to_volume_ratio_follows_calibration() {
    let mut spec = WorkloadSpec::new(Level::Volume);
    spec.sweep = vec![4, 8, 16, 32, 64];
    let vol = find_max_stable(&BenchTarget::Sim(sim(Topology::Ring)), &spec, 1).unwrap();
    spec.level = Level::Page;
    let page = find_max_stable(&BenchTarget::Sim(sim(Topology::Ring)), &spec, 1).unwrap();
    let ratio = page.max_stable_qps / vol.max_stable_qps;
    assert!((ratio / (8560.0 / 1665.0) - 1.0).abs() < 0.10, "{ratio}");
}

fn small_volume(i: usize, pages: u32) -> VolumeRecord {
    let pages = (1..=pages)
        .map(|s| {
            PageRecord::new(
                Sequence::new(s).unwrap(),
                format!("v{i} p{s}"),
                ChecksumType::Md5,
            )
        })
        .collect();
    VolumeRecord::new(VolumeId::new(format!("b.{i}")).unwrap(), pages, 1, "eng").unwrap()
}

#[test]
fn live_target_counts_completions_and_page_misses() {
    let store = MemoryStore::new();
    for i in 0..20 {
        store.put_volume(&small_volume(i, 50)).unwrap();
    }
    let target = LiveTarget {
        source: &store,
        ids: store.scan_ids(),
        duration: Duration::from_millis(600),
        warmup: Duration::from_millis(100),
        window: Duration::from_millis(100),
    };
    let mut spec = WorkloadSpec::new(Level::Page);
    spec.sweep = vec![1, 2];
    let r = find_max_stable(&BenchTarget::Live(target), &spec, 3).unwrap();
    assert!(r.max_stable_qps > 0.0);
    // sequences are drawn from 1..=300 but volumes have 50 pages
    assert!(r.points.iter().all(|p| p.page_misses > 0 && p.errors == 0));

    let empty = MemoryStore::new();
    let target = LiveTarget {
        source: &empty,
        ids: vec![],
        duration: Duration::from_millis(200),
        warmup: Duration::from_millis(50),
        window: Duration::from_millis(50),
    };
    assert!(matches!(
        find_max_stable(&BenchTarget::Live(target), &spec, 3),
        Err(BenchError::EmptyIds)
    ));
}

#[test]
fn both_workset_sizes_complete_with_per_volume_isolation() {
    let memory = MemoryStore::new();
    let rights = RightsStore::in_memory(RuleTable::default());
    let ids: Vec<VolumeId> = (0..WorkloadSpec::LARGE_WORKSET)
        .map(|i| VolumeId::new(format!("b.{i}")).unwrap())
        .collect();
    for (i, id) in ids.iter().enumerate() {
        // every 97th volume has no content, every 89th no rights record
        if i % 97 != 0 {
            memory.put_volume(&small_volume(i, 1)).unwrap();
        }
        if i % 89 != 0 {
            rights.set_rights(id, &"PD".parse().unwrap()).unwrap();
        }
    }
    let index = MetadataIndex::new();
    let fed = Federation::new(&index, &rights, &memory, ExecOptions::default());
    for size in [WorkloadSpec::SMALL_WORKSET, WorkloadSpec::LARGE_WORKSET] {
        let mut spec = WorkloadSpec::new(Level::Volume);
        spec.workset_size = Some(size);
        let workset: Vec<VolumeId> = gen_workload(&ids, &spec, 8)
            .unwrap()
            .into_iter()
            .map(|r| r.id)
            .collect();
        let q = FederatedQuery {
            selector: Selector::Workset(workset),
            content: ContentSpec::FullVolumes,
            user: UserContext::new("US", 0).unwrap(),
        };
        let (envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
        assert_eq!(envs.len(), size);
        assert_eq!(trace.rights_batches(), size.div_ceil(1000));
        let errors = envs
            .iter()
            .filter(|e| matches!(e.body, EnvelopeBody::Error(_)))
            .count();
        let denied = envs
            .iter()
            .filter(|e| matches!(e.body, EnvelopeBody::Denied(_)))
            .count();
        assert!(errors > 0 && denied > 0);
        assert_eq!(errors + denied + trace.content_reads() - errors, size);
    }
}

#[test]
fn master_region_case_two_ends_at_zero() {
    let x = FailureExperiment::preset(Preset::MasterRegionCase2);
    let out = run_failure_experiment(&x, 1).unwrap();
    assert!(out.series.windows.last().unwrap().qps == 0.0);
    assert!(out.series.mean_qps(20.0, 50.0) > 0.0);
}
