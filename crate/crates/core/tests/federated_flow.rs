use std::collections::BTreeSet;

use pagevault_core::corpus::{ChecksumType, PageRecord, Sequence, VolumeId, VolumeRecord};
use pagevault_core::federated::{
    plan, ContentSource, ContentSpec, EnvelopeBody, ExecOptions, ExportState, FederatedError,
    FederatedQuery, Federation, Payload, PlanStep, ReviewDecision, ReviewError, ReviewGate,
    Selector,
};
use pagevault_core::index::{BibRecord, Field, MetaQuery, MetadataIndex};
use pagevault_core::rights::{Decision, RightsCode, RightsStore, RuleTable, UserContext};
use pagevault_core::store::{
    MemoryStore, PageLookup, PagePredicate, StoreError, StoreOptions, VolumeStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODES: [&str; 5] = ["PD", "PDUS", "IC", "OP", "UND"];

fn vid(i: usize) -> VolumeId {
    VolumeId::new(format!("fed.{i:05}")).unwrap()
}

fn volume(i: usize, pages: u32) -> VolumeRecord {
    let pages = (1..=pages)
        .map(|s| {
            let text = if s == 2 {
                String::new()
            } else {
                format!("secret-{i}-page-{s}")
            };
            PageRecord::new(Sequence::new(s).unwrap(), text, ChecksumType::Md5)
        })
        .collect();
    VolumeRecord::new(vid(i), pages, 1, "eng").unwrap()
}

fn user(j: &str) -> UserContext {
    UserContext::new(j, 0).unwrap()
}

struct World {
    index: MetadataIndex,
    rights: RightsStore,
    memory: MemoryStore,
    _dir: tempfile::TempDir,
    disk: VolumeStore,
}

/// `n` volumes; volume i has code CODES[i % 5] unless i % 11 == 0 (no
/// record) and is absent from content storage when i % 13 == 0.
fn world(n: usize) -> World {
    let dir = tempfile::tempdir().unwrap();
    let disk = VolumeStore::open(
        dir.path(),
        StoreOptions {
            memtable_bytes: 16 << 10,
            ..StoreOptions::default()
        },
    )
    .unwrap();
    let memory = MemoryStore::new();
    let index = MetadataIndex::new();
    let rights = RightsStore::in_memory(RuleTable::default());
    for i in 0..n {
        let subject = if i % 2 == 0 { "science" } else { "poetry" };
        index.index(
            BibRecord::new(vid(i), format!("volume {i}"), "anon", subject, "eng", 1800).unwrap(),
        );
        if i % 11 != 0 {
            rights
                .set_rights(&vid(i), &CODES[i % 5].parse().unwrap())
                .unwrap();
        }
        if i % 13 != 0 {
            let v = volume(i, 6);
            disk.put_volume(&v).unwrap();
            memory.put_volume(&v).unwrap();
        }
    }
    disk.compact().unwrap();
    World {
        index,
        rights,
        memory,
        _dir: dir,
        disk,
    }
}

fn allow_oracle(w: &World, u: &UserContext, ids: &[VolumeId]) -> BTreeSet<VolumeId> {
    let table = RuleTable::default();
    ids.iter()
        .filter(|id| {
            w.rights
                .get(id)
                .is_some_and(|e| table.authorize(u, &e.code) == Decision::Allow)
        })
        .cloned()
        .collect()
}

fn science(u: UserContext, content: ContentSpec) -> FederatedQuery {
    FederatedQuery {
        selector: Selector::Metadata(MetaQuery::new(&[(Field::Subject, "science")], None).unwrap()),
        content,
        user: u,
    }
}

#[test]
fn plan_shapes() {
    let q = science(user("US"), ContentSpec::FullVolumes);
    let p = plan(&q, 1000).unwrap();
    assert!(matches!(
        p.steps.as_slice(),
        [
            PlanStep::Metadata { .. },
            PlanStep::RightsBatch { .. },
            PlanStep::Content { .. }
        ]
    ));
    let ws = FederatedQuery {
        selector: Selector::Workset(vec![vid(1), vid(2), vid(3), vid(2)]),
        ..q.clone()
    };
    let p = plan(&ws, 1000).unwrap();
    assert!(matches!(
        p.steps.as_slice(),
        [
            PlanStep::RightsBatch {
                expected_ids: Some(3),
                ..
            },
            PlanStep::Content { .. }
        ]
    ));
    let empty = FederatedQuery {
        selector: Selector::Workset(vec![]),
        ..q.clone()
    };
    assert!(matches!(
        plan(&empty, 1000),
        Err(FederatedError::EmptySelector)
    ));
    let no_pages = FederatedQuery {
        content: ContentSpec::Pages(vec![]),
        ..q
    };
    assert!(matches!(
        plan(&no_pages, 1000),
        Err(FederatedError::EmptyPageSpec)
    ));
}

#[test]
fn request_json_round_trip() {
    let text = r#"{"selector": {"metadata": {"clauses": [["subject", "Science"]], "years": [1700, 1900]}},
                  "content": {"pages": ["00000001", "3"]},
                  "user": {"jurisdiction": "us", "access_level": 0}}"#;
    let q = FederatedQuery::from_json(text).unwrap();
    assert_eq!(q.user, user("US"));
    assert_eq!(
        q.content,
        ContentSpec::Pages(vec![Sequence::new(1).unwrap(), Sequence::new(3).unwrap()])
    );
    let back = FederatedQuery::from_json(&serde_json::to_string(&q).unwrap()).unwrap();
    assert_eq!(back, q);
    for bad in [
        r#"{"selector": {"metadata": {"clauses": []}}, "content": "full_volumes", "user": {"jurisdiction": "US"}}"#,
        r#"{"selector": {"workset": ["a"]}, "content": {"filter": "contents LIKE x"}, "user": {"jurisdiction": "US"}}"#,
        r#"{"selector": {"workset": ["a"]}, "content": "full_volumes", "user": {"jurisdiction": "USA"}}"#,
    ] {
        assert!(FederatedQuery::from_json(bad).is_err(), "{bad}");
    }
}

#[test]
fn hundred_matches_one_metadata_call() {
    let w = world(200);
    let fed = Federation::new(&w.index, &w.rights, &w.disk, ExecOptions::default());
    let u = user("DE");
    let p = fed
        .plan(&science(u.clone(), ContentSpec::FullVolumes))
        .unwrap();
    let (envs, trace) = fed.execute(&p).unwrap();
    let matched: Vec<VolumeId> = (0..200).step_by(2).map(vid).collect();
    assert_eq!(matched.len(), 100);
    assert_eq!(trace.metadata_calls(), 1);
    assert_eq!(trace.rights_batches(), 1);
    let reads: BTreeSet<VolumeId> = trace.read_volumes().into_iter().cloned().collect();
    assert_eq!(reads, allow_oracle(&w, &u, &matched));
    assert_eq!(trace.content_reads(), reads.len());
    assert_eq!(envs.len(), 100);
    assert!(trace.first_unauthorized_read().is_none());
}

#[test]
fn zero_matches_zero_reads() {
    let w = world(20);
    let fed = Federation::new(&w.index, &w.rights, &w.memory, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Metadata(
            MetaQuery::new(&[(Field::Subject, "astrology")], None).unwrap(),
        ),
        content: ContentSpec::FullVolumes,
        user: user("US"),
    };
    let (envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    assert!(envs.is_empty());
    assert_eq!(trace.metadata_calls(), 1);
    assert_eq!(trace.rights_batches(), 0);
    assert_eq!(trace.content_reads(), 0);
}

#[test]
fn ten_thousand_allowed_workset() {
    let memory = MemoryStore::new();
    let rights = RightsStore::in_memory(RuleTable::default());
    let ids: Vec<VolumeId> = (0..10_000).map(vid).collect();
    for (i, id) in ids.iter().enumerate() {
        memory.put_volume(&volume(i, 1)).unwrap();
        rights.set_rights(id, &"PD".parse().unwrap()).unwrap();
    }
    let index = MetadataIndex::new();
    let fed = Federation::new(&index, &rights, &memory, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Workset(ids),
        content: ContentSpec::FullVolumes,
        user: user("FR"),
    };
    let (envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    assert_eq!(trace.metadata_calls(), 0);
    assert_eq!(trace.rights_batches(), 10);
    assert_eq!(trace.content_reads(), 10_000);
    assert!(envs
        .iter()
        .all(|e| matches!(e.body, EnvelopeBody::Payload(_))));
}

#[test]
fn all_denied_means_no_reads() {
    let w = world(60);
    let ic: Vec<VolumeId> = (0..60)
        .filter(|i| i % 5 == 2 && i % 11 != 0)
        .map(vid)
        .collect();
    let fed = Federation::new(&w.index, &w.rights, &w.disk, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Workset(ic.clone()),
        content: ContentSpec::FullVolumes,
        user: user("US"),
    };
    let (envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    assert_eq!(trace.content_reads(), 0);
    assert_eq!(envs.len(), ic.len());
    assert!(envs
        .iter()
        .all(|e| matches!(e.body, EnvelopeBody::Denied(_))));
}

#[test]
fn fuzz_reads_equal_allow_set_and_follow_decisions() {
    let w = world(400);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..60 {
        let u = user(["US", "DE", "IN"][rng.random_range(0..3)]);
        let ids: Vec<VolumeId> = (0..rng.random_range(1..200))
            .map(|_| vid(rng.random_range(0..420)))
            .collect();
        let spec = match round % 3 {
            0 => ContentSpec::FullVolumes,
            1 => ContentSpec::Pages(vec![Sequence::new(1).unwrap(), Sequence::new(9).unwrap()]),
            _ => ContentSpec::Filter(PagePredicate::NonEmpty),
        };
        let fed = Federation::new(
            &w.index,
            &w.rights,
            &w.disk,
            ExecOptions {
                batch_size: rng.random_range(1..64),
                parallelism: rng.random_range(1..4),
            },
        );
        let q = FederatedQuery {
            selector: Selector::Workset(ids.clone()),
            content: spec,
            user: u.clone(),
        };
        let p = fed.plan(&q).unwrap();
        let (envs, trace) = fed.execute(&p).unwrap();
        assert!(trace.first_unauthorized_read().is_none());
        let reads: BTreeSet<VolumeId> = trace.read_volumes().into_iter().cloned().collect();
        assert_eq!(reads.len(), trace.content_reads());
        assert_eq!(reads, allow_oracle(&w, &u, &p.workset));
        assert_eq!(
            trace.rights_batches(),
            p.workset.len().div_ceil(fed.options.batch_size)
        );
        for e in &envs {
            let has_payload = matches!(e.body, EnvelopeBody::Payload(_));
            assert_eq!(
                has_payload,
                reads.contains(&e.volume) && w.memory.get_volume(&e.volume).is_ok()
            );
        }
    }
}

#[test]
fn backends_are_interchangeable() {
    let w = world(150);
    let specs = [
        ContentSpec::FullVolumes,
        ContentSpec::Pages(vec![Sequence::new(3).unwrap(), Sequence::new(40).unwrap()]),
        ContentSpec::Filter("byteCount > 0".parse().unwrap()),
    ];
    for spec in specs {
        let q = science(user("US"), spec);
        let run = |content: &dyn ContentSource, parallelism| {
            let fed = Federation::new(
                &w.index,
                &w.rights,
                content,
                ExecOptions {
                    batch_size: 7,
                    parallelism,
                },
            );
            fed.execute(&fed.plan(&q).unwrap()).unwrap()
        };
        let (a, ta) = run(&w.disk, 1);
        let (b, tb) = run(&w.memory, 3);
        assert_eq!(a, b);
        assert_eq!(ta.metadata_calls(), tb.metadata_calls());
        assert_eq!(ta.read_volumes(), tb.read_volumes());
    }
}

struct Broken;

impl ContentSource for Broken {
    fn get_volume(&self, id: &VolumeId) -> Result<VolumeRecord, StoreError> {
        if id.as_str().ends_with('5') {
            Err(StoreError::Io(std::io::Error::other("disk gone")))
        } else {
            Ok(volume(0, 1))
        }
    }
    fn get_pages(&self, _: &VolumeId, _: &[Sequence]) -> Result<Vec<PageLookup>, StoreError> {
        unreachable!()
    }
    fn filter_pages(&self, _: &VolumeId, _: &PagePredicate) -> Result<Vec<PageRecord>, StoreError> {
        unreachable!()
    }
}

#[test]
fn content_failures_stay_per_volume() {
    let rights = RightsStore::in_memory(RuleTable::default());
    let ids: Vec<VolumeId> = (0..30).map(vid).collect();
    for id in &ids {
        rights.set_rights(id, &"PD".parse().unwrap()).unwrap();
    }
    let index = MetadataIndex::new();
    let fed = Federation::new(&index, &rights, &Broken, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Workset(ids),
        content: ContentSpec::FullVolumes,
        user: user("US"),
    };
    let (envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    assert_eq!(envs.len(), 30);
    assert_eq!(trace.content_reads(), 30);
    let errors = envs
        .iter()
        .filter(|e| matches!(e.body, EnvelopeBody::Error(_)))
        .count();
    assert_eq!(errors, 3);
}

#[test]
fn denied_text_never_leaves_in_any_output() {
    let w = world(120);
    let fed = Federation::new(&w.index, &w.rights, &w.disk, ExecOptions::default());
    let u = user("DE");
    let all: Vec<VolumeId> = (0..120).map(vid).collect();
    let q = FederatedQuery {
        selector: Selector::Workset(all.clone()),
        content: ContentSpec::FullVolumes,
        user: u.clone(),
    };
    let (mut envs, trace) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    let mut gate = ReviewGate::new();
    gate.submit(&envs).unwrap();
    gate.decide(&mut envs, ReviewDecision::Approve, "rev-1")
        .unwrap();
    let mut dump = serde_json::to_string(&envs).unwrap();
    dump.push_str(&serde_json::to_string(&trace).unwrap());
    dump.push_str(&serde_json::to_string(gate.audit_log()).unwrap());
    let allowed = allow_oracle(&w, &u, &all);
    let mut denied = 0;
    for (i, id) in all.iter().enumerate() {
        if !allowed.contains(id) {
            denied += 1;
            assert!(!dump.contains(&format!("secret-{i}-")), "{id} leaked");
        } else if i % 13 != 0 {
            assert!(dump.contains(&format!("secret-{i}-page-1\"")));
        }
    }
    assert!(denied > 50);
}

#[test]
fn review_gate_workflow() {
    let w = world(30);
    let fed = Federation::new(&w.index, &w.rights, &w.memory, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Workset((0..30).map(vid).collect()),
        content: ContentSpec::Pages(vec![Sequence::new(1).unwrap()]),
        user: user("US"),
    };
    let (mut envs, _) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    assert!(envs.iter().all(|e| e.export == ExportState::HeldForReview));
    let mut gate = ReviewGate::new();
    assert!(matches!(
        gate.export(&envs[0]),
        Err(ReviewError::Unknown(_))
    ));
    gate.submit(&envs).unwrap();
    assert!(matches!(
        gate.submit(&envs[..1]),
        Err(ReviewError::AlreadyHeld(_))
    ));
    assert!(matches!(
        gate.export(&envs[0]),
        Err(ReviewError::NotApproved(_))
    ));
    let (first, rest) = envs.split_at_mut(10);
    gate.decide(first, ReviewDecision::Approve, "alice")
        .unwrap();
    gate.decide(&mut rest[..5], ReviewDecision::Reject, "bob")
        .unwrap();
    assert!(gate.export(&first[3]).is_ok());
    assert!(matches!(
        gate.export(&rest[0]),
        Err(ReviewError::NotApproved(_))
    ));
    // a forged flag does not bypass the gate
    let mut forged = rest[1].clone();
    forged.export = ExportState::Approved {
        reviewer: "mallory".into(),
    };
    assert!(gate.export(&forged).is_err());
    assert_eq!(
        gate.decide(&mut first[..1], ReviewDecision::Reject, "bob"),
        Err(ReviewError::AlreadyDecided(first[0].id))
    );
    assert_eq!(
        gate.decide(&mut rest[5..6], ReviewDecision::Approve, " "),
        Err(ReviewError::NoReviewer)
    );
    let replayed = ReviewGate::replay(gate.audit_log()).unwrap();
    assert_eq!(replayed, gate);
    for e in envs.iter() {
        assert_eq!(replayed.state(e.id), Some(&e.export));
    }
    let mut tampered = gate.audit_log().to_vec();
    tampered.swap(0, 40);
    assert!(ReviewGate::replay(&tampered).is_err());
}

#[test]
fn payloads_match_direct_reads() {
    let w = world(40);
    let fed = Federation::new(&w.index, &w.rights, &w.disk, ExecOptions::default());
    let q = FederatedQuery {
        selector: Selector::Workset((0..40).map(vid).collect()),
        content: ContentSpec::Filter(PagePredicate::NonEmpty),
        user: user("US"),
    };
    let (envs, _) = fed.execute(&fed.plan(&q).unwrap()).unwrap();
    for e in envs {
        if let EnvelopeBody::Payload(Payload::Filtered(pages)) = e.body {
            assert_eq!(pages.len(), 5);
            assert_eq!(
                pages,
                w.memory
                    .filter_pages(&e.volume, &PagePredicate::NonEmpty)
                    .unwrap()
            );
            let code: RightsCode = e.rights.unwrap();
            assert!(["PD", "PDUS"].contains(&code.as_str()));
        }
    }
}
