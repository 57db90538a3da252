use std::collections::BTreeMap;

use pagevault_core::corpus::VolumeId;
use pagevault_core::index::{
    synth_bib_records, tokenize, BibRecord, Field, MetaQuery, MetadataIndex,
};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(n: usize) -> Vec<VolumeId> {
    (0..n)
        .map(|i| VolumeId::new(format!("bib.{i:04}")).unwrap())
        .collect()
}

fn scan(records: &BTreeMap<VolumeId, BibRecord>, q: &MetaQuery) -> Vec<VolumeId> {
    records
        .values()
        .filter(|r| q.matches(r))
        .map(|r| r.id.clone())
        .collect()
}

fn thousand() -> (MetadataIndex, BTreeMap<VolumeId, BibRecord>) {
    let records = synth_bib_records(&ids(1_000), 21);
    let idx = MetadataIndex::new();
    idx.index_all(records.clone());
    (
        idx,
        records.into_iter().map(|r| (r.id.clone(), r)).collect(),
    )
}

#[test]
fn every_record_token_pair_is_findable() {
    let (idx, records) = thousand();
    for r in records.values() {
        for f in Field::ALL {
            for t in tokenize(r.field(f)) {
                let hits = idx.search(&MetaQuery::new(&[(f, t.as_str())], None).unwrap());
                assert!(hits.binary_search(&r.id).is_ok(), "{} {f}:{t}", r.id);
            }
        }
    }
    idx.check_postings().unwrap();
}

#[test]
fn unique_title_token_finds_one_record() {
    let (idx, records) = thousand();
    let r = records.values().nth(617).unwrap();
    let unique = tokenize(&r.title).pop().unwrap();
    assert_eq!(
        idx.search(&MetaQuery::new(&[(Field::Title, unique)], None).unwrap()),
        vec![r.id.clone()]
    );
}

#[test]
fn subject_science_equals_linear_scan() {
    let (idx, records) = thousand();
    let q = MetaQuery::new(&[(Field::Subject, "science")], None).unwrap();
    let got = idx.search(&q);
    assert!(!got.is_empty());
    assert_eq!(got, scan(&records, &q));
}

#[test]
fn index_remove_fuzz_matches_oracle() {
    let idx = MetadataIndex::new();
    let mut oracle = BTreeMap::new();
    let pool = synth_bib_records(&ids(300), 4);
    let alt = synth_bib_records(&ids(300), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for step in 0..3_000 {
        let i = rng.random_range(0..300);
        match rng.random_range(0..3) {
            0 => {
                idx.remove(&pool[i].id);
                oracle.remove(&pool[i].id);
            }
            1 => {
                idx.index(pool[i].clone());
                oracle.insert(pool[i].id.clone(), pool[i].clone());
            }
            _ => {
                idx.index(alt[i].clone());
                oracle.insert(alt[i].id.clone(), alt[i].clone());
            }
        }
        if step % 100 == 0 {
            idx.check_postings().unwrap();
            for s in ["science", "law", "poetry"] {
                let q = MetaQuery::new(&[(Field::Subject, s)], None).unwrap();
                assert_eq!(idx.search(&q), scan(&oracle, &q));
            }
        }
    }
    assert_eq!(idx.len(), oracle.len());
}

type QueryShape = (Vec<(usize, usize)>, Option<(u16, u16)>);

fn query_strategy() -> impl Strategy<Value = QueryShape> {
    (
        prop::collection::vec((0usize..4, 0usize..1_000), 1..4),
        prop::option::of((1500u16..1950, 0u16..200)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn search_equals_linear_scan((clauses, years) in query_strategy(), pick in any::<u64>()) {
        let (idx, records) = thousand_cached();
        let all: Vec<&BibRecord> = records.values().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        // terms taken from real records so most queries hit something
        let clauses: Vec<(Field, String)> = clauses
            .into_iter()
            .filter_map(|(f, r)| {
                let field = Field::ALL[f];
                tokenize(all[r].field(field)).choose(&mut rng).map(|t| (field, t.clone()))
            })
            .collect();
        prop_assume!(!clauses.is_empty());
        let q = MetaQuery::new(&clauses, years.map(|(a, w)| a..=a + w)).unwrap();
        prop_assert_eq!(idx.search(&q), scan(records, &q));
    }
}

fn thousand_cached() -> &'static (MetadataIndex, BTreeMap<VolumeId, BibRecord>) {
    static CELL: std::sync::OnceLock<(MetadataIndex, BTreeMap<VolumeId, BibRecord>)> =
        std::sync::OnceLock::new();
    CELL.get_or_init(thousand)
}
