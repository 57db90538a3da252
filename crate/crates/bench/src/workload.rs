use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use pagevault_core::corpus::{Sequence, VolumeId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Volume,
    Page,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Volume => "volume",
            Level::Page => "page",
        })
    }
}

impl FromStr for Level {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "volume" => Ok(Level::Volume),
            "page" => Ok(Level::Page),
            _ => Err(BenchError::BadSpec(format!("unknown level {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub level: Level,
    pub page_fields: usize,
    pub page_range: RangeInclusive<u32>,
    /// `None` uses every id.
    pub workset_size: Option<usize>,
    /// Closed-loop workers per client at each sweep step.
    pub sweep: Vec<usize>,
}

impl WorkloadSpec {
    pub const SMALL_WORKSET: usize = 1_000;
    pub const LARGE_WORKSET: usize = 300_000;

    pub fn new(level: Level) -> Self {
        Self {
            level,
            page_fields: 10,
            page_range: 1..=300,
            workset_size: None,
            sweep: vec![1, 2, 4, 8, 16, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sweep.is_empty()
            || self.sweep.windows(2).any(|w| w[0] >= w[1])
            || self.sweep[0] == 0
        {
            return Err(BenchError::BadSpec(
                "sweep must be positive and strictly increasing".into(),
            ));
        }
        if self.level == Level::Page && self.page_fields == 0 {
            return Err(BenchError::BadSpec(
                "page requests need at least one field".into(),
            ));
        }
        if self.page_range.is_empty() || *self.page_range.start() == 0 {
            return Err(BenchError::BadSpec(
                "page range must be non-empty and start at 1 or above".into(),
            ));
        }
        if self.workset_size == Some(0) {
            return Err(BenchError::BadSpec("workset size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchRequest {
    pub id: VolumeId,
    /// Empty for volume-level requests.
    pub pages: Vec<Sequence>,
}

/// One pass over the shuffled workset. Page sequences are drawn
/// independently and may repeat within a request.
pub fn gen_workload(
    ids: &[VolumeId],
    spec: &WorkloadSpec,
    seed: u64,
) -> Result<Vec<BenchRequest>, BenchError> {
    if ids.is_empty() {
        return Err(BenchError::EmptyIds);
    }
    spec.validate()?;
    if let Some(n) = spec.workset_size {
        if n > ids.len() {
            return Err(BenchError::BadSpec(format!(
                "workset of {n} exceeds the {} available ids",
                ids.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&VolumeId> = ids.iter().collect();
    order.shuffle(&mut rng);
    order.truncate(spec.workset_size.unwrap_or(ids.len()));
    Ok(order
        .into_iter()
        .map(|id| {
            let pages = match spec.level {
                Level::Volume => Vec::new(),
                Level::Page => (0..spec.page_fields)
                    .map(|_| {
                        Sequence::new(rng.random_range(spec.page_range.clone()))
                            .expect("range starts at 1")
                    })
                    .collect(),
            };
            BenchRequest {
                id: id.clone(),
                pages,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<VolumeId> {
        (0..n)
            .map(|i| VolumeId::new(format!("w.{i}")).unwrap())
            .collect()
    }

    #[test]
    fn volume_mode_is_a_permutation() {
        let ids = ids(4);
        let reqs = gen_workload(&ids, &WorkloadSpec::new(Level::Volume), 3).unwrap();
        let mut got: Vec<VolumeId> = reqs.iter().map(|r| r.id.clone()).collect();
        assert!(reqs.iter().all(|r| r.pages.is_empty()));
        got.sort();
        assert_eq!(got, ids);
    }

    #[test]
    fn page_mode_has_ten_fields_in_range() {
        let reqs = gen_workload(&ids(500), &WorkloadSpec::new(Level::Page), 3).unwrap();
        for r in &reqs {
            assert_eq!(r.pages.len(), 10);
            assert!(r.pages.iter().all(|s| (1..=300).contains(&s.number())));
        }
        let max = reqs
            .iter()
            .flat_map(|r| &r.pages)
            .map(|s| s.number())
            .max()
            .unwrap();
        assert!(max > 290);
    }

    #[test]
    fn seeded_and_bounded() {
        let spec = WorkloadSpec::new(Level::Page);
        assert_eq!(
            gen_workload(&ids(50), &spec, 9).unwrap(),
            gen_workload(&ids(50), &spec, 9).unwrap()
        );
        assert_ne!(
            gen_workload(&ids(50), &spec, 9).unwrap(),
            gen_workload(&ids(50), &spec, 10).unwrap()
        );
        assert!(matches!(
            gen_workload(&[], &spec, 9),
            Err(BenchError::EmptyIds)
        ));
        let mut small = spec.clone();
        small.workset_size = Some(20);
        assert_eq!(gen_workload(&ids(50), &small, 9).unwrap().len(), 20);
        small.workset_size = Some(51);
        assert!(gen_workload(&ids(50), &small, 9).is_err());
        let mut bad = spec;
        bad.sweep = vec![4, 4];
        assert!(bad.validate().is_err());
    }
}
