use std::collections::BTreeMap;

use parking_lot::RwLock;

use crate::corpus::{PageRecord, Sequence, VolumeId, VolumeRecord};

use super::{select_pages, PageLookup, PagePredicate, StaticColumns, StoreError};

/// Map-backed store with the same read/write surface as `VolumeStore`.
/// Not durable; used as a reference implementation and in tests.
#[derive(Default)]
pub struct MemoryStore {
    volumes: RwLock<BTreeMap<VolumeId, VolumeRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_volume(&self, volume: &VolumeRecord) -> Result<(), StoreError> {
        self.volumes
            .write()
            .insert(volume.id().clone(), volume.clone());
        Ok(())
    }

    pub fn get_volume(&self, id: &VolumeId) -> Result<VolumeRecord, StoreError> {
        self.volumes
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    pub fn get_static(&self, id: &VolumeId) -> Result<StaticColumns, StoreError> {
        self.volumes
            .read()
            .get(id)
            .map(StaticColumns::of)
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    pub fn get_pages(
        &self,
        id: &VolumeId,
        sequences: &[Sequence],
    ) -> Result<Vec<PageLookup>, StoreError> {
        if sequences.is_empty() {
            return Err(StoreError::EmptySequences);
        }
        let map = self.volumes.read();
        let v = map
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        Ok(select_pages(v.pages(), sequences))
    }

    pub fn filter_pages(
        &self,
        id: &VolumeId,
        predicate: &PagePredicate,
    ) -> Result<Vec<PageRecord>, StoreError> {
        let map = self.volumes.read();
        let v = map
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        Ok(v.pages()
            .iter()
            .filter(|p| predicate.matches(p))
            .cloned()
            .collect())
    }

    pub fn scan_ids(&self) -> Vec<VolumeId> {
        self.volumes.read().keys().cloned().collect()
    }
}
