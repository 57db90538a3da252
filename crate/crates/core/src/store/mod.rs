//! Single-node wide-column volume store.
//!
//! Partition key is the volume id, clustering key the page sequence. Volume
//! level columns are static: stored once per partition. Writes are full
//! partition replacements appended to a write-ahead log and held in a
//! memtable; full memtables become immutable sorted segments, and `compact`
//! merges all segments into one, dropping shadowed versions.
//!
//! On-disk layout of a store directory:
//!
//! ```text
//! MANIFEST      live segments (see manifest.rs)
//! wal.log       replace records since the last flush
//! seg-<n>.dat   immutable segments
//! ```

mod format;
mod manifest;
mod memory;
mod predicate;
mod segment;
mod wal;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, PageRecord, Sequence, VolumeId, VolumeRecord};

use format::Partition;
use manifest::Manifest;
use segment::Segment;
use wal::Wal;

pub use memory::MemoryStore;
pub use predicate::PagePredicate;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("volume {0} not found")]
    NotFound(VolumeId),
    #[error("page request must name at least one sequence")]
    EmptySequences,
    #[error("unsupported predicate {0:?}")]
    UnsupportedPredicate(String),
    #[error("corrupt store data: {0}")]
    Corruption(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Volume-level columns shared by every row of a partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticColumns {
    pub access_level: i32,
    pub language: String,
    pub volume_byte_count: u64,
    pub volume_character_count: u64,
}

impl StaticColumns {
    pub fn of(v: &VolumeRecord) -> Self {
        Self {
            access_level: v.access_level(),
            language: v.language().to_string(),
            volume_byte_count: v.volume_byte_count(),
            volume_character_count: v.volume_character_count(),
        }
    }
}

/// Result slot of a page lookup, in request order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageLookup {
    Found(PageRecord),
    Missing(Sequence),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Codec {
    None,
    #[default]
    Snappy,
}

impl Codec {
    fn tag(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Snappy => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Codec::None),
            1 => Some(Codec::Snappy),
            _ => None,
        }
    }

    fn compress(self, raw: &[u8]) -> Result<Vec<u8>, StoreError> {
        match self {
            Codec::None => Ok(raw.to_vec()),
            Codec::Snappy => snap::raw::Encoder::new()
                .compress_vec(raw)
                .map_err(|e| StoreError::Io(std::io::Error::other(e))),
        }
    }

    fn decompress(self, data: &[u8]) -> Result<Vec<u8>, StoreError> {
        match self {
            Codec::None => Ok(data.to_vec()),
            Codec::Snappy => snap::raw::Decoder::new()
                .decompress_vec(data)
                .map_err(|e| StoreError::Corruption(format!("snappy: {e}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StoreOptions {
    pub codec: Codec,
    /// Memtable size that triggers a flush to a new segment.
    pub memtable_bytes: usize,
    /// fsync the log on every acknowledged write.
    pub sync_writes: bool,
    /// Recompute page checksums on every read, not only block checksums.
    pub verify_reads: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            codec: Codec::Snappy,
            memtable_bytes: 64 << 20,
            sync_writes: false,
            verify_reads: false,
        }
    }
}

#[derive(Clone, Default)]
struct Snapshot {
    memtable: BTreeMap<VolumeId, Arc<Partition>>,
    memtable_bytes: usize,
    /// newest first
    segments: Vec<Arc<Segment>>,
}

impl Snapshot {
    fn lookup(&self, id: &VolumeId, verify: bool) -> Result<Option<Arc<Partition>>, StoreError> {
        if let Some(p) = self.memtable.get(id) {
            return Ok(Some(p.clone()));
        }
        for seg in &self.segments {
            if let Some(p) = seg.get(id, verify)? {
                return Ok(Some(Arc::new(p)));
            }
        }
        Ok(None)
    }
}

struct Writer {
    wal: Wal,
    manifest: Manifest,
}

pub struct VolumeStore {
    dir: PathBuf,
    opts: StoreOptions,
    writer: Mutex<Writer>,
    state: RwLock<Arc<Snapshot>>,
}

impl VolumeStore {
    pub fn open(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let manifest = Manifest::load(&dir.join("MANIFEST"))?.unwrap_or_default();
        let mut segments = Vec::with_capacity(manifest.segments.len());
        for &n in &manifest.segments {
            segments.push(Arc::new(Segment::open(&dir, n)?));
        }
        // segments written but never published by a manifest are leftovers of a crash
        let live: BTreeSet<u64> = manifest.segments.iter().copied().collect();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name
                .strip_prefix("seg-")
                .and_then(|s| s.strip_suffix(".dat"))
            {
                if n.parse::<u64>().is_ok_and(|n| !live.contains(&n)) {
                    fs::remove_file(dir.join(name.as_ref()))?;
                }
            }
        }
        let (wal, replayed) = Wal::open(&dir.join("wal.log"), opts.sync_writes)?;
        let mut snap = Snapshot {
            segments,
            ..Snapshot::default()
        };
        for p in replayed {
            snap.memtable_bytes += p.approx_bytes();
            snap.memtable.insert(p.id.clone(), Arc::new(p));
        }
        Ok(Self {
            dir,
            opts,
            writer: Mutex::new(Writer { wal, manifest }),
            state: RwLock::new(Arc::new(snap)),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.state.read().clone()
    }

    /// Replaces every row of the volume's partition. Once this returns, reads
    /// observe exactly the new pages.
    pub fn put_volume(&self, volume: &VolumeRecord) -> Result<(), StoreError> {
        let partition = Arc::new(Partition::from_volume(volume));
        let mut w = self.writer.lock();
        w.wal.append(&partition)?;
        let mut next = Snapshot::clone(&self.snapshot());
        if let Some(old) = next
            .memtable
            .insert(partition.id.clone(), partition.clone())
        {
            next.memtable_bytes -= old.approx_bytes();
        }
        next.memtable_bytes += partition.approx_bytes();
        let full = next.memtable_bytes >= self.opts.memtable_bytes;
        *self.state.write() = Arc::new(next);
        if full {
            self.flush_locked(&mut w)?;
        }
        Ok(())
    }

    /// Writes the memtable out as a new segment.
    pub fn flush(&self) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        self.flush_locked(&mut w)
    }

    fn flush_locked(&self, w: &mut Writer) -> Result<(), StoreError> {
        let snap = self.snapshot();
        if snap.memtable.is_empty() {
            return Ok(());
        }
        let number = w.manifest.next_segment;
        let segment = Segment::write(
            &self.dir,
            number,
            self.opts.codec,
            snap.memtable.values().map(|p| p.as_ref()),
        )
        .inspect_err(|_| {
            let _ = fs::remove_file(self.dir.join(Segment::file_name(number)));
        })?;
        let mut manifest = w.manifest.clone();
        manifest.next_segment = number + 1;
        manifest.segments.insert(0, number);
        manifest.store(&self.dir)?;
        w.manifest = manifest;
        w.wal.reset()?;
        let mut segments = snap.segments.clone();
        segments.insert(0, Arc::new(segment));
        *self.state.write() = Arc::new(Snapshot {
            memtable: BTreeMap::new(),
            memtable_bytes: 0,
            segments,
        });
        Ok(())
    }

    /// Flushes, then merges every segment into one holding only the newest
    /// version of each partition. Returns the segment count afterwards (0 for
    /// an empty store). On error the previous segments stay authoritative.
    pub fn compact(&self) -> Result<usize, StoreError> {
        let mut w = self.writer.lock();
        self.flush_locked(&mut w)?;
        let snap = self.snapshot();
        if snap.segments.len() <= 1 {
            return Ok(snap.segments.len());
        }
        let ids: BTreeSet<VolumeId> = snap
            .segments
            .iter()
            .flat_map(|s| s.ids().cloned())
            .collect();
        let mut merged = Vec::with_capacity(ids.len());
        for id in &ids {
            let newest = snap
                .segments
                .iter()
                .find(|s| s.contains(id))
                .expect("id came from a segment");
            merged.push(newest.get(id, true)?.expect("indexed block"));
        }
        let number = w.manifest.next_segment;
        let segment = Segment::write(&self.dir, number, self.opts.codec, merged.iter())
            .inspect_err(|_| {
                let _ = fs::remove_file(self.dir.join(Segment::file_name(number)));
            })?;
        let manifest = Manifest {
            next_segment: number + 1,
            segments: vec![number],
        };
        manifest.store(&self.dir)?;
        w.manifest = manifest;
        *self.state.write() = Arc::new(Snapshot {
            memtable: BTreeMap::new(),
            memtable_bytes: 0,
            segments: vec![Arc::new(segment)],
        });
        for old in &snap.segments {
            fs::remove_file(old.path())?;
        }
        Ok(1)
    }

    pub fn segment_count(&self) -> usize {
        self.snapshot().segments.len()
    }

    pub fn get_volume(&self, id: &VolumeId) -> Result<VolumeRecord, StoreError> {
        self.snapshot()
            .lookup(id, self.opts.verify_reads)?
            .map(|p| p.to_volume())
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    pub fn get_static(&self, id: &VolumeId) -> Result<StaticColumns, StoreError> {
        self.snapshot()
            .lookup(id, self.opts.verify_reads)?
            .map(|p| p.statics.clone())
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    /// Requested pages in request order; absent sequences come back as
    /// `Missing` rather than failing the request.
    pub fn get_pages(
        &self,
        id: &VolumeId,
        sequences: &[Sequence],
    ) -> Result<Vec<PageLookup>, StoreError> {
        if sequences.is_empty() {
            return Err(StoreError::EmptySequences);
        }
        let p = self
            .snapshot()
            .lookup(id, self.opts.verify_reads)?
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        Ok(select_pages(&p.rows, sequences))
    }

    pub fn filter_pages(
        &self,
        id: &VolumeId,
        predicate: &PagePredicate,
    ) -> Result<Vec<PageRecord>, StoreError> {
        let p = self
            .snapshot()
            .lookup(id, self.opts.verify_reads)?
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        Ok(p.rows
            .iter()
            .filter(|r| predicate.matches(r))
            .cloned()
            .collect())
    }

    /// Filters several volumes against one snapshot; each id gets its own result.
    pub fn filter_pages_many(
        &self,
        ids: &[VolumeId],
        predicate: &PagePredicate,
    ) -> Vec<(VolumeId, Result<Vec<PageRecord>, StoreError>)> {
        let snap = self.snapshot();
        ids.iter()
            .map(|id| {
                let r = snap.lookup(id, self.opts.verify_reads).and_then(|p| {
                    p.map(|p| {
                        p.rows
                            .iter()
                            .filter(|r| predicate.matches(r))
                            .cloned()
                            .collect()
                    })
                    .ok_or_else(|| StoreError::NotFound(id.clone()))
                });
                (id.clone(), r)
            })
            .collect()
    }

    /// Every stored partition once, in id order.
    pub fn scan_ids(&self) -> Vec<VolumeId> {
        let snap = self.snapshot();
        let mut ids: BTreeSet<VolumeId> = snap.memtable.keys().cloned().collect();
        for seg in &snap.segments {
            ids.extend(seg.ids().cloned());
        }
        ids.into_iter().collect()
    }

    /// Full scan of the live data: every block checksum and every page
    /// checksum. Returns the number of partitions checked.
    pub fn verify(&self) -> Result<usize, StoreError> {
        let snap = self.snapshot();
        for seg in &snap.segments {
            for i in 0..seg.len() {
                seg.read_block(i, true)?;
            }
        }
        for p in snap.memtable.values() {
            if let Some(bad) = p.rows.iter().find(|r| !r.verify()) {
                return Err(StoreError::Corruption(format!(
                    "{} page {}",
                    p.id,
                    bad.sequence()
                )));
            }
        }
        Ok(self.scan_ids().len())
    }
}

pub(crate) fn select_pages(rows: &[PageRecord], sequences: &[Sequence]) -> Vec<PageLookup> {
    sequences
        .iter()
        .map(
            |s| match rows.binary_search_by_key(s, PageRecord::sequence) {
                Ok(i) => PageLookup::Found(rows[i].clone()),
                Err(_) => PageLookup::Missing(*s),
            },
        )
        .collect()
}
