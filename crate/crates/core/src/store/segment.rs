use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::corpus::VolumeId;

use super::format::{put_str16, Partition, Reader};
use super::{Codec, StoreError};

const MAGIC: &[u8; 8] = b"PVSEG001";
const FOOTER_MAGIC: &[u8; 8] = b"PVSEGEND";
const FOOTER_LEN: u64 = 8 + 4 + 4 + 8;

/// Immutable sorted run of partitions.
///
/// ```text
/// header  := magic[8] codec:u8
/// block*  := len:u32 crc32:u32 data[len]        (data = codec(partition))
/// index   := count:u32 (id:str16 offset:u64 len:u32)*
/// footer  := index_offset:u64 index_len:u32 index_crc32:u32 magic[8]
/// ```
pub(crate) struct Segment {
    path: PathBuf,
    file: File,
    codec: Codec,
    index: Vec<(VolumeId, u64, u32)>,
}

impl Segment {
    pub fn file_name(number: u64) -> String {
        format!("seg-{number}.dat")
    }

    /// Writes `partitions` (which must be sorted by id with no repeats) to a new
    /// segment file and syncs it.
    pub fn write<'a, I>(
        dir: &Path,
        number: u64,
        codec: Codec,
        partitions: I,
    ) -> Result<Segment, StoreError>
    where
        I: IntoIterator<Item = &'a Partition>,
    {
        let path = dir.join(Self::file_name(number));
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(&path)?;
        let mut out = BufWriter::new(&file);
        out.write_all(MAGIC)?;
        out.write_all(&[codec.tag()])?;
        let mut offset = MAGIC.len() as u64 + 1;
        let mut index: Vec<(VolumeId, u64, u32)> = Vec::new();
        let mut raw = Vec::new();
        for p in partitions {
            if index.last().is_some_and(|(last, _, _)| *last >= p.id) {
                return Err(StoreError::Corruption(format!(
                    "segment keys not increasing at {}",
                    p.id
                )));
            }
            raw.clear();
            p.encode(&mut raw);
            let data = codec.compress(&raw)?;
            out.write_all(&(data.len() as u32).to_le_bytes())?;
            out.write_all(&crc32fast::hash(&data).to_le_bytes())?;
            out.write_all(&data)?;
            index.push((p.id.clone(), offset, data.len() as u32));
            offset += 8 + data.len() as u64;
        }
        let mut idx = Vec::new();
        idx.extend_from_slice(&(index.len() as u32).to_le_bytes());
        for (id, off, len) in &index {
            put_str16(&mut idx, id.as_str());
            idx.extend_from_slice(&off.to_le_bytes());
            idx.extend_from_slice(&len.to_le_bytes());
        }
        out.write_all(&idx)?;
        out.write_all(&offset.to_le_bytes())?;
        out.write_all(&(idx.len() as u32).to_le_bytes())?;
        out.write_all(&crc32fast::hash(&idx).to_le_bytes())?;
        out.write_all(FOOTER_MAGIC)?;
        out.flush()?;
        drop(out);
        file.sync_all()?;
        Ok(Segment {
            path,
            file,
            codec,
            index,
        })
    }

    pub fn open(dir: &Path, number: u64) -> Result<Segment, StoreError> {
        let path = dir.join(Self::file_name(number));
        let file = File::open(&path)?;
        let len = file.metadata()?.len();
        let bad = |msg: &str| StoreError::Corruption(format!("{}: {msg}", path.display()));
        if len < MAGIC.len() as u64 + 1 + FOOTER_LEN {
            return Err(bad("too short"));
        }
        let mut header = [0u8; 9];
        file.read_exact_at(&mut header, 0)?;
        if &header[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let codec = Codec::from_tag(header[8]).ok_or_else(|| bad("unknown codec"))?;
        let mut footer = [0u8; FOOTER_LEN as usize];
        file.read_exact_at(&mut footer, len - FOOTER_LEN)?;
        if &footer[16..] != FOOTER_MAGIC {
            return Err(bad("bad footer magic"));
        }
        let index_offset = u64::from_le_bytes(footer[..8].try_into().unwrap());
        let index_len = u32::from_le_bytes(footer[8..12].try_into().unwrap()) as u64;
        let index_crc = u32::from_le_bytes(footer[12..16].try_into().unwrap());
        if index_offset.checked_add(index_len) != Some(len - FOOTER_LEN) {
            return Err(bad("index bounds"));
        }
        let mut idx = vec![0u8; index_len as usize];
        file.read_exact_at(&mut idx, index_offset)?;
        if crc32fast::hash(&idx) != index_crc {
            return Err(bad("index checksum"));
        }
        let mut r = Reader { buf: &idx, pos: 0 };
        let count = r.u32()? as usize;
        let mut index: Vec<(VolumeId, u64, u32)> = Vec::with_capacity(count);
        for _ in 0..count {
            let id = VolumeId::new(r.str16()?).map_err(|_| bad("empty id in index"))?;
            let off = r.u64()?;
            let blen = r.u32()?;
            if index.last().is_some_and(|(last, _, _)| *last >= id) {
                return Err(bad("index keys not increasing"));
            }
            if off + 8 + blen as u64 > index_offset {
                return Err(bad("block beyond data region"));
            }
            index.push((id, off, blen));
        }
        Ok(Segment {
            path,
            file,
            codec,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn ids(&self) -> impl Iterator<Item = &VolumeId> {
        self.index.iter().map(|(id, _, _)| id)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: &VolumeId) -> bool {
        self.index.binary_search_by(|(k, _, _)| k.cmp(id)).is_ok()
    }

    pub fn get(
        &self,
        id: &VolumeId,
        verify_checksums: bool,
    ) -> Result<Option<Partition>, StoreError> {
        match self.index.binary_search_by(|(k, _, _)| k.cmp(id)) {
            Ok(i) => self.read_block(i, verify_checksums).map(Some),
            Err(_) => Ok(None),
        }
    }

    pub fn read_block(&self, i: usize, verify_checksums: bool) -> Result<Partition, StoreError> {
        let (id, off, len) = &self.index[i];
        let mut block = vec![0u8; 8 + *len as usize];
        self.file.read_exact_at(&mut block, *off)?;
        let stored_len = u32::from_le_bytes(block[..4].try_into().unwrap());
        let crc = u32::from_le_bytes(block[4..8].try_into().unwrap());
        let data = &block[8..];
        if stored_len != *len || crc32fast::hash(data) != crc {
            return Err(StoreError::Corruption(format!(
                "{}: block checksum mismatch for {id}",
                self.path.display()
            )));
        }
        let raw = self.codec.decompress(data)?;
        let p = Partition::decode(&raw, verify_checksums)?;
        if &p.id != id {
            return Err(StoreError::Corruption(format!(
                "block for {id} holds {}",
                p.id
            )));
        }
        Ok(p)
    }
}
