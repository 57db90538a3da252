use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::format::Partition;
use super::StoreError;

const MAGIC: &[u8; 8] = b"PVWAL001";
const REPLACE: u8 = 1;

/// Append-only log of full-partition replacements.
///
/// Record framing: `len:u32 crc32:u32 payload[len]`, payload = `kind:u8 partition`.
/// A replace record is the partition tombstone and the new rows at once, so a
/// torn record loses the whole replacement and never half of it.
pub(crate) struct Wal {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl Wal {
    /// Opens (or creates) the log and returns the partitions it holds.
    /// A torn or corrupt tail is truncated away.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Vec<Partition>), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            if !buf.is_empty() && buf.len() >= MAGIC.len() {
                return Err(StoreError::Corruption(format!(
                    "{} has a bad header",
                    path.display()
                )));
            }
            // empty or torn header: start over
            file.set_len(0)?;
            file.seek(SeekFrom::Start(0))?;
            file.write_all(MAGIC)?;
            file.sync_data()?;
            buf = MAGIC.to_vec();
        }
        let mut pos = MAGIC.len();
        let mut replayed = Vec::new();
        while let Some((partition, next)) = read_record(&buf, pos) {
            replayed.push(partition);
            pos = next;
        }
        if pos != buf.len() {
            file.set_len(pos as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                sync,
            },
            replayed,
        ))
    }

    pub fn append(&mut self, partition: &Partition) -> Result<(), StoreError> {
        let mut payload = vec![REPLACE];
        partition.encode(&mut payload);
        let mut record = Vec::with_capacity(payload.len() + 8);
        record.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        record.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        record.extend_from_slice(&payload);
        self.file.write_all(&record)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Replaces the log with an empty one once its contents are in a segment.
    pub fn reset(&mut self) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}

fn read_record(buf: &[u8], pos: usize) -> Option<(Partition, usize)> {
    let header = buf.get(pos..pos + 8)?;
    let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(header[4..].try_into().unwrap());
    let payload = buf.get(pos + 8..(pos + 8).checked_add(len)?)?;
    if crc32fast::hash(payload) != crc || payload.first() != Some(&REPLACE) {
        return None;
    }
    let partition = Partition::decode(&payload[1..], false).ok()?;
    Some((partition, pos + 8 + len))
}
