use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use super::StoreError;

const HEADER: &str = "PVMANIFEST 1";

/// Live segment numbers, newest first, plus the next number to allocate.
///
/// Text layout, one item per line, closed by a CRC-32 of everything before it:
/// `PVMANIFEST 1`, `next <n>`, `segment <n>`..., `crc <hex>`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct Manifest {
    pub next_segment: u64,
    pub segments: Vec<u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Manifest>, StoreError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let bad = |m: &str| StoreError::Corruption(format!("MANIFEST: {m}"));
        let body_end = text.rfind("crc ").ok_or_else(|| bad("missing crc"))?;
        let (body, crc_line) = text.split_at(body_end);
        let crc = u32::from_str_radix(crc_line.trim_start_matches("crc ").trim(), 16)
            .map_err(|_| bad("bad crc"))?;
        if crc32fast::hash(body.as_bytes()) != crc {
            return Err(bad("crc mismatch"));
        }
        let mut lines = body.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("bad header"));
        }
        let mut m = Manifest::default();
        for line in lines {
            let (key, value) = line.split_once(' ').ok_or_else(|| bad(line))?;
            let n: u64 = value.parse().map_err(|_| bad(line))?;
            match key {
                "next" => m.next_segment = n,
                "segment" => m.segments.push(n),
                _ => return Err(bad(line)),
            }
        }
        if m.segments.iter().any(|&s| s >= m.next_segment) {
            return Err(bad("segment number beyond next"));
        }
        Ok(Some(m))
    }

    /// Atomically replaces the manifest (write temp, fsync, rename, fsync dir).
    pub fn store(&self, dir: &Path) -> Result<(), StoreError> {
        let mut body = format!("{HEADER}\nnext {}\n", self.next_segment);
        for s in &self.segments {
            body.push_str(&format!("segment {s}\n"));
        }
        let crc = crc32fast::hash(body.as_bytes());
        body.push_str(&format!("crc {crc:08x}\n"));
        let tmp = dir.join("MANIFEST.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join("MANIFEST"))?;
        File::open(dir)?.sync_all()?;
        Ok(())
    }
}
