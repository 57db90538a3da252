//! Binary layout of a partition (one volume) as it appears in log records
//! and segment blocks.
//!
//! ```text
//! partition := id:str16 access:i32 language:str16 vbytes:u64 vchars:u64 rows:u32 row*
//! row       := seq:u32 bytes:u64 chars:u64 sumtype:u8 checksum:str16 label:opt_str16 contents:str32
//! ```
//! All integers are little-endian. Static columns appear once per partition.

use std::sync::Arc;

use crate::corpus::{ChecksumType, PageRecord, Sequence, VolumeId, VolumeRecord};

use super::{StaticColumns, StoreError};

/// A stored volume: static columns plus its rows ordered by clustering key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Partition {
    pub id: VolumeId,
    pub statics: StaticColumns,
    pub rows: Arc<Vec<PageRecord>>,
}

impl Partition {
    pub fn from_volume(v: &VolumeRecord) -> Self {
        Self {
            id: v.id().clone(),
            statics: StaticColumns::of(v),
            rows: Arc::new(v.pages().to_vec()),
        }
    }

    pub fn to_volume(&self) -> VolumeRecord {
        VolumeRecord::new(
            self.id.clone(),
            self.rows.as_ref().clone(),
            self.statics.access_level,
            self.statics.language.clone(),
        )
        .expect("stored rows are unique and sorted")
    }

    pub fn approx_bytes(&self) -> usize {
        self.rows
            .iter()
            .map(|p| p.byte_count() as usize + 96)
            .sum::<usize>()
            + 64
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        put_str16(out, self.id.as_str());
        out.extend_from_slice(&self.statics.access_level.to_le_bytes());
        put_str16(out, &self.statics.language);
        out.extend_from_slice(&self.statics.volume_byte_count.to_le_bytes());
        out.extend_from_slice(&self.statics.volume_character_count.to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for p in self.rows.iter() {
            out.extend_from_slice(&p.sequence().number().to_le_bytes());
            out.extend_from_slice(&p.byte_count().to_le_bytes());
            out.extend_from_slice(&p.character_count().to_le_bytes());
            out.push(match p.checksum_type() {
                ChecksumType::Md5 => 0,
                ChecksumType::Sha256 => 1,
            });
            put_str16(out, p.checksum());
            match p.page_number_label() {
                Some(label) => {
                    out.push(1);
                    put_str16(out, label);
                }
                None => out.push(0),
            }
            out.extend_from_slice(&(p.contents().len() as u32).to_le_bytes());
            out.extend_from_slice(p.contents().as_bytes());
        }
    }

    /// Decodes a partition. Row counts are checked against contents; page
    /// checksums are only recomputed when `verify_checksums` is set.
    pub fn decode(buf: &[u8], verify_checksums: bool) -> Result<Self, StoreError> {
        let mut r = Reader { buf, pos: 0 };
        let id = VolumeId::new(r.str16()?).map_err(|e| corrupt(e.to_string()))?;
        let access_level = i32::from_le_bytes(r.array()?);
        let language = r.str16()?;
        let volume_byte_count = r.u64()?;
        let volume_character_count = r.u64()?;
        let n = r.u32()? as usize;
        let mut rows = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let sequence = Sequence::new(r.u32()?).map_err(|e| corrupt(e.to_string()))?;
            let bytes = r.u64()?;
            let chars = r.u64()?;
            let kind = match r.u8()? {
                0 => ChecksumType::Md5,
                1 => ChecksumType::Sha256,
                k => return Err(corrupt(format!("checksum type tag {k}"))),
            };
            let checksum = r.str16()?;
            let label = match r.u8()? {
                0 => None,
                1 => Some(r.str16()?),
                t => return Err(corrupt(format!("label tag {t}"))),
            };
            let len = r.u32()? as usize;
            let contents = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| corrupt("non-UTF-8 contents"))?;
            let page = if verify_checksums {
                PageRecord::from_parts(sequence, contents, checksum, kind, label)
                    .map_err(|e| corrupt(e.to_string()))?
            } else {
                let mut p = PageRecord::new_unchecked(sequence, contents, checksum, kind);
                if let Some(l) = label {
                    p = p.with_label(l);
                }
                p
            };
            if page.byte_count() != bytes || page.character_count() != chars {
                return Err(corrupt(format!(
                    "row {sequence} counts disagree with contents"
                )));
            }
            if rows
                .last()
                .is_some_and(|prev: &PageRecord| prev.sequence() >= sequence)
            {
                return Err(corrupt(format!("row {sequence} out of clustering order")));
            }
            rows.push(page);
        }
        if r.pos != buf.len() {
            return Err(corrupt("trailing bytes after partition"));
        }
        let statics = StaticColumns {
            access_level,
            language,
            volume_byte_count,
            volume_character_count,
        };
        if rows.iter().map(PageRecord::byte_count).sum::<u64>() != volume_byte_count
            || rows.iter().map(PageRecord::character_count).sum::<u64>() != volume_character_count
        {
            return Err(corrupt(format!("static totals of {id} disagree with rows")));
        }
        Ok(Self {
            id,
            statics,
            rows: Arc::new(rows),
        })
    }
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::Corruption(msg.into())
}

pub(crate) fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("short string column over 64 KiB");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated record"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn str16(&mut self) -> Result<String, StoreError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("non-UTF-8 string column"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Partition {
        let pages = vec![
            PageRecord::new(Sequence::new(1).unwrap(), "", ChecksumType::Md5),
            PageRecord::new(
                Sequence::new(2).unwrap(),
                "Zweite Seite, äöü",
                ChecksumType::Sha256,
            )
            .with_label("ii"),
        ];
        Partition::from_volume(
            &VolumeRecord::new(VolumeId::new("a:b").unwrap(), pages, 3, "ger").unwrap(),
        )
    }

    #[test]
    fn round_trips() {
        let p = sample();
        let mut buf = Vec::new();
        p.encode(&mut buf);
        assert_eq!(Partition::decode(&buf, true).unwrap(), p);
        assert_eq!(Partition::decode(&buf, false).unwrap(), p);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corruption() {
        let mut buf = Vec::new();
        sample().encode(&mut buf);
        for cut in [0, 5, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(
                Partition::decode(&buf[..cut], false),
                Err(StoreError::Corruption(_))
            ));
        }
        buf.push(0);
        assert!(Partition::decode(&buf, false).is_err());
    }

    #[test]
    fn content_flip_caught_by_checksum_scan() {
        let mut buf = Vec::new();
        sample().encode(&mut buf);
        let last = buf.len() - 1;
        buf[last] ^= 0x01; // ü becomes ý, still valid UTF-8
        assert!(Partition::decode(&buf, false).is_ok());
        assert!(Partition::decode(&buf, true).is_err());
    }
}
