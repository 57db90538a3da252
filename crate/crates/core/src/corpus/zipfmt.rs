use std::io::{Cursor, Read, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::{ChecksumType, CorpusError, PageRecord, Sequence, VolumeId, VolumeRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZipMethod {
    #[default]
    Stored,
    Deflated,
}

/// Parses a zip-per-volume archive whose entries are `<sequence>.txt` pages.
///
/// Directory entries are skipped and any leading path inside the entry name is
/// ignored. The zip carries page text only, so the volume-level columns get
/// defaults (access level 0, language `und`).
pub fn parse_volume_zip(bytes: &[u8], id: VolumeId) -> Result<VolumeRecord, CorpusError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| CorpusError::MalformedArchive(e.to_string()))?;
    let mut pages = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let mut entry = archive
            .by_index(i)
            .map_err(|e| CorpusError::MalformedArchive(e.to_string()))?;
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_string();
        let sequence = entry_sequence(&name)?;
        let mut raw = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut raw)
            .map_err(|e| CorpusError::MalformedArchive(format!("{name}: {e}")))?;
        let text = String::from_utf8(raw).map_err(|_| CorpusError::NonUtf8Page(name))?;
        pages.push(PageRecord::new(sequence, text, ChecksumType::Sha256));
    }
    VolumeRecord::new(id, pages, 0, VolumeRecord::DEFAULT_LANGUAGE)
}

fn entry_sequence(name: &str) -> Result<Sequence, CorpusError> {
    let base = name.rsplit('/').next().unwrap_or(name);
    base.strip_suffix(".txt")
        .and_then(|stem| stem.parse::<Sequence>().ok())
        .ok_or_else(|| CorpusError::BadEntryName(name.to_string()))
}

/// Serializes page contents as a zip archive. Output is deterministic: entries
/// are written in sequence order with a fixed timestamp.
pub fn write_volume_zip(volume: &VolumeRecord, method: ZipMethod) -> Result<Vec<u8>, CorpusError> {
    let capacity = match method {
        ZipMethod::Stored => stored_archive_len(volume) as usize,
        ZipMethod::Deflated => volume.volume_byte_count() as usize / 2,
    };
    let mut writer = ZipWriter::new(Cursor::new(Vec::with_capacity(capacity)));
    let options = SimpleFileOptions::default()
        .compression_method(match method {
            ZipMethod::Stored => CompressionMethod::Stored,
            ZipMethod::Deflated => CompressionMethod::Deflated,
        })
        .last_modified_time(DateTime::default());
    let zip_err = |e: zip::result::ZipError| CorpusError::MalformedArchive(e.to_string());
    for page in volume.pages() {
        writer
            .start_file(page.sequence().entry_name(), options)
            .map_err(zip_err)?;
        writer.write_all(page.contents().as_bytes())?;
    }
    Ok(writer.finish().map_err(zip_err)?.into_inner())
}

const LOCAL_HEADER: u64 = 30;
const CENTRAL_HEADER: u64 = 46;
pub(crate) const END_OF_CENTRAL_DIR: u64 = 22;
/// Stored-zip bytes per page beyond its contents: both headers plus the entry name twice.
pub(crate) const PAGE_FRAMING: u64 =
    LOCAL_HEADER + CENTRAL_HEADER + 2 * (Sequence::WIDTH as u64 + 4);

/// Exact byte length of `write_volume_zip(volume, ZipMethod::Stored)`, computed
/// without building the archive. This is the compressed-size measure used for
/// corpus statistics.
pub fn stored_archive_len(volume: &VolumeRecord) -> u64 {
    volume.volume_byte_count() + PAGE_FRAMING * volume.pages().len() as u64 + END_OF_CENTRAL_DIR
}
