//! Volumes, pages and their structural metadata.
//!
//! A volume is an ordered run of OCR pages plus a handful of volume-level
//! columns. Pages arrive as one zip archive per volume (`<sequence>.txt`
//! entries) stored under a pairtree directory layout.

mod id;
mod pairtree;
mod stats;
mod synth;
mod validate;
mod zipfmt;

use std::fmt;
use std::str::FromStr;

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use id::{Sequence, VolumeId};
pub use pairtree::{ingest_pairtree, pairtree_path, write_pairtree, IngestError, PairtreeIngest};
pub use stats::{corpus_stats, write_stats_csv, SizeStats};
pub use synth::{synth_corpus, SynthCorpus, REFERENCE_SIZE_MODEL};
pub use validate::{
    derive_structural, validate_volume, Mismatch, StructuralMetadata, ValidationReport,
};
pub use zipfmt::{parse_volume_zip, stored_archive_len, write_volume_zip, ZipMethod};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("volume id must be non-empty")]
    EmptyVolumeId,
    #[error("malformed encoded volume id {0:?}")]
    BadEncodedId(String),
    #[error("malformed page sequence {0:?}")]
    BadSequence(String),
    #[error("duplicate page sequence {0}")]
    DuplicateSequence(Sequence),
    #[error("malformed zip archive: {0}")]
    MalformedArchive(String),
    #[error("zip entry {0:?} is not named <sequence>.txt")]
    BadEntryName(String),
    #[error("zip entry {0:?} is not valid UTF-8")]
    NonUtf8Page(String),
    #[error("page {sequence}: {reason}")]
    InconsistentPage { sequence: Sequence, reason: String },
    #[error("structural metadata is for {metadata}, volume is {volume}")]
    IdMismatch {
        volume: VolumeId,
        metadata: VolumeId,
    },
    #[error("structural metadata: {0}")]
    BadStructural(String),
    #[error("unknown checksum type {0:?}")]
    UnknownChecksumType(String),
    #[error("no volumes to summarize")]
    EmptyCorpus,
    #[error("size model: {0}")]
    BadSizeModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChecksumType {
    #[serde(rename = "MD5")]
    Md5,
    #[serde(rename = "SHA256")]
    Sha256,
}

impl ChecksumType {
    pub fn digest_hex(self, data: &[u8]) -> String {
        match self {
            ChecksumType::Md5 => hex::encode(Md5::digest(data)),
            ChecksumType::Sha256 => hex::encode(Sha256::digest(data)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChecksumType::Md5 => "MD5",
            ChecksumType::Sha256 => "SHA256",
        }
    }
}

impl fmt::Display for ChecksumType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChecksumType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MD5" => Ok(ChecksumType::Md5),
            "SHA256" | "SHA-256" => Ok(ChecksumType::Sha256),
            _ => Err(CorpusError::UnknownChecksumType(s.to_string())),
        }
    }
}

/// One page row. Counts and checksum always describe `contents`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    sequence: Sequence,
    contents: String,
    byte_count: u64,
    character_count: u64,
    checksum: String,
    checksum_type: ChecksumType,
    page_number_label: Option<String>,
}

impl PageRecord {
    pub fn new(
        sequence: Sequence,
        contents: impl Into<String>,
        checksum_type: ChecksumType,
    ) -> Self {
        let contents = contents.into();
        Self {
            sequence,
            byte_count: contents.len() as u64,
            character_count: contents.chars().count() as u64,
            checksum: checksum_type.digest_hex(contents.as_bytes()),
            checksum_type,
            contents,
            page_number_label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.page_number_label = Some(label.into());
        self
    }

    /// Rebuilds a page from stored columns, rejecting rows whose counts or
    /// checksum disagree with the contents.
    pub fn from_parts(
        sequence: Sequence,
        contents: String,
        checksum: String,
        checksum_type: ChecksumType,
        page_number_label: Option<String>,
    ) -> Result<Self, CorpusError> {
        let page = Self {
            page_number_label,
            ..Self::new(sequence, contents, checksum_type)
        };
        if !page.checksum.eq_ignore_ascii_case(&checksum) {
            return Err(CorpusError::InconsistentPage {
                sequence,
                reason: format!("stored checksum {checksum} does not match contents"),
            });
        }
        Ok(page)
    }

    /// Trusts `checksum` without rehashing; for rows already protected by a
    /// block checksum.
    pub(crate) fn new_unchecked(
        sequence: Sequence,
        contents: String,
        checksum: String,
        checksum_type: ChecksumType,
    ) -> Self {
        Self {
            sequence,
            byte_count: contents.len() as u64,
            character_count: contents.chars().count() as u64,
            checksum,
            checksum_type,
            contents,
            page_number_label: None,
        }
    }

    pub fn sequence(&self) -> Sequence {
        self.sequence
    }

    pub fn contents(&self) -> &str {
        &self.contents
    }

    pub fn byte_count(&self) -> u64 {
        self.byte_count
    }

    pub fn character_count(&self) -> u64 {
        self.character_count
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn checksum_type(&self) -> ChecksumType {
        self.checksum_type
    }

    pub fn page_number_label(&self) -> Option<&str> {
        self.page_number_label.as_deref()
    }

    /// Recomputes the checksum over the contents.
    pub fn verify(&self) -> bool {
        self.checksum_type
            .digest_hex(self.contents.as_bytes())
            .eq_ignore_ascii_case(&self.checksum)
    }
}

/// A volume: ordered pages plus the volume-level (static) columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeRecord {
    id: VolumeId,
    pages: Vec<PageRecord>,
    access_level: i32,
    language: String,
    volume_byte_count: u64,
    volume_character_count: u64,
}

impl VolumeRecord {
    pub const DEFAULT_LANGUAGE: &'static str = "und";

    /// Sorts pages by sequence and derives the volume aggregates.
    pub fn new(
        id: VolumeId,
        mut pages: Vec<PageRecord>,
        access_level: i32,
        language: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        pages.sort_by_key(|p| p.sequence);
        if let Some(w) = pages.windows(2).find(|w| w[0].sequence == w[1].sequence) {
            return Err(CorpusError::DuplicateSequence(w[0].sequence));
        }
        Ok(Self {
            volume_byte_count: pages.iter().map(|p| p.byte_count).sum(),
            volume_character_count: pages.iter().map(|p| p.character_count).sum(),
            id,
            pages,
            access_level,
            language: language.into(),
        })
    }

    pub fn id(&self) -> &VolumeId {
        &self.id
    }

    pub fn pages(&self) -> &[PageRecord] {
        &self.pages
    }

    pub fn into_pages(self) -> Vec<PageRecord> {
        self.pages
    }

    pub fn page(&self, sequence: Sequence) -> Option<&PageRecord> {
        self.pages
            .binary_search_by_key(&sequence, |p| p.sequence)
            .ok()
            .map(|i| &self.pages[i])
    }

    pub fn access_level(&self) -> i32 {
        self.access_level
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn volume_byte_count(&self) -> u64 {
        self.volume_byte_count
    }

    pub fn volume_character_count(&self) -> u64 {
        self.volume_character_count
    }
}
