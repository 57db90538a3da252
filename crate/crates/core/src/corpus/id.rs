use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Identifier of a digitized volume.
///
/// Library identifiers routinely contain `:` and `/`, so every id has a
/// filesystem-safe encoding: bytes outside `[A-Za-z0-9._-]` become `+xx`
/// lowercase hex escapes of their UTF-8 encoding.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VolumeId(String);

impl VolumeId {
    pub fn new(value: impl Into<String>) -> Result<Self, CorpusError> {
        let value = value.into();
        if value.is_empty() {
            return Err(CorpusError::EmptyVolumeId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn encode_path(&self) -> String {
        let mut out = String::with_capacity(self.0.len());
        for b in self.0.bytes() {
            if is_path_safe(b) {
                out.push(b as char);
            } else {
                out.push('+');
                out.push_str(&format!("{b:02x}"));
            }
        }
        out
    }

    pub fn decode_path(encoded: &str) -> Result<Self, CorpusError> {
        let bad = || CorpusError::BadEncodedId(encoded.to_string());
        let bytes = encoded.as_bytes();
        let mut raw = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'+' => {
                    let hex = encoded.get(i + 1..i + 3).ok_or_else(bad)?;
                    raw.push(u8::from_str_radix(hex, 16).map_err(|_| bad())?);
                    i += 3;
                }
                b if is_path_safe(b) => {
                    raw.push(b);
                    i += 1;
                }
                _ => return Err(bad()),
            }
        }
        let value = String::from_utf8(raw).map_err(|_| bad())?;
        Self::new(value).map_err(|_| bad())
    }
}

fn is_path_safe(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-')
}

impl fmt::Display for VolumeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for VolumeId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for VolumeId {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<VolumeId> for String {
    fn from(id: VolumeId) -> Self {
        id.0
    }
}

impl AsRef<str> for VolumeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Page order key, rendered as an 8-digit zero-padded decimal so that
/// lexicographic and numeric order agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Sequence(u32);

impl Sequence {
    pub const WIDTH: usize = 8;
    pub const MAX: u32 = 99_999_999;

    pub fn new(n: u32) -> Result<Self, CorpusError> {
        if n > Self::MAX {
            return Err(CorpusError::BadSequence(n.to_string()));
        }
        Ok(Self(n))
    }

    pub fn number(self) -> u32 {
        self.0
    }

    /// Name of the zip entry holding this page.
    pub fn entry_name(self) -> String {
        format!("{self}.txt")
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}", self.0)
    }
}

impl FromStr for Sequence {
    type Err = CorpusError;

    /// Accepts 1 to 8 ASCII digits; shorter forms are normalized to the padded width.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.len() > Self::WIDTH || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CorpusError::BadSequence(s.to_string()));
        }
        let n = s
            .parse::<u32>()
            .map_err(|_| CorpusError::BadSequence(s.to_string()))?;
        Self::new(n)
    }
}

impl TryFrom<String> for Sequence {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Sequence> for String {
    fn from(s: Sequence) -> Self {
        s.to_string()
    }
}
