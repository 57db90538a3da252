use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;
use walkdir::WalkDir;

use super::{CorpusError, VolumeId};

/// A file under the pairtree root that could not be ingested.
#[derive(Debug, Error)]
#[error("{path}: {reason}")]
pub struct IngestError {
    pub path: PathBuf,
    pub reason: String,
}

/// Directory holding `<encodedId>.zip`: the encoded id split into 2-character
/// shingles below `root`.
pub fn pairtree_path(root: &Path, id: &VolumeId) -> PathBuf {
    let encoded = id.encode_path();
    let mut dir = root.to_path_buf();
    for shingle in encoded.as_bytes().chunks(2) {
        let shingle = std::str::from_utf8(shingle).expect("encoded ids are ASCII");
        // "." and ".." are not usable directory names.
        dir.push(match shingle {
            "." => "+2e",
            ".." => "+2e+2e",
            s => s,
        });
    }
    dir
}

pub fn write_pairtree(
    root: &Path,
    id: &VolumeId,
    zip_bytes: &[u8],
) -> Result<PathBuf, CorpusError> {
    let dir = pairtree_path(root, id);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.zip", id.encode_path()));
    fs::write(&path, zip_bytes)?;
    Ok(path)
}

/// Streams every `<id>.zip` below `root` in file-name order. Unreadable or
/// corrupt archives surface as `Err` items and the walk continues.
pub struct PairtreeIngest {
    walk: walkdir::IntoIter,
}

pub fn ingest_pairtree(root: &Path) -> Result<PairtreeIngest, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("pairtree root {} is not a directory", root.display()),
        )));
    }
    Ok(PairtreeIngest {
        walk: WalkDir::new(root).sort_by_file_name().into_iter(),
    })
}

impl Iterator for PairtreeIngest {
    type Item = Result<(VolumeId, Vec<u8>), IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let entry = match self.walk.next()? {
                Ok(e) => e,
                Err(e) => {
                    return Some(Err(IngestError {
                        path: e.path().map(Path::to_path_buf).unwrap_or_default(),
                        reason: e.to_string(),
                    }))
                }
            };
            if !entry.file_type().is_file() {
                continue;
            }
            let path = entry.path();
            let Some(stem) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".zip"))
            else {
                continue;
            };
            return Some(load(path, stem));
        }
    }
}

fn load(path: &Path, stem: &str) -> Result<(VolumeId, Vec<u8>), IngestError> {
    let fail = |reason: String| IngestError {
        path: path.to_path_buf(),
        reason,
    };
    let id = VolumeId::decode_path(stem).map_err(|e| fail(e.to_string()))?;
    let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
    zip::ZipArchive::new(Cursor::new(&bytes)).map_err(|e| fail(format!("corrupt archive: {e}")))?;
    Ok((id, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        write_volume_zip, ChecksumType, PageRecord, Sequence, VolumeRecord, ZipMethod,
    };

    fn tiny_zip(id: &VolumeId) -> Vec<u8> {
        let page = PageRecord::new(Sequence::new(1).unwrap(), id.as_str(), ChecksumType::Sha256);
        let v = VolumeRecord::new(id.clone(), vec![page], 0, "und").unwrap();
        write_volume_zip(&v, ZipMethod::Deflated).unwrap()
    }

    #[test]
    fn shingles_the_encoded_id() {
        let id = VolumeId::new("mdp.3901").unwrap();
        let p = pairtree_path(Path::new("/r"), &id);
        assert_eq!(p, Path::new("/r/md/p./39/01"));
        let odd = VolumeId::new("ab..c").unwrap();
        assert_eq!(
            pairtree_path(Path::new("/r"), &odd),
            Path::new("/r/ab/+2e+2e/c")
        );
    }

    #[test]
    fn empty_root_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(ingest_pairtree(dir.path()).unwrap().count(), 0);
        assert!(ingest_pairtree(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn nested_volumes_match_directory_walk() {
        let dir = tempfile::tempdir().unwrap();
        let ids = ["uc1.b000", "mdp.39015012345", "hvd:32044/x"].map(|s| VolumeId::new(s).unwrap());
        for id in &ids {
            write_pairtree(dir.path(), id, &tiny_zip(id)).unwrap();
        }
        let mut walked: Vec<String> = WalkDir::new(dir.path())
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| {
                e.file_name()
                    .to_string_lossy()
                    .trim_end_matches(".zip")
                    .to_string()
            })
            .map(|s| VolumeId::decode_path(&s).unwrap().to_string())
            .collect();
        walked.sort();
        let mut got: Vec<String> = ingest_pairtree(dir.path())
            .unwrap()
            .map(|r| r.unwrap().0.to_string())
            .collect();
        got.sort();
        assert_eq!(got, walked);
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn corrupt_zip_is_recorded_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            let id = VolumeId::new(format!("vol{i:02}")).unwrap();
            let bytes = if i == 4 {
                b"PK\x03\x04 truncated".to_vec()
            } else {
                tiny_zip(&id)
            };
            write_pairtree(dir.path(), &id, &bytes).unwrap();
        }
        let items: Vec<_> = ingest_pairtree(dir.path()).unwrap().collect();
        let ok = items.iter().filter(|r| r.is_ok()).count();
        let errors: Vec<_> = items.iter().filter_map(|r| r.as_ref().err()).collect();
        assert_eq!(ok, 9);
        assert_eq!(errors.len(), 1);
        assert!(errors[0].path.ends_with("vol04.zip"));
    }

    #[test]
    fn traversal_order_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["zz", "aa", "mm.1", "mm.0"] {
            let id = VolumeId::new(s).unwrap();
            write_pairtree(dir.path(), &id, &tiny_zip(&id)).unwrap();
        }
        let run = || -> Vec<String> {
            ingest_pairtree(dir.path())
                .unwrap()
                .map(|r| r.unwrap().0.to_string())
                .collect()
        };
        assert_eq!(run(), run());
    }
}
