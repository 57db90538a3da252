use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{ChecksumType, CorpusError, Sequence, VolumeId, VolumeRecord};

/// Per-page sizes and checksums published alongside a volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralMetadata {
    id: VolumeId,
    page_count: usize,
    per_page_checksums: Vec<(Sequence, String, ChecksumType)>,
    per_page_sizes: Vec<(Sequence, u64)>,
}

impl StructuralMetadata {
    pub fn new(
        id: VolumeId,
        page_count: usize,
        per_page_checksums: Vec<(Sequence, String, ChecksumType)>,
        per_page_sizes: Vec<(Sequence, u64)>,
    ) -> Result<Self, CorpusError> {
        if per_page_checksums.len() != page_count || per_page_sizes.len() != page_count {
            return Err(CorpusError::BadStructural(format!(
                "page count {page_count} but {} checksums and {} sizes",
                per_page_checksums.len(),
                per_page_sizes.len()
            )));
        }
        let increasing = |seqs: &mut dyn Iterator<Item = Sequence>| {
            let v: Vec<_> = seqs.collect();
            v.windows(2).all(|w| w[0] < w[1])
        };
        if !increasing(&mut per_page_checksums.iter().map(|c| c.0))
            || !increasing(&mut per_page_sizes.iter().map(|s| s.0))
        {
            return Err(CorpusError::BadStructural(
                "sequences not strictly increasing".into(),
            ));
        }
        if per_page_checksums
            .iter()
            .map(|c| c.0)
            .ne(per_page_sizes.iter().map(|s| s.0))
        {
            return Err(CorpusError::BadStructural(
                "checksum and size lists cover different pages".into(),
            ));
        }
        Ok(Self {
            id,
            page_count,
            per_page_checksums,
            per_page_sizes,
        })
    }

    pub fn id(&self) -> &VolumeId {
        &self.id
    }

    pub fn page_count(&self) -> usize {
        self.page_count
    }

    pub fn per_page_checksums(&self) -> &[(Sequence, String, ChecksumType)] {
        &self.per_page_checksums
    }

    pub fn per_page_sizes(&self) -> &[(Sequence, u64)] {
        &self.per_page_sizes
    }

    /// Drops the last page, as an incomplete metadata export would.
    pub fn without_last_page(&self) -> Self {
        let mut s = self.clone();
        s.per_page_checksums.pop();
        s.per_page_sizes.pop();
        s.page_count = s.per_page_sizes.len();
        s
    }
}

pub fn derive_structural(volume: &VolumeRecord) -> StructuralMetadata {
    let pages = volume.pages();
    StructuralMetadata {
        id: volume.id().clone(),
        page_count: pages.len(),
        per_page_checksums: pages
            .iter()
            .map(|p| (p.sequence(), p.checksum().to_string(), p.checksum_type()))
            .collect(),
        per_page_sizes: pages
            .iter()
            .map(|p| (p.sequence(), p.byte_count()))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mismatch {
    PageCount {
        expected: usize,
        actual: usize,
    },
    MissingPage(Sequence),
    UnexpectedPage(Sequence),
    Size {
        sequence: Sequence,
        expected: u64,
        actual: u64,
    },
    Checksum {
        sequence: Sequence,
        expected: String,
        actual: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mismatches: Vec<Mismatch>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Checks a volume's page text against its structural metadata.
///
/// Sizes and checksums are recomputed from the page contents, never taken
/// from the page's stored columns.
pub fn validate_volume(
    volume: &VolumeRecord,
    meta: &StructuralMetadata,
) -> Result<ValidationReport, CorpusError> {
    if volume.id() != meta.id() {
        return Err(CorpusError::IdMismatch {
            volume: volume.id().clone(),
            metadata: meta.id().clone(),
        });
    }
    let mut report = ValidationReport::default();
    if volume.pages().len() != meta.page_count {
        report.mismatches.push(Mismatch::PageCount {
            expected: meta.page_count,
            actual: volume.pages().len(),
        });
    }

    let mut pages = volume.pages().iter().peekable();
    let mut expected = meta
        .per_page_checksums
        .iter()
        .zip(&meta.per_page_sizes)
        .peekable();
    loop {
        let order = match (pages.peek(), expected.peek()) {
            (None, None) => break,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some(p), Some(((seq, _, _), _))) => p.sequence().cmp(seq),
        };
        match order {
            Ordering::Less => {
                let p = pages.next().unwrap();
                report
                    .mismatches
                    .push(Mismatch::UnexpectedPage(p.sequence()));
            }
            Ordering::Greater => {
                let ((seq, _, _), _) = expected.next().unwrap();
                report.mismatches.push(Mismatch::MissingPage(*seq));
            }
            Ordering::Equal => {
                let p = pages.next().unwrap();
                let ((seq, checksum, kind), (_, size)) = expected.next().unwrap();
                let bytes = p.contents().as_bytes();
                if bytes.len() as u64 != *size {
                    report.mismatches.push(Mismatch::Size {
                        sequence: *seq,
                        expected: *size,
                        actual: bytes.len() as u64,
                    });
                }
                let actual = kind.digest_hex(bytes);
                if !actual.eq_ignore_ascii_case(checksum) {
                    report.mismatches.push(Mismatch::Checksum {
                        sequence: *seq,
                        expected: checksum.clone(),
                        actual,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PageRecord;

    fn volume(n: u32) -> VolumeRecord {
        let pages = (1..=n)
            .map(|i| {
                PageRecord::new(
                    Sequence::new(i).unwrap(),
                    format!("page {i} text"),
                    ChecksumType::Sha256,
                )
            })
            .collect();
        VolumeRecord::new(VolumeId::new("vol").unwrap(), pages, 1, "eng").unwrap()
    }

    #[test]
    fn untampered_volume_is_clean() {
        let v = volume(12);
        assert!(validate_volume(&v, &derive_structural(&v))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn one_flipped_byte_is_one_checksum_mismatch() {
        let v = volume(12);
        let meta = derive_structural(&v);
        let mut pages = v.pages().to_vec();
        let mut bytes = pages[4].contents().as_bytes().to_vec();
        bytes[0] ^= 0x01;
        let tampered = String::from_utf8(bytes).unwrap();
        pages[4] = PageRecord::new(pages[4].sequence(), tampered.clone(), ChecksumType::Sha256);
        let v2 = VolumeRecord::new(v.id().clone(), pages, 1, "eng").unwrap();

        let report = validate_volume(&v2, &meta).unwrap();
        let expected_sum = ChecksumType::Sha256.digest_hex(tampered.as_bytes());
        assert_eq!(report.mismatches.len(), 1);
        match &report.mismatches[0] {
            Mismatch::Checksum {
                sequence, actual, ..
            } => {
                assert_eq!(sequence.to_string(), "00000005");
                assert_eq!(actual, &expected_sum);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_last_page_reports_page_count() {
        let v = volume(6);
        let meta = derive_structural(&v).without_last_page();
        let report = validate_volume(&v, &meta).unwrap();
        assert!(report.mismatches.contains(&Mismatch::PageCount {
            expected: 5,
            actual: 6
        }));
        assert!(report
            .mismatches
            .contains(&Mismatch::UnexpectedPage(Sequence::new(6).unwrap())));
    }

    #[test]
    fn md5_metadata_is_accepted() {
        let v = volume(3);
        let checks = v
            .pages()
            .iter()
            .map(|p| {
                (
                    p.sequence(),
                    ChecksumType::Md5.digest_hex(p.contents().as_bytes()),
                    ChecksumType::Md5,
                )
            })
            .collect();
        let sizes = v
            .pages()
            .iter()
            .map(|p| (p.sequence(), p.byte_count()))
            .collect();
        let meta = StructuralMetadata::new(v.id().clone(), 3, checks, sizes).unwrap();
        assert!(validate_volume(&v, &meta).unwrap().is_empty());
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let v = volume(2);
        let other = volume(2);
        let meta =
            StructuralMetadata::new(VolumeId::new("other").unwrap(), 0, vec![], vec![]).unwrap();
        assert!(matches!(
            validate_volume(&v, &meta),
            Err(CorpusError::IdMismatch { .. })
        ));
        assert!(validate_volume(&v, &derive_structural(&other))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn structural_constructor_checks_shape() {
        let id = VolumeId::new("x").unwrap();
        let s1 = Sequence::new(1).unwrap();
        let s2 = Sequence::new(2).unwrap();
        let c = |s| (s, "00".to_string(), ChecksumType::Md5);
        assert!(StructuralMetadata::new(id.clone(), 2, vec![c(s1)], vec![(s1, 0)]).is_err());
        assert!(
            StructuralMetadata::new(id.clone(), 2, vec![c(s2), c(s1)], vec![(s2, 0), (s1, 0)])
                .is_err()
        );
        assert!(StructuralMetadata::new(id, 2, vec![c(s1), c(s2)], vec![(s1, 0), (s2, 0)]).is_ok());
    }
}
