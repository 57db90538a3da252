use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{PageRecord, Sequence};

use super::StoreError;

/// Server-side page filters.
///
/// Text forms accepted by `FromStr`:
/// `byteCount > 0`, `characterCount >= <k>`, `sequence in [<a>,<b>]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PagePredicate {
    NonEmpty,
    MinCharacters(u64),
    SequenceRange { start: Sequence, end: Sequence },
}

impl PagePredicate {
    pub fn matches(&self, page: &PageRecord) -> bool {
        match self {
            PagePredicate::NonEmpty => page.byte_count() > 0,
            PagePredicate::MinCharacters(k) => page.character_count() >= *k,
            PagePredicate::SequenceRange { start, end } => {
                (*start..=*end).contains(&page.sequence())
            }
        }
    }
}

impl FromStr for PagePredicate {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unsupported = || StoreError::UnsupportedPredicate(s.to_string());
        let tokens: Vec<&str> = s.split_whitespace().collect();
        match tokens.as_slice() {
            ["byteCount", ">", "0"] => Ok(PagePredicate::NonEmpty),
            ["characterCount", ">=", k] => k
                .parse()
                .map(PagePredicate::MinCharacters)
                .map_err(|_| unsupported()),
            ["sequence", "in", rest @ ..] => {
                let range = rest.concat();
                let inner = range
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(unsupported)?;
                let (a, b) = inner.split_once(',').ok_or_else(unsupported)?;
                let start: Sequence = a.trim().parse().map_err(|_| unsupported())?;
                let end: Sequence = b.trim().parse().map_err(|_| unsupported())?;
                Ok(PagePredicate::SequenceRange { start, end })
            }
            _ => Err(unsupported()),
        }
    }
}

impl fmt::Display for PagePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PagePredicate::NonEmpty => write!(f, "byteCount > 0"),
            PagePredicate::MinCharacters(k) => write!(f, "characterCount >= {k}"),
            PagePredicate::SequenceRange { start, end } => write!(f, "sequence in [{start},{end}]"),
        }
    }
}

impl TryFrom<String> for PagePredicate {
    type Error = StoreError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PagePredicate> for String {
    fn from(p: PagePredicate) -> Self {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_supported_forms() {
        assert_eq!(
            "byteCount > 0".parse::<PagePredicate>().unwrap(),
            PagePredicate::NonEmpty
        );
        assert_eq!(
            "characterCount >= 40".parse::<PagePredicate>().unwrap(),
            PagePredicate::MinCharacters(40)
        );
        let r: PagePredicate = "sequence in [00000001, 00000005]".parse().unwrap();
        assert_eq!(
            r,
            PagePredicate::SequenceRange {
                start: Sequence::new(1).unwrap(),
                end: Sequence::new(5).unwrap()
            }
        );
        for p in [PagePredicate::NonEmpty, PagePredicate::MinCharacters(3), r] {
            assert_eq!(p.to_string().parse::<PagePredicate>().unwrap(), p);
        }
    }

    #[test]
    fn rejects_everything_else() {
        for s in [
            "byteCount > 1",
            "contents LIKE '%war%'",
            "sequence in 1,5",
            "characterCount >= -1",
            "",
        ] {
            assert!(
                matches!(
                    s.parse::<PagePredicate>(),
                    Err(StoreError::UnsupportedPredicate(_))
                ),
                "{s}"
            );
        }
    }
}
