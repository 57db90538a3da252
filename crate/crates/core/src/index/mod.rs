//! Inverted index over bibliographic records.
//!
//! Tokenization: lower-case the text, then split on Unicode word boundaries
//! (UAX #29) keeping only word segments. No stemming, no stop words.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::VolumeId;

pub const MAX_YEAR: u16 = 3000;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("publication year {0} outside 0..=3000")]
    BadYear(u32),
    #[error("query needs at least one field clause")]
    EmptyQuery,
    #[error("clause {field}:{text:?} has no indexable words")]
    NoTokens { field: Field, text: String },
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("bibliographic file line {line}: {reason}")]
    BadInput { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .unicode_words()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Author,
    Subject,
    Language,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Title, Field::Author, Field::Subject, Field::Language];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Author => "author",
            Field::Subject => "subject",
            Field::Language => "language",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Field {
    type Err = IndexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| IndexError::UnknownField(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibRecord {
    pub id: VolumeId,
    pub title: String,
    pub author: String,
    pub subject: String,
    pub language: String,
    pub year: u16,
}

impl BibRecord {
    pub fn new(
        id: VolumeId,
        title: impl Into<String>,
        author: impl Into<String>,
        subject: impl Into<String>,
        language: impl Into<String>,
        year: u32,
    ) -> Result<Self, IndexError> {
        if year > MAX_YEAR as u32 {
            return Err(IndexError::BadYear(year));
        }
        Ok(Self {
            id,
            title: title.into(),
            author: author.into(),
            subject: subject.into(),
            language: language.into(),
            year: year as u16,
        })
    }

    pub fn field(&self, f: Field) -> &str {
        match f {
            Field::Title => &self.title,
            Field::Author => &self.author,
            Field::Subject => &self.subject,
            Field::Language => &self.language,
        }
    }

    fn terms(&self) -> Vec<(Field, String)> {
        let mut out: Vec<(Field, String)> = Field::ALL
            .into_iter()
            .flat_map(|f| tokenize(self.field(f)).into_iter().map(move |t| (f, t)))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Conjunction of field clauses with an optional inclusive year range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MetaQueryWire")]
pub struct MetaQuery {
    clauses: Vec<(Field, String)>,
    years: Option<(u16, u16)>,
}

#[derive(Deserialize)]
struct MetaQueryWire {
    clauses: Vec<(Field, String)>,
    #[serde(default)]
    years: Option<(u16, u16)>,
}

impl TryFrom<MetaQueryWire> for MetaQuery {
    type Error = IndexError;
    fn try_from(w: MetaQueryWire) -> Result<Self, Self::Error> {
        MetaQuery::new(&w.clauses, w.years.map(|(a, b)| a..=b))
    }
}

impl MetaQuery {
    /// Each clause text is tokenized; a multi-word clause requires every word.
    pub fn new<S: AsRef<str>>(
        clauses: &[(Field, S)],
        years: Option<RangeInclusive<u16>>,
    ) -> Result<Self, IndexError> {
        if clauses.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let mut terms = Vec::new();
        for (field, text) in clauses {
            let toks = tokenize(text.as_ref());
            if toks.is_empty() {
                return Err(IndexError::NoTokens {
                    field: *field,
                    text: text.as_ref().to_string(),
                });
            }
            terms.extend(toks.into_iter().map(|t| (*field, t)));
        }
        terms.sort();
        terms.dedup();
        Ok(Self {
            clauses: terms,
            years: years.map(|r| (*r.start(), *r.end())),
        })
    }

    pub fn clauses(&self) -> &[(Field, String)] {
        &self.clauses
    }

    pub fn years(&self) -> Option<RangeInclusive<u16>> {
        self.years.map(|(a, b)| a..=b)
    }

    /// Linear-scan semantics of the query against one record.
    pub fn matches(&self, r: &BibRecord) -> bool {
        if let Some((a, b)) = self.years {
            if !(a..=b).contains(&r.year) {
                return false;
            }
        }
        self.clauses
            .iter()
            .all(|(f, t)| tokenize(r.field(*f)).iter().any(|x| x == t))
    }
}

#[derive(Clone, Default)]
struct Snapshot {
    records: HashMap<VolumeId, BibRecord>,
    postings: HashMap<(Field, String), Vec<VolumeId>>,
}

impl Snapshot {
    fn insert(&mut self, r: BibRecord) {
        self.remove(&r.id);
        for key in r.terms() {
            let list = self.postings.entry(key).or_default();
            if let Err(pos) = list.binary_search(&r.id) {
                list.insert(pos, r.id.clone());
            }
        }
        self.records.insert(r.id.clone(), r);
    }

    fn remove(&mut self, id: &VolumeId) -> bool {
        let Some(old) = self.records.remove(id) else {
            return false;
        };
        for key in old.terms() {
            if let Some(list) = self.postings.get_mut(&key) {
                if let Ok(pos) = list.binary_search(id) {
                    list.remove(pos);
                }
                if list.is_empty() {
                    self.postings.remove(&key);
                }
            }
        }
        true
    }

    fn search(&self, q: &MetaQuery) -> Vec<VolumeId> {
        let mut lists = Vec::with_capacity(q.clauses.len());
        for key in &q.clauses {
            match self.postings.get(key) {
                Some(l) => lists.push(l.as_slice()),
                None => return Vec::new(),
            }
        }
        lists.sort_by_key(|l| l.len());
        let mut out: Vec<VolumeId> = lists[0].to_vec();
        for l in &lists[1..] {
            out.retain(|id| l.binary_search(id).is_ok());
            if out.is_empty() {
                break;
            }
        }
        if let Some(range) = q.years() {
            out.retain(|id| range.contains(&self.records[id].year));
        }
        out
    }
}

/// Readers search an immutable snapshot; each write publishes a new one.
#[derive(Default)]
pub struct MetadataIndex {
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl MetadataIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn update<T>(&self, f: impl FnOnce(&mut Snapshot) -> T) -> T {
        let _w = self.writer.lock();
        let mut next = Snapshot::clone(&self.current.read());
        let out = f(&mut next);
        *self.current.write() = Arc::new(next);
        out
    }

    /// Adds or replaces a record.
    pub fn index(&self, r: BibRecord) {
        self.update(|s| s.insert(r));
    }

    /// Adds many records under one published snapshot.
    pub fn index_all(&self, records: impl IntoIterator<Item = BibRecord>) -> usize {
        self.update(|s| {
            let mut n = 0;
            for r in records {
                s.insert(r);
                n += 1;
            }
            n
        })
    }

    /// Unknown ids are ignored. Returns whether a record was removed.
    pub fn remove(&self, id: &VolumeId) -> bool {
        self.update(|s| s.remove(id))
    }

    pub fn search(&self, q: &MetaQuery) -> Vec<VolumeId> {
        let snap = self.current.read().clone();
        snap.search(q)
    }

    pub fn get(&self, id: &VolumeId) -> Option<BibRecord> {
        self.current.read().records.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.current.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn posting_count(&self) -> usize {
        self.current.read().postings.len()
    }

    /// Checks every posting list is sorted, deduplicated and consistent with
    /// the stored records.
    pub fn check_postings(&self) -> Result<(), String> {
        let snap = self.current.read().clone();
        for ((f, t), list) in &snap.postings {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("{f}:{t} not strictly sorted"));
            }
            for id in list {
                let r = snap
                    .records
                    .get(id)
                    .ok_or_else(|| format!("{f}:{t} lists unknown {id}"))?;
                if !tokenize(r.field(*f)).contains(t) {
                    return Err(format!("{f}:{t} lists {id} which lacks the term"));
                }
            }
        }
        Ok(())
    }

    /// Reads `id,title,author,subject,language,year` with a header row and
    /// indexes every row. Nothing is indexed if any row is invalid.
    pub fn load_csv<R: Read>(&self, reader: R) -> Result<usize, IndexError> {
        let records = read_bib_csv(reader)?;
        Ok(self.index_all(records))
    }

    /// Writes the current snapshot in the same CSV layout, ordered by id.
    pub fn save_csv(&self, path: &Path) -> Result<(), IndexError> {
        let snap = self.current.read().clone();
        let mut records: Vec<&BibRecord> = snap.records.values().collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let tmp = path.with_extension("tmp");
        {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&tmp)?));
            w.write_record(["id", "title", "author", "subject", "language", "year"])
                .map_err(csv_io)?;
            for r in records {
                w.write_record([
                    r.id.as_str(),
                    &r.title,
                    &r.author,
                    &r.subject,
                    &r.language,
                    &r.year.to_string(),
                ])
                .map_err(csv_io)?;
            }
            let mut inner = w.into_inner().map_err(|e| IndexError::Io(e.into_error()))?;
            inner.flush()?;
            inner.get_ref().sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> IndexError {
    IndexError::Io(std::io::Error::other(e))
}

pub fn read_bib_csv<R: Read>(reader: R) -> Result<Vec<BibRecord>, IndexError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let expected = ["id", "title", "author", "subject", "language", "year"];
    let headers = rdr.headers().map_err(|e| bad(1, e))?.clone();
    if headers.iter().map(str::trim).ne(expected) {
        return Err(bad(1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(0, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = VolumeId::new(rec[0].trim()).map_err(|e| bad(line, e))?;
        let year: u32 = rec[5].trim().parse().map_err(|e| bad(line, e))?;
        out.push(
            BibRecord::new(id, &rec[1], &rec[2], &rec[3], &rec[4], year)
                .map_err(|e| bad(line, e))?,
        );
    }
    Ok(out)
}

fn bad(line: u64, e: impl fmt::Display) -> IndexError {
    IndexError::BadInput {
        line,
        reason: e.to_string(),
    }
}

const TITLE_WORDS: &[&str] = &[
    "history",
    "letters",
    "voyage",
    "natural",
    "birds",
    "river",
    "poems",
    "sermons",
    "treatise",
    "journal",
    "account",
    "principles",
    "essays",
    "memoirs",
    "tales",
    "northern",
    "ancient",
    "garden",
    "law",
    "songs",
];
const AUTHORS: &[&str] = &[
    "Smith", "Müller", "Dupont", "Rossi", "García", "Jones", "Novák", "Tanaka", "Olsen", "Brown",
    "Kowalski", "Silva",
];
const SUBJECTS: &[&str] = &[
    "science",
    "history",
    "poetry",
    "law",
    "religion",
    "travel",
    "medicine",
    "philosophy",
];
const LANGUAGES: &[&str] = &["eng", "ger", "fre", "ita", "spa", "lat"];

/// Seeded synthetic bibliographic records, one per id. Every title also
/// carries a word unique to its record (`w` followed by the id digits in
/// base 36).
pub fn synth_bib_records(ids: &[VolumeId], seed: u64) -> Vec<BibRecord> {
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let words: Vec<&str> = (0..rng.random_range(2..=5))
                .map(|_| *TITLE_WORDS.choose(&mut rng).unwrap())
                .collect();
            let title = format!("{} w{}", words.join(" "), base36(i as u64));
            let author = format!(
                "{}, {}",
                AUTHORS.choose(&mut rng).unwrap(),
                AUTHORS.choose(&mut rng).unwrap()
            );
            let subject = SUBJECTS.choose(&mut rng).unwrap();
            let language = LANGUAGES.choose(&mut rng).unwrap();
            let year = rng.random_range(1500..=1925);
            BibRecord::new(id.clone(), title, author, *subject, *language, year)
                .expect("year in range")
        })
        .collect()
}

fn base36(mut n: u64) -> String {
    let digits = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut out = vec![];
    loop {
        out.push(digits[(n % 36) as usize]);
        n /= 36;
        if n == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}
