//! Rights registry and jurisdiction-aware authorization.

mod rules;

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VolumeId;

pub use rules::{Decision, DenyReason, Rule, RuleTable, Scope, DEFAULT_RULES_CSV};

#[derive(Debug, Error)]
pub enum RightsError {
    #[error("invalid rights code {0:?}")]
    BadCode(String),
    #[error("rights code {0} is not in the rule table")]
    UnregisteredCode(RightsCode),
    #[error("invalid jurisdiction {0:?}: expected a two-letter country code")]
    BadJurisdiction(String),
    #[error("rule table: {0}")]
    BadRuleTable(String),
    #[error("batch lookup needs at least one id")]
    EmptyBatch,
    #[error("rights file line {line}: {reason}")]
    BadInput { line: u64, reason: String },
    #[error("rights log {path}: {reason}")]
    CorruptLog { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rights code such as `PD`, `PDUS`, `IC`. The vocabulary is open: any code
/// named in the rule table is valid. Codes are case-insensitive and stored
/// upper-case.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RightsCode(String);

impl RightsCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for RightsCode {
    type Err = RightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let ok = !s.is_empty()
            && s.len() <= 32
            && s.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"-_+.".contains(&b));
        if ok {
            Ok(Self(s.to_ascii_uppercase()))
        } else {
            Err(RightsError::BadCode(s.to_string()))
        }
    }
}

impl TryFrom<String> for RightsCode {
    type Error = RightsError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RightsCode> for String {
    fn from(c: RightsCode) -> Self {
        c.0
    }
}

impl fmt::Display for RightsCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// ISO 3166-1 alpha-2 country code, upper-case.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Jurisdiction([u8; 2]);

impl Jurisdiction {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl FromStr for Jurisdiction {
    type Err = RightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().as_bytes() {
            [a, b] if a.is_ascii_alphabetic() && b.is_ascii_alphabetic() => {
                Ok(Self([a.to_ascii_uppercase(), b.to_ascii_uppercase()]))
            }
            _ => Err(RightsError::BadJurisdiction(s.to_string())),
        }
    }
}

impl TryFrom<String> for Jurisdiction {
    type Error = RightsError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Jurisdiction> for String {
    fn from(j: Jurisdiction) -> Self {
        j.as_str().to_string()
    }
}

impl fmt::Display for Jurisdiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserContext {
    pub jurisdiction: Jurisdiction,
    #[serde(default)]
    pub access_level: i32,
}

impl UserContext {
    pub fn new(jurisdiction: &str, access_level: i32) -> Result<Self, RightsError> {
        Ok(Self {
            jurisdiction: jurisdiction.parse()?,
            access_level,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RightsEntry {
    pub id: VolumeId,
    pub code: RightsCode,
    /// Logical timestamp; later wins.
    pub updated_at: u64,
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
    sync: bool,
}

/// In-memory rights map made durable by an append-only update log.
///
/// Log lines are `<updated_at>\t<encoded id>\t<code>\t<crc32 hex>`; a torn or
/// corrupt final line is dropped on open, anywhere else it is an error.
pub struct RightsStore {
    table: RuleTable,
    entries: RwLock<HashMap<VolumeId, RightsEntry>>,
    /// Also serializes writers so log order matches timestamp order.
    log: Mutex<Option<Log>>,
    clock: Mutex<u64>,
}

impl RightsStore {
    pub fn in_memory(table: RuleTable) -> Self {
        Self {
            table,
            entries: RwLock::new(HashMap::new()),
            log: Mutex::new(None),
            clock: Mutex::new(0),
        }
    }

    pub fn open(path: impl AsRef<Path>, table: RuleTable, sync: bool) -> Result<Self, RightsError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut clock = 0;
        let mut valid_len = 0u64;
        match File::open(&path) {
            Ok(f) => {
                let mut lines = BufReader::new(f).split(b'\n').peekable();
                let mut line_no = 0;
                while let Some(line) = lines.next() {
                    let line = line?;
                    line_no += 1;
                    let last = lines.peek().is_none();
                    match parse_log_line(&line) {
                        Some(e) => {
                            clock = clock.max(e.updated_at);
                            apply_lww(&mut entries, e);
                            valid_len += line.len() as u64 + 1;
                        }
                        None if last => break,
                        None => {
                            return Err(RightsError::CorruptLog {
                                path,
                                reason: format!("bad record on line {line_no}"),
                            })
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() > valid_len {
            file.set_len(valid_len)?;
        }
        Ok(Self {
            table,
            entries: RwLock::new(entries),
            log: Mutex::new(Some(Log {
                path,
                out: BufWriter::new(file),
                sync,
            })),
            clock: Mutex::new(clock),
        })
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a new code for `id`, stamped after every earlier update.
    pub fn set_rights(&self, id: &VolumeId, code: &RightsCode) -> Result<RightsEntry, RightsError> {
        self.check_code(code)?;
        let mut log = self.log.lock();
        let updated_at = {
            let mut c = self.clock.lock();
            *c += 1;
            *c
        };
        let entry = RightsEntry {
            id: id.clone(),
            code: code.clone(),
            updated_at,
        };
        if let Some(log) = log.as_mut() {
            write_entry(log, &entry)?;
        }
        apply_lww(&mut self.entries.write(), entry.clone());
        Ok(entry)
    }

    /// Applies an update carrying its own timestamp (e.g. from another
    /// replica). Returns whether it became the visible entry.
    pub fn apply(&self, entry: RightsEntry) -> Result<bool, RightsError> {
        self.check_code(&entry.code)?;
        let mut log = self.log.lock();
        {
            let mut c = self.clock.lock();
            *c = (*c).max(entry.updated_at);
        }
        if let Some(log) = log.as_mut() {
            write_entry(log, &entry)?;
        }
        Ok(apply_lww(&mut self.entries.write(), entry))
    }

    fn check_code(&self, code: &RightsCode) -> Result<(), RightsError> {
        if self.table.knows(code) {
            Ok(())
        } else {
            Err(RightsError::UnregisteredCode(code.clone()))
        }
    }

    pub fn get(&self, id: &VolumeId) -> Option<RightsEntry> {
        self.entries.read().get(id).cloned()
    }

    /// One lookup per requested id, in request order; `None` marks ids with
    /// no rights record.
    pub fn batch_get(&self, ids: &[VolumeId]) -> Result<Vec<Option<RightsEntry>>, RightsError> {
        if ids.is_empty() {
            return Err(RightsError::EmptyBatch);
        }
        let map = self.entries.read();
        Ok(ids.iter().map(|id| map.get(id).cloned()).collect())
    }

    /// Decision for `user` reading volume `id`. No record means deny.
    pub fn authorize_volume(&self, user: &UserContext, id: &VolumeId) -> Decision {
        match self.get(id) {
            Some(e) => self.table.authorize(user, &e.code),
            None => Decision::Deny(DenyReason::NoRightsRecord),
        }
    }

    /// Bulk update from CSV `id,code` with a header row. Every row is
    /// validated before any is applied. Returns the number of rows applied.
    pub fn load_csv<R: Read>(&self, reader: R) -> Result<usize, RightsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| bad_input(1, e))?.clone();
        if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "code" {
            return Err(RightsError::BadInput {
                line: 1,
                reason: format!(
                    "expected header id,code, got {:?}",
                    headers.iter().collect::<Vec<_>>()
                ),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad_input(0, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let id = VolumeId::new(&rec[0]).map_err(|e| bad_input(line, e))?;
            let code: RightsCode = rec[1].parse().map_err(|e| bad_input(line, e))?;
            self.check_code(&code).map_err(|e| bad_input(line, e))?;
            rows.push((id, code));
        }
        for (id, code) in &rows {
            self.set_rights(id, code)?;
        }
        if let Some(log) = self.log.lock().as_mut() {
            log.out.flush()?;
            log.out.get_ref().sync_data()?;
        }
        Ok(rows.len())
    }

    /// Rewrites the log to hold only the live entries.
    pub fn checkpoint(&self) -> Result<(), RightsError> {
        let mut guard = self.log.lock();
        let Some(log) = guard.as_mut() else {
            return Ok(());
        };
        let mut entries: Vec<RightsEntry> = self.entries.read().values().cloned().collect();
        entries.sort_by_key(|e| e.updated_at);
        let tmp = log.path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for e in &entries {
                out.write_all(&encode_log_line(e))?;
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &log.path)?;
        log.out = BufWriter::new(OpenOptions::new().append(true).open(&log.path)?);
        Ok(())
    }
}

fn bad_input(line: u64, e: impl fmt::Display) -> RightsError {
    RightsError::BadInput {
        line,
        reason: e.to_string(),
    }
}

fn apply_lww(map: &mut HashMap<VolumeId, RightsEntry>, entry: RightsEntry) -> bool {
    match map.get(&entry.id) {
        Some(cur) if cur.updated_at > entry.updated_at => false,
        _ => {
            map.insert(entry.id.clone(), entry);
            true
        }
    }
}

fn write_entry(log: &mut Log, e: &RightsEntry) -> Result<(), RightsError> {
    log.out.write_all(&encode_log_line(e))?;
    log.out.flush()?;
    if log.sync {
        log.out.get_ref().sync_data()?;
    }
    Ok(())
}

fn encode_log_line(e: &RightsEntry) -> Vec<u8> {
    let body = format!("{}\t{}\t{}", e.updated_at, e.id.encode_path(), e.code);
    format!("{body}\t{:08x}\n", crc32fast::hash(body.as_bytes())).into_bytes()
}

fn parse_log_line(line: &[u8]) -> Option<RightsEntry> {
    let line = std::str::from_utf8(line).ok()?;
    let (body, crc) = line.rsplit_once('\t')?;
    if u32::from_str_radix(crc, 16).ok()? != crc32fast::hash(body.as_bytes()) {
        return None;
    }
    let mut parts = body.split('\t');
    let updated_at = parts.next()?.parse().ok()?;
    let id = VolumeId::decode_path(parts.next()?).ok()?;
    let code = parts.next()?.parse().ok()?;
    Some(RightsEntry {
        id,
        code,
        updated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> VolumeId {
        VolumeId::new(s).unwrap()
    }

    fn code(s: &str) -> RightsCode {
        s.parse().unwrap()
    }

    #[test]
    fn codes_and_jurisdictions() {
        assert_eq!(code("pdus").as_str(), "PDUS");
        assert!("".parse::<RightsCode>().is_err());
        assert!("P D".parse::<RightsCode>().is_err());
        assert_eq!("de".parse::<Jurisdiction>().unwrap().as_str(), "DE");
        for bad in ["", "D", "DEU", "1A"] {
            assert!(bad.parse::<Jurisdiction>().is_err(), "{bad}");
        }
    }

    #[test]
    fn reset_increases_timestamp() {
        let s = RightsStore::in_memory(RuleTable::default());
        let a = s.set_rights(&id("x"), &code("IC")).unwrap();
        let b = s.set_rights(&id("x"), &code("PD")).unwrap();
        assert!(b.updated_at > a.updated_at);
        assert_eq!(s.get(&id("x")).unwrap().code, code("PD"));
        assert!(matches!(
            s.set_rights(&id("x"), &code("ZZ")),
            Err(RightsError::UnregisteredCode(_))
        ));
    }

    #[test]
    fn stale_apply_loses() {
        let s = RightsStore::in_memory(RuleTable::default());
        s.set_rights(&id("x"), &code("IC")).unwrap();
        s.set_rights(&id("x"), &code("PD")).unwrap();
        let stale = RightsEntry {
            id: id("x"),
            code: code("UND"),
            updated_at: 1,
        };
        assert!(!s.apply(stale).unwrap());
        assert_eq!(s.get(&id("x")).unwrap().code, code("PD"));
        let fresh = RightsEntry {
            id: id("x"),
            code: code("UND"),
            updated_at: 50,
        };
        assert!(s.apply(fresh).unwrap());
        assert!(s.set_rights(&id("x"), &code("IC")).unwrap().updated_at > 50);
    }

    #[test]
    fn batch_get_marks_missing() {
        let s = RightsStore::in_memory(RuleTable::default());
        assert!(matches!(s.batch_get(&[]), Err(RightsError::EmptyBatch)));
        s.set_rights(&id("a"), &code("PD")).unwrap();
        let got = s.batch_get(&[id("a"), id("b"), id("a")]).unwrap();
        assert_eq!(got[0].as_ref().unwrap().code, code("PD"));
        assert!(got[1].is_none());
        assert_eq!(got[0], got[2]);
    }

    #[test]
    fn missing_record_is_denied() {
        let s = RightsStore::in_memory(RuleTable::default());
        let us = UserContext::new("US", 0).unwrap();
        assert_eq!(
            s.authorize_volume(&us, &id("q")),
            Decision::Deny(DenyReason::NoRightsRecord)
        );
        s.set_rights(&id("q"), &code("PDUS")).unwrap();
        assert_eq!(s.authorize_volume(&us, &id("q")), Decision::Allow);
    }

    #[test]
    fn csv_load_is_all_or_nothing() {
        let s = RightsStore::in_memory(RuleTable::default());
        assert_eq!(s.load_csv("id,code\na,PD\nb,ic\n".as_bytes()).unwrap(), 2);
        assert_eq!(s.get(&id("b")).unwrap().code, code("IC"));
        let err = s
            .load_csv("id,code\nc,PD\nd,NOPE\n".as_bytes())
            .unwrap_err();
        assert!(
            matches!(err, RightsError::BadInput { line: 3, .. }),
            "{err}"
        );
        assert!(s.get(&id("c")).is_none());
        assert!(s.load_csv("volume,code\na,PD\n".as_bytes()).is_err());
    }

    #[test]
    fn log_survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rights.log");
        {
            let s = RightsStore::open(&path, RuleTable::default(), false).unwrap();
            s.set_rights(&id("a b/c"), &code("PD")).unwrap();
            s.set_rights(&id("z"), &code("IC")).unwrap();
            s.set_rights(&id("z"), &code("PDUS")).unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(b"9\tq\tPD\t0000");
        fs::write(&path, &bytes).unwrap();
        let s = RightsStore::open(&path, RuleTable::default(), false).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&id("z")).unwrap().code, code("PDUS"));
        assert_eq!(s.get(&id("a b/c")).unwrap().code, code("PD"));
        assert_eq!(s.set_rights(&id("q"), &code("PD")).unwrap().updated_at, 4);
        s.checkpoint().unwrap();
        drop(s);
        let s = RightsStore::open(&path, RuleTable::default(), false).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
    }
}
