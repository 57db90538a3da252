//! Federated access: one request is compiled into metadata → rights →
//! content steps and run against abstract sources, so any backend that
//! implements the source traits can serve it.

mod review;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PageRecord, Sequence, VolumeId, VolumeRecord};
use crate::index::{MetaQuery, MetadataIndex};
use crate::rights::{Decision, DenyReason, RightsCode, RightsStore, UserContext};
use crate::store::{MemoryStore, PageLookup, PagePredicate, StoreError, VolumeStore};

pub use review::{AuditEntry, ReviewDecision, ReviewError, ReviewGate};

pub const DEFAULT_RIGHTS_BATCH: usize = 1000;

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("query selects no volumes")]
    EmptySelector,
    #[error("page request must name at least one sequence")]
    EmptyPageSpec,
    #[error("batch size must be positive")]
    BadBatchSize,
    #[error("metadata source failed: {0}")]
    Metadata(String),
    #[error("malformed request: {0}")]
    BadRequest(#[from] serde_json::Error),
}

pub trait MetadataSource: Sync {
    fn search(&self, q: &MetaQuery) -> Result<Vec<VolumeId>, String>;
}

pub trait RightsSource: Sync {
    /// One round trip; results align with `ids`.
    fn batch_codes(&self, ids: &[VolumeId]) -> Result<Vec<Option<RightsCode>>, String>;
    fn authorize(&self, user: &UserContext, code: &RightsCode) -> Decision;
}

pub trait ContentSource: Sync {
    fn get_volume(&self, id: &VolumeId) -> Result<VolumeRecord, StoreError>;
    fn get_pages(
        &self,
        id: &VolumeId,
        sequences: &[Sequence],
    ) -> Result<Vec<PageLookup>, StoreError>;
    fn filter_pages(
        &self,
        id: &VolumeId,
        predicate: &PagePredicate,
    ) -> Result<Vec<PageRecord>, StoreError>;
}

impl MetadataSource for MetadataIndex {
    fn search(&self, q: &MetaQuery) -> Result<Vec<VolumeId>, String> {
        Ok(MetadataIndex::search(self, q))
    }
}

impl RightsSource for RightsStore {
    fn batch_codes(&self, ids: &[VolumeId]) -> Result<Vec<Option<RightsCode>>, String> {
        self.batch_get(ids)
            .map(|v| v.into_iter().map(|e| e.map(|e| e.code)).collect())
            .map_err(|e| e.to_string())
    }

    fn authorize(&self, user: &UserContext, code: &RightsCode) -> Decision {
        self.table().authorize(user, code)
    }
}

macro_rules! content_source {
    ($t:ty) => {
        impl ContentSource for $t {
            fn get_volume(&self, id: &VolumeId) -> Result<VolumeRecord, StoreError> {
                <$t>::get_volume(self, id)
            }
            fn get_pages(
                &self,
                id: &VolumeId,
                sequences: &[Sequence],
            ) -> Result<Vec<PageLookup>, StoreError> {
                <$t>::get_pages(self, id, sequences)
            }
            fn filter_pages(
                &self,
                id: &VolumeId,
                predicate: &PagePredicate,
            ) -> Result<Vec<PageRecord>, StoreError> {
                <$t>::filter_pages(self, id, predicate)
            }
        }
    };
}

content_source!(VolumeStore);
content_source!(MemoryStore);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Metadata(MetaQuery),
    Workset(Vec<VolumeId>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentSpec {
    FullVolumes,
    Pages(Vec<Sequence>),
    Filter(PagePredicate),
}

/// A user request. JSON form:
///
/// ```json
/// {"selector": {"metadata": {"clauses": [["subject", "science"]], "years": [1800, 1900]}},
///  "content": {"pages": ["00000001", "00000002"]},
///  "user": {"jurisdiction": "US", "access_level": 0}}
/// ```
///
/// `selector` may instead be `{"workset": ["id", ...]}` and `content` may be
/// `"full_volumes"` or `{"filter": "byteCount > 0"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederatedQuery {
    pub selector: Selector,
    pub content: ContentSpec,
    pub user: UserContext,
}

impl FederatedQuery {
    pub fn from_json(text: &str) -> Result<Self, FederatedError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStep {
    Metadata {
        query: MetaQuery,
    },
    /// `expected_ids` is known up front only for worksets.
    RightsBatch {
        batch_size: usize,
        expected_ids: Option<usize>,
    },
    Content {
        spec: ContentSpec,
        expected_reads_at_most: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryPlan {
    pub user: UserContext,
    /// Workset ids, deduplicated in first-seen order; empty for metadata plans.
    pub workset: Vec<VolumeId>,
    pub steps: Vec<PlanStep>,
}

/// Compiles a query. Metadata selectors get exactly one metadata step;
/// worksets skip it. Rights always precede content.
pub fn plan(q: &FederatedQuery, batch_size: usize) -> Result<QueryPlan, FederatedError> {
    if batch_size == 0 {
        return Err(FederatedError::BadBatchSize);
    }
    if matches!(&q.content, ContentSpec::Pages(s) if s.is_empty()) {
        return Err(FederatedError::EmptyPageSpec);
    }
    let mut steps = Vec::with_capacity(3);
    let mut workset = Vec::new();
    let expected = match &q.selector {
        Selector::Metadata(mq) => {
            steps.push(PlanStep::Metadata { query: mq.clone() });
            None
        }
        Selector::Workset(ids) => {
            if ids.is_empty() {
                return Err(FederatedError::EmptySelector);
            }
            let mut seen = HashSet::new();
            workset = ids.iter().filter(|id| seen.insert(*id)).cloned().collect();
            Some(workset.len())
        }
    };
    steps.push(PlanStep::RightsBatch {
        batch_size,
        expected_ids: expected,
    });
    steps.push(PlanStep::Content {
        spec: q.content.clone(),
        expected_reads_at_most: expected,
    });
    Ok(QueryPlan {
        user: q.user.clone(),
        workset,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    MetadataCall {
        matched: usize,
    },
    RightsBatch {
        ids: usize,
    },
    Decision {
        volume: VolumeId,
        code: Option<RightsCode>,
        decision: Decision,
    },
    ContentRead {
        volume: VolumeId,
        ok: bool,
    },
}

/// Totally ordered log of what an execution did; `seq` is logical time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub trace_id: u64,
    pub events: Vec<(u64, TraceEvent)>,
}

impl ExecutionTrace {
    pub fn metadata_calls(&self) -> usize {
        self.count(|e| matches!(e, TraceEvent::MetadataCall { .. }))
    }

    pub fn rights_batches(&self) -> usize {
        self.count(|e| matches!(e, TraceEvent::RightsBatch { .. }))
    }

    pub fn content_reads(&self) -> usize {
        self.count(|e| matches!(e, TraceEvent::ContentRead { .. }))
    }

    fn count(&self, f: impl Fn(&TraceEvent) -> bool) -> usize {
        self.events.iter().filter(|(_, e)| f(e)).count()
    }

    /// Volumes read, in trace order.
    pub fn read_volumes(&self) -> Vec<&VolumeId> {
        self.events
            .iter()
            .filter_map(|(_, e)| match e {
                TraceEvent::ContentRead { volume, .. } => Some(volume),
                _ => None,
            })
            .collect()
    }

    /// First content read not preceded by an Allow decision for its volume.
    pub fn first_unauthorized_read(&self) -> Option<&VolumeId> {
        let mut allowed = HashSet::new();
        for (_, e) in &self.events {
            match e {
                TraceEvent::Decision {
                    volume,
                    decision: Decision::Allow,
                    ..
                } => {
                    allowed.insert(volume);
                }
                TraceEvent::ContentRead { volume, .. } if !allowed.contains(volume) => {
                    return Some(volume)
                }
                _ => {}
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnvelopeId {
    pub trace: u64,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Volume(VolumeRecord),
    Pages(Vec<PageLookup>),
    Filtered(Vec<PageRecord>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeBody {
    Payload(Payload),
    Denied(DenyReason),
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportState {
    HeldForReview,
    Approved { reviewer: String },
    Rejected { reviewer: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub id: EnvelopeId,
    pub volume: VolumeId,
    pub rights: Option<RightsCode>,
    pub body: EnvelopeBody,
    pub export: ExportState,
}

#[derive(Clone, Debug)]
pub struct ExecOptions {
    pub batch_size: usize,
    /// Concurrent content reads per rights batch.
    pub parallelism: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_RIGHTS_BATCH,
            parallelism: 1,
        }
    }
}

pub struct Federation<'a> {
    pub metadata: &'a dyn MetadataSource,
    pub rights: &'a dyn RightsSource,
    pub content: &'a dyn ContentSource,
    pub options: ExecOptions,
    next_trace: AtomicU64,
}

struct Recorder {
    clock: AtomicU64,
    events: Mutex<Vec<(u64, TraceEvent)>>,
}

impl Recorder {
    fn record(&self, e: TraceEvent) {
        let mut events = self.events.lock();
        let seq = self.clock.fetch_add(1, Ordering::SeqCst);
        events.push((seq, e));
    }
}

impl<'a> Federation<'a> {
    pub fn new(
        metadata: &'a dyn MetadataSource,
        rights: &'a dyn RightsSource,
        content: &'a dyn ContentSource,
        options: ExecOptions,
    ) -> Self {
        Self {
            metadata,
            rights,
            content,
            options,
            next_trace: AtomicU64::new(1),
        }
    }

    pub fn plan(&self, q: &FederatedQuery) -> Result<QueryPlan, FederatedError> {
        plan(q, self.options.batch_size)
    }

    /// Runs a plan, collecting envelopes in candidate order.
    pub fn execute(
        &self,
        p: &QueryPlan,
    ) -> Result<(Vec<ResultEnvelope>, ExecutionTrace), FederatedError> {
        let mut out = Vec::new();
        let trace = self.execute_streaming(p, |e| out.push(e))?;
        Ok((out, trace))
    }

    /// Runs a plan, handing envelopes to `sink` one rights batch at a time.
    /// Only a metadata failure aborts; rights and content failures become
    /// per-volume error envelopes.
    pub fn execute_streaming(
        &self,
        p: &QueryPlan,
        mut sink: impl FnMut(ResultEnvelope),
    ) -> Result<ExecutionTrace, FederatedError> {
        let trace_id = self.next_trace.fetch_add(1, Ordering::SeqCst);
        let rec = Recorder {
            clock: AtomicU64::new(0),
            events: Mutex::new(Vec::new()),
        };
        let mut candidates = p.workset.clone();
        let mut batch_size = self.options.batch_size;
        let mut spec = &ContentSpec::FullVolumes;
        for step in &p.steps {
            match step {
                PlanStep::Metadata { query } => {
                    let ids = self
                        .metadata
                        .search(query)
                        .map_err(FederatedError::Metadata)?;
                    rec.record(TraceEvent::MetadataCall { matched: ids.len() });
                    candidates = ids;
                }
                PlanStep::RightsBatch { batch_size: b, .. } => batch_size = *b,
                PlanStep::Content { spec: s, .. } => spec = s,
            }
        }
        let mut index = 0u32;
        for batch in candidates.chunks(batch_size.max(1)) {
            let codes = self.rights.batch_codes(batch);
            rec.record(TraceEvent::RightsBatch { ids: batch.len() });
            let mut slots: Vec<Option<ResultEnvelope>> = Vec::with_capacity(batch.len());
            let mut allowed = Vec::new();
            for (i, id) in batch.iter().enumerate() {
                let envelope = |rights: Option<RightsCode>, body| ResultEnvelope {
                    id: EnvelopeId {
                        trace: trace_id,
                        index: index + i as u32,
                    },
                    volume: id.clone(),
                    rights,
                    body,
                    export: ExportState::HeldForReview,
                };
                let code = match &codes {
                    Ok(c) => c.get(i).cloned().flatten(),
                    Err(e) => {
                        slots.push(Some(envelope(
                            None,
                            EnvelopeBody::Error(format!("rights lookup failed: {e}")),
                        )));
                        continue;
                    }
                };
                let decision = match &code {
                    Some(c) => self.rights.authorize(&p.user, c),
                    None => Decision::Deny(DenyReason::NoRightsRecord),
                };
                rec.record(TraceEvent::Decision {
                    volume: id.clone(),
                    code: code.clone(),
                    decision: decision.clone(),
                });
                match decision {
                    Decision::Allow => {
                        allowed.push((i, code.clone()));
                        slots.push(None);
                    }
                    Decision::Deny(reason) => {
                        slots.push(Some(envelope(code, EnvelopeBody::Denied(reason))))
                    }
                }
            }
            let bodies = self.read_content(batch, &allowed, spec, &rec);
            for ((i, code), body) in allowed.into_iter().zip(bodies) {
                slots[i] = Some(ResultEnvelope {
                    id: EnvelopeId {
                        trace: trace_id,
                        index: index + i as u32,
                    },
                    volume: batch[i].clone(),
                    rights: code,
                    body,
                    export: ExportState::HeldForReview,
                });
            }
            for e in slots.into_iter().flatten() {
                sink(e);
            }
            index += batch.len() as u32;
        }
        Ok(ExecutionTrace {
            trace_id,
            events: rec.events.into_inner(),
        })
    }

    fn read_content(
        &self,
        batch: &[VolumeId],
        allowed: &[(usize, Option<RightsCode>)],
        spec: &ContentSpec,
        rec: &Recorder,
    ) -> Vec<EnvelopeBody> {
        let read = |i: usize| {
            let id = &batch[i];
            let body = match spec {
                ContentSpec::FullVolumes => self.content.get_volume(id).map(Payload::Volume),
                ContentSpec::Pages(s) => self.content.get_pages(id, s).map(Payload::Pages),
                ContentSpec::Filter(pred) => {
                    self.content.filter_pages(id, pred).map(Payload::Filtered)
                }
            };
            rec.record(TraceEvent::ContentRead {
                volume: id.clone(),
                ok: body.is_ok(),
            });
            match body {
                Ok(p) => EnvelopeBody::Payload(p),
                Err(e) => EnvelopeBody::Error(e.to_string()),
            }
        };
        let workers = self.options.parallelism.max(1);
        if workers == 1 || allowed.len() < 2 {
            return allowed.iter().map(|(i, _)| read(*i)).collect();
        }
        let chunk = allowed.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = allowed
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|(i, _)| read(*i)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("content reader panicked"))
                .collect()
        })
    }
}
