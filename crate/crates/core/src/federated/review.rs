use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EnvelopeId, ExportState, ResultEnvelope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve,
    Reject,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReviewError {
    #[error("envelope {0:?} was never submitted for review")]
    Unknown(EnvelopeId),
    #[error("envelope {0:?} already submitted")]
    AlreadyHeld(EnvelopeId),
    #[error("envelope {0:?} already decided")]
    AlreadyDecided(EnvelopeId),
    #[error("reviewer id must not be empty")]
    NoReviewer,
    #[error("envelope {0:?} is not approved for export")]
    NotApproved(EnvelopeId),
    #[error("audit entry {0} does not follow from the entries before it")]
    BadAudit(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub envelope: EnvelopeId,
    pub to: ExportState,
}

/// Export workflow for result envelopes. Every envelope starts held; a
/// reviewer approves or rejects it exactly once. Every transition is
/// appended to the audit log, and replaying that log rebuilds the gate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReviewGate {
    states: BTreeMap<EnvelopeId, ExportState>,
    audit: Vec<AuditEntry>,
}

impl ReviewGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, envelopes: &[ResultEnvelope]) -> Result<(), ReviewError> {
        if let Some(e) = envelopes.iter().find(|e| self.states.contains_key(&e.id)) {
            return Err(ReviewError::AlreadyHeld(e.id));
        }
        for e in envelopes {
            self.transition(e.id, ExportState::HeldForReview);
        }
        Ok(())
    }

    /// Decides every envelope or none. The envelopes' own flags are updated
    /// to match.
    pub fn decide(
        &mut self,
        envelopes: &mut [ResultEnvelope],
        decision: ReviewDecision,
        reviewer: &str,
    ) -> Result<(), ReviewError> {
        if reviewer.trim().is_empty() {
            return Err(ReviewError::NoReviewer);
        }
        for e in envelopes.iter() {
            match self.states.get(&e.id) {
                None => return Err(ReviewError::Unknown(e.id)),
                Some(ExportState::HeldForReview) => {}
                Some(_) => return Err(ReviewError::AlreadyDecided(e.id)),
            }
        }
        let mut ids: Vec<EnvelopeId> = envelopes.iter().map(|e| e.id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ReviewError::AlreadyDecided(w[0]));
        }
        let reviewer = reviewer.to_string();
        let to = match decision {
            ReviewDecision::Approve => ExportState::Approved { reviewer },
            ReviewDecision::Reject => ExportState::Rejected { reviewer },
        };
        for e in envelopes.iter_mut() {
            self.transition(e.id, to.clone());
            e.export = to.clone();
        }
        Ok(())
    }

    fn transition(&mut self, id: EnvelopeId, to: ExportState) {
        self.audit.push(AuditEntry {
            seq: self.audit.len() as u64,
            envelope: id,
            to: to.clone(),
        });
        self.states.insert(id, to);
    }

    pub fn state(&self, id: EnvelopeId) -> Option<&ExportState> {
        self.states.get(&id)
    }

    /// The envelope as it may leave the boundary. The gate's record is
    /// authoritative; the envelope's own flag is not trusted.
    pub fn export<'e>(
        &self,
        envelope: &'e ResultEnvelope,
    ) -> Result<&'e ResultEnvelope, ReviewError> {
        match self.states.get(&envelope.id) {
            Some(ExportState::Approved { .. }) => Ok(envelope),
            Some(_) => Err(ReviewError::NotApproved(envelope.id)),
            None => Err(ReviewError::Unknown(envelope.id)),
        }
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn replay(entries: &[AuditEntry]) -> Result<Self, ReviewError> {
        let mut gate = Self::default();
        for (i, e) in entries.iter().enumerate() {
            let valid = e.seq == i as u64
                && match (&e.to, gate.states.get(&e.envelope)) {
                    (ExportState::HeldForReview, None) => true,
                    (ExportState::HeldForReview, Some(_)) => false,
                    (_, Some(ExportState::HeldForReview)) => true,
                    _ => false,
                };
            if !valid {
                return Err(ReviewError::BadAudit(e.seq));
            }
            gate.transition(e.envelope, e.to.clone());
        }
        Ok(gate)
    }
}
