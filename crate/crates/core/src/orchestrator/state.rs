use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::event::{Event, EventKind, HitOutcome, RejectReason};
use super::hit::Hit;
use crate::model::{Instance, Label};
use crate::quality::{AnnotatorProfile, ControlStats, Qualification, Status};
use crate::taxonomy::ClusterName;

pub const MAX_ROUNDS: u8 = 4;

/// Accepted responses needed to settle `round`: two in round one, one more
/// per later round.
pub fn required_responses(round: u8) -> usize {
    usize::from(round) + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Accepted,
    Rejected,
    Invalidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub annotator: String,
    pub label: Label,
    pub round: u8,
    pub status: ResponseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "label", rename_all = "snake_case")]
pub enum Resolution {
    Unresolved,
    Resolved(Label),
    WrongTypeExhausted,
    Unresolvable,
}

impl Resolution {
    pub fn is_open(&self) -> bool {
        matches!(self, Resolution::Unresolved)
    }
}

/// Responses collected at one finished stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub rounds: u8,
    pub responses: Vec<Response>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceState {
    pub instance: Instance,
    pub cluster: ClusterName,
    pub stage: usize,
    pub stage_count: usize,
    pub round: u8,
    pub responses: Vec<Response>,
    pub history: Vec<StageRecord>,
    pub resolution: Resolution,
    pub reserved_by: BTreeSet<String>,
    pub queue_pos: u64,
}

impl SentenceState {
    pub fn id(&self) -> &str {
        &self.instance.id
    }

    pub fn accepted(&self) -> impl Iterator<Item = &Response> {
        self.responses.iter().filter(|r| r.status == ResponseStatus::Accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    pub fn accepted_labels(&self) -> Vec<Label> {
        self.accepted().map(|r| r.label.clone()).collect()
    }

    pub fn has_responded(&self, annotator: &str) -> bool {
        self.responses.iter().any(|r| r.annotator == annotator)
    }

    /// Further responses this round can still take, net of reservations.
    pub fn open_slots(&self) -> usize {
        required_responses(self.round).saturating_sub(self.accepted_count() + self.reserved_by.len())
    }

    /// Number of stages this sentence has been presented at.
    pub fn stages_used(&self) -> usize {
        self.stage + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStatus {
    Outstanding,
    Completed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitRecord {
    pub hit: Hit,
    pub annotator: String,
    pub status: HitStatus,
    pub idempotency_key: Option<String>,
    pub outcome: Option<HitOutcome>,
}

/// Everything the event log determines. Static inputs (plan, control pool,
/// qualification tests) live beside it in the orchestrator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub last_seq: u64,
    pub sentences: BTreeMap<String, SentenceState>,
    pub annotators: BTreeMap<String, AnnotatorProfile>,
    pub hits: BTreeMap<String, HitRecord>,
    pub outstanding: BTreeMap<String, String>,
    pub hits_issued: u64,
    pub next_queue_pos: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("event {seq} references unknown {what} `{id}`")]
    Unknown { seq: u64, what: &'static str, id: String },
    #[error("event {seq} conflicts with state: {detail}")]
    Conflict { seq: u64, detail: String },
}

impl State {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn sentence(&self, id: &str) -> Option<&SentenceState> {
        self.sentences.get(id)
    }

    pub fn hit(&self, id: &str) -> Option<&HitRecord> {
        self.hits.get(id)
    }

    pub fn outstanding_hit(&self, annotator: &str) -> Option<&HitRecord> {
        self.outstanding.get(annotator).and_then(|h| self.hits.get(h))
    }

    /// Issued HITs that were not cancelled.
    pub fn billable_hits(&self) -> u64 {
        self.hits.values().filter(|h| h.status != HitStatus::Cancelled).count() as u64
    }

    /// Cost of every billable HIT, in cents.
    pub fn cost_cents(&self) -> u64 {
        self.hits
            .values()
            .filter(|h| h.status != HitStatus::Cancelled)
            .map(|h| h.hit.price_cents)
            .sum()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    fn sentence_mut(&mut self, seq: u64, id: &str) -> Result<&mut SentenceState, ApplyError> {
        self.sentences.get_mut(id).ok_or_else(|| ApplyError::Unknown {
            seq,
            what: "sentence",
            id: id.to_string(),
        })
    }

    fn annotator_mut(&mut self, seq: u64, id: &str) -> Result<&mut AnnotatorProfile, ApplyError> {
        self.annotators.get_mut(id).ok_or_else(|| ApplyError::Unknown {
            seq,
            what: "annotator",
            id: id.to_string(),
        })
    }

    fn take_queue_pos(&mut self) -> u64 {
        let p = self.next_queue_pos;
        self.next_queue_pos += 1;
        p
    }

    /// The single state transition used both live and in replay.
    pub fn apply(&mut self, event: &Event) -> Result<(), ApplyError> {
        let seq = event.seq;
        match &event.kind {
            EventKind::SentenceEnqueued {
                instance,
                cluster,
                stage_count,
            } => {
                if self.sentences.contains_key(&instance.id) {
                    return Err(ApplyError::Conflict {
                        seq,
                        detail: format!("sentence `{}` enqueued twice", instance.id),
                    });
                }
                let queue_pos = self.take_queue_pos();
                self.sentences.insert(
                    instance.id.clone(),
                    SentenceState {
                        instance: instance.clone(),
                        cluster: cluster.clone(),
                        stage: 0,
                        stage_count: *stage_count,
                        round: 1,
                        responses: Vec::new(),
                        history: Vec::new(),
                        resolution: Resolution::Unresolved,
                        reserved_by: BTreeSet::new(),
                        queue_pos,
                    },
                );
            }
            EventKind::AnnotatorRegistered {
                annotator,
                approved_count,
                approval_rate,
            } => {
                self.annotators.insert(
                    annotator.clone(),
                    AnnotatorProfile::new(annotator.clone(), *approved_count, *approval_rate),
                );
            }
            EventKind::QualificationGraded {
                annotator,
                cluster,
                result,
            } => {
                self.annotator_mut(seq, annotator)?.qualifications.insert(cluster.clone(), *result);
            }
            EventKind::HitIssued { annotator, hit } => {
                for id in hit.sentence_ids() {
                    self.sentence_mut(seq, id)?.reserved_by.insert(annotator.clone());
                }
                self.hits_issued += 1;
                self.outstanding.insert(annotator.clone(), hit.id.clone());
                self.hits.insert(
                    hit.id.clone(),
                    HitRecord {
                        hit: hit.clone(),
                        annotator: annotator.clone(),
                        status: HitStatus::Outstanding,
                        idempotency_key: None,
                        outcome: None,
                    },
                );
            }
            EventKind::HitCancelled { hit } => self.close_hit(seq, hit, HitStatus::Cancelled, None, None)?,
            EventKind::HitCompleted {
                hit,
                idempotency_key,
                outcome,
                ..
            } => self.close_hit(seq, hit, HitStatus::Completed, idempotency_key.clone(), Some(outcome.clone()))?,
            EventKind::ControlRecorded {
                annotator,
                cluster,
                correct,
                ..
            } => {
                let stats = self
                    .annotator_mut(seq, annotator)?
                    .control_stats
                    .entry(cluster.clone())
                    .or_insert_with(ControlStats::default);
                stats.seen += 1;
                if *correct {
                    stats.correct += 1;
                }
            }
            EventKind::AnnotatorSuspended { annotator, cluster, .. } => {
                self.annotator_mut(seq, annotator)?.status.insert(cluster.clone(), Status::Suspended);
            }
            EventKind::ResponseInvalidated { sentence, annotator } => {
                let s = self.sentence_mut(seq, sentence)?;
                let r = s
                    .responses
                    .iter_mut()
                    .find(|r| &r.annotator == annotator && r.status == ResponseStatus::Accepted)
                    .ok_or_else(|| ApplyError::Conflict {
                        seq,
                        detail: format!("no accepted response by `{annotator}` on `{sentence}`"),
                    })?;
                r.status = ResponseStatus::Invalidated;
            }
            EventKind::SentenceReopened { sentence, round } => {
                let s = self.sentence_mut(seq, sentence)?;
                s.round = *round;
                s.resolution = Resolution::Unresolved;
            }
            EventKind::ResponseAccepted {
                sentence,
                annotator,
                label,
                round,
            } => {
                let s = self.sentence_mut(seq, sentence)?;
                s.reserved_by.remove(annotator);
                s.responses.push(Response {
                    annotator: annotator.clone(),
                    label: label.clone(),
                    round: *round,
                    status: ResponseStatus::Accepted,
                });
            }
            EventKind::ResponseRejected {
                sentence,
                annotator,
                label,
                reason,
            } => {
                let s = self.sentence_mut(seq, sentence)?;
                s.reserved_by.remove(annotator);
                // A stale answer for an earlier stage does not block the
                // annotator at the current one.
                if *reason == RejectReason::Suspended || s.resolution.is_open() {
                    s.responses.push(Response {
                        annotator: annotator.clone(),
                        label: label.clone(),
                        round: s.round,
                        status: ResponseStatus::Rejected,
                    });
                }
            }
            EventKind::RoundAdvanced { sentence, round } => {
                self.sentence_mut(seq, sentence)?.round = *round;
            }
            EventKind::SentenceResolved { sentence, label } => {
                self.sentence_mut(seq, sentence)?.resolution = Resolution::Resolved(label.clone());
            }
            EventKind::StageAdvanced { sentence, stage } => {
                let pos = self.take_queue_pos();
                let s = self.sentence_mut(seq, sentence)?;
                let finished = StageRecord {
                    stage: s.stage,
                    rounds: s.round,
                    responses: std::mem::take(&mut s.responses),
                };
                s.history.push(finished);
                s.stage = *stage;
                s.round = 1;
                s.resolution = Resolution::Unresolved;
                s.queue_pos = pos;
            }
            EventKind::SentenceExhausted { sentence } => {
                self.sentence_mut(seq, sentence)?.resolution = Resolution::WrongTypeExhausted;
            }
            EventKind::SentenceUnresolvable { sentence } => {
                self.sentence_mut(seq, sentence)?.resolution = Resolution::Unresolvable;
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    fn close_hit(
        &mut self,
        seq: u64,
        hit: &str,
        status: HitStatus,
        key: Option<String>,
        outcome: Option<HitOutcome>,
    ) -> Result<(), ApplyError> {
        let rec = self.hits.get_mut(hit).ok_or_else(|| ApplyError::Unknown {
            seq,
            what: "hit",
            id: hit.to_string(),
        })?;
        rec.status = status;
        rec.idempotency_key = key;
        rec.outcome = outcome;
        let annotator = rec.annotator.clone();
        let sentence_ids: Vec<String> = rec.hit.sentence_ids().map(str::to_string).collect();
        if self.outstanding.get(&annotator).map(String::as_str) == Some(hit) {
            self.outstanding.remove(&annotator);
        }
        for id in sentence_ids {
            if let Some(s) = self.sentences.get_mut(&id) {
                s.reserved_by.remove(&annotator);
            }
        }
        Ok(())
    }

    pub fn qualification(&self, annotator: &str, cluster: &ClusterName) -> Qualification {
        self.annotators
            .get(annotator)
            .map(|p| p.qualification(cluster))
            .unwrap_or(Qualification::Untested)
    }
}
