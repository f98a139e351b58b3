use serde::{Deserialize, Serialize};

use super::hit::Hit;
use crate::model::{Instance, Label};
use crate::quality::Qualification;
use crate::taxonomy::ClusterName;

/// One log line. `commit` marks the last event of a command's batch; a
/// reader discards anything after the last committed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub commit: bool,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The annotator is below the accuracy gate for the cluster.
    Suspended,
    /// The sentence moved on (resolved, new stage, or quota already met).
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitOutcome {
    pub accepted: usize,
    pub rejected: usize,
    pub controls: usize,
    pub suspended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    SentenceEnqueued {
        instance: Instance,
        cluster: ClusterName,
        stage_count: usize,
    },
    AnnotatorRegistered {
        annotator: String,
        approved_count: u64,
        approval_rate: f64,
    },
    QualificationGraded {
        annotator: String,
        cluster: ClusterName,
        result: Qualification,
    },
    HitIssued {
        annotator: String,
        hit: Hit,
    },
    HitCancelled {
        hit: String,
    },
    ControlRecorded {
        annotator: String,
        cluster: ClusterName,
        control: String,
        correct: bool,
    },
    AnnotatorSuspended {
        annotator: String,
        cluster: ClusterName,
        correct: u64,
        seen: u64,
    },
    ResponseInvalidated {
        sentence: String,
        annotator: String,
    },
    SentenceReopened {
        sentence: String,
        round: u8,
    },
    ResponseAccepted {
        sentence: String,
        annotator: String,
        label: Label,
        round: u8,
    },
    ResponseRejected {
        sentence: String,
        annotator: String,
        label: Label,
        reason: RejectReason,
    },
    RoundAdvanced {
        sentence: String,
        round: u8,
    },
    SentenceResolved {
        sentence: String,
        label: Label,
    },
    StageAdvanced {
        sentence: String,
        stage: usize,
    },
    SentenceExhausted {
        sentence: String,
    },
    SentenceUnresolvable {
        sentence: String,
    },
    HitCompleted {
        hit: String,
        annotator: String,
        idempotency_key: Option<String>,
        outcome: HitOutcome,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SentenceEnqueued { .. } => "sentence_enqueued",
            EventKind::AnnotatorRegistered { .. } => "annotator_registered",
            EventKind::QualificationGraded { .. } => "qualification_graded",
            EventKind::HitIssued { .. } => "hit_issued",
            EventKind::HitCancelled { .. } => "hit_cancelled",
            EventKind::ControlRecorded { .. } => "control_recorded",
            EventKind::AnnotatorSuspended { .. } => "annotator_suspended",
            EventKind::ResponseInvalidated { .. } => "response_invalidated",
            EventKind::SentenceReopened { .. } => "sentence_reopened",
            EventKind::ResponseAccepted { .. } => "response_accepted",
            EventKind::ResponseRejected { .. } => "response_rejected",
            EventKind::RoundAdvanced { .. } => "round_advanced",
            EventKind::SentenceResolved { .. } => "sentence_resolved",
            EventKind::StageAdvanced { .. } => "stage_advanced",
            EventKind::SentenceExhausted { .. } => "sentence_exhausted",
            EventKind::SentenceUnresolvable { .. } => "sentence_unresolvable",
            EventKind::HitCompleted { .. } => "hit_completed",
        }
    }
}
