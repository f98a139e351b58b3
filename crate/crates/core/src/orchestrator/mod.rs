//! Annotation lifecycle: HIT issue with hidden controls, response ingestion,
//! adjudication rounds and the WRONG_TYPE stage fallback.
//!
//! All mutation goes through [`Orchestrator::emit`], which applies an event to
//! [`State`] and appends it to the log, so replaying the log through
//! [`State::apply`] rebuilds the same state.

mod event;
mod hit;
pub mod persist;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use event::{Event, EventKind, HitOutcome, RejectReason};
pub use hit::{build_hits, Hit, HitError, Slot, DEFAULT_PRICE_CENTS, HIT_SIZE, SENTENCES_PER_HIT};
pub use state::{
    required_responses, ApplyError, HitRecord, HitStatus, Resolution, Response, ResponseStatus, SentenceState,
    StageRecord, State, MAX_ROUNDS,
};

use crate::model::{Exclusion, Instance, Label, TypePair};
use crate::quality::{
    below_gate, check_prerequisites, grade_qualification, ControlPool, GateParams, Qualification, QualificationTest,
    QualityError,
};
use crate::taxonomy::{AnnotationPlan, ClusterName, SuperCluster};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Timestamps equal sequence numbers; logs are byte-reproducible.
    #[default]
    Logical,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub seed: u64,
    pub gate: GateParams,
    pub price_cents: u64,
    pub clock: Clock,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            seed: 0,
            gate: GateParams::default(),
            price_cents: DEFAULT_PRICE_CENTS,
            clock: Clock::Logical,
        }
    }
}

/// Inputs fixed for the life of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub plan: AnnotationPlan,
    pub controls: ControlPool,
    pub tests: BTreeMap<ClusterName, QualificationTest>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterName),
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("unknown hit `{0}`")]
    UnknownHit(String),
    #[error("sentence `{0}` is already enqueued")]
    DuplicateSentence(String),
    #[error("sentence `{id}` has type pair {pair} which no cluster covers")]
    Unroutable { id: String, pair: TypePair },
    #[error("annotator `{0}` does not meet the task-history prerequisites")]
    Ineligible(String),
    #[error("annotator `{0}` is already registered with different history")]
    AnnotatorConflict(String),
    #[error("annotator `{annotator}` is not qualified for {cluster}")]
    NotQualified { annotator: String, cluster: ClusterName },
    #[error("annotator `{annotator}` is suspended in {cluster}")]
    Suspended { annotator: String, cluster: ClusterName },
    #[error("annotator `{0}` is not qualified for any cluster")]
    NoQualifiedCluster(String),
    #[error("no qualification test for {0}")]
    NoQualificationTest(ClusterName),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Hit(#[from] HitError),
    #[error("hit `{hit}` belongs to another annotator")]
    HitNotOwned { hit: String },
    #[error("hit `{hit}` is already closed")]
    HitClosed { hit: String },
    #[error("expected {expected} answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
    #[error("slot {slot}: label {label} is not among the offered choices")]
    LabelOutsideChoices { slot: usize, label: Label, choices: Vec<Label> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("sequence gap: expected {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

/// Outcome of checking a sentence that has its round's responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Resolve(Label),
    NextRound(u8),
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fallback {
    NextStage(usize),
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdvanceError {
    #[error("sentence `{id}` has {have} accepted responses, round {round} needs {need}")]
    NotReady { id: String, have: usize, round: u8, need: usize },
    #[error("sentence `{0}` is not open")]
    Closed(String),
    #[error("sentence `{0}` is not resolved to WRONG_TYPE")]
    NotWrongType(String),
}

/// The label with the strictly highest count, with that count.
pub fn unique_plurality(labels: &[Label]) -> Option<(Label, usize)> {
    let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max()?;
    let mut leaders = counts.iter().filter(|(_, &c)| c == top);
    let (label, _) = leaders.next()?;
    leaders.next().is_none().then(|| ((*label).clone(), top))
}

/// Resolution rule for a sentence that holds its round's required responses.
pub fn decide(s: &SentenceState) -> Result<Decision, AdvanceError> {
    if !s.resolution.is_open() {
        return Err(AdvanceError::Closed(s.id().to_string()));
    }
    let have = s.accepted_count();
    let need = required_responses(s.round);
    if have < need {
        return Err(AdvanceError::NotReady {
            id: s.id().to_string(),
            have,
            round: s.round,
            need,
        });
    }
    Ok(match unique_plurality(&s.accepted_labels()) {
        Some((label, n)) if n >= 2 => Decision::Resolve(label),
        _ if s.round < MAX_ROUNDS => Decision::NextRound(s.round + 1),
        _ => Decision::Unresolvable,
    })
}

pub fn fallback(s: &SentenceState) -> Result<Fallback, AdvanceError> {
    match &s.resolution {
        Resolution::Resolved(l) if l.is_wrong_type() => Ok(if s.stage + 1 < s.stage_count {
            Fallback::NextStage(s.stage + 1)
        } else {
            Fallback::Exhausted
        }),
        _ => Err(AdvanceError::NotWrongType(s.id().to_string())),
    }
}

/// Applies [`decide`] to a copy of the sentence.
pub fn advance(s: &SentenceState) -> Result<SentenceState, AdvanceError> {
    let mut next = s.clone();
    match decide(s)? {
        Decision::Resolve(label) => next.resolution = Resolution::Resolved(label),
        Decision::NextRound(r) => next.round = r,
        Decision::Unresolvable => next.resolution = Resolution::Unresolvable,
    }
    Ok(next)
}

/// Applies [`fallback`] to a copy of the sentence.
pub fn wrong_type_fallback(s: &SentenceState) -> Result<SentenceState, AdvanceError> {
    let mut next = s.clone();
    match fallback(s)? {
        Fallback::NextStage(stage) => {
            let responses = std::mem::take(&mut next.responses);
            next.history.push(StageRecord {
                stage: s.stage,
                rounds: s.round,
                responses,
            });
            next.stage = stage;
            next.round = 1;
            next.resolution = Resolution::Unresolved;
        }
        Fallback::Exhausted => next.resolution = Resolution::WrongTypeExhausted,
    }
    Ok(next)
}

pub const EXCLUDED_WRONG_TYPE: &str = "wrong_type_exhausted";
pub const EXCLUDED_UNRESOLVABLE: &str = "unresolvable";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLabels {
    pub assignments: BTreeMap<String, Label>,
    pub exclusions: Vec<Exclusion>,
    pub pending: Vec<String>,
}

pub fn emit_final_labels<'a>(states: impl IntoIterator<Item = &'a SentenceState>) -> FinalLabels {
    let mut out = FinalLabels::default();
    for s in states {
        let id = s.id().to_string();
        match &s.resolution {
            Resolution::Resolved(l) if !l.is_wrong_type() => {
                out.assignments.insert(id, l.clone());
            }
            Resolution::Resolved(_) | Resolution::Unresolved => out.pending.push(id),
            Resolution::WrongTypeExhausted => out.exclusions.push(Exclusion {
                id,
                reason: EXCLUDED_WRONG_TYPE.into(),
            }),
            Resolution::Unresolvable => out.exclusions.push(Exclusion {
                id,
                reason: EXCLUDED_UNRESOLVABLE.into(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterProgress {
    pub total: usize,
    pub unresolved: usize,
    pub resolved: usize,
    pub wrong_type_exhausted: usize,
    pub unresolvable: usize,
    /// Open sentences by current round.
    pub rounds: BTreeMap<u8, usize>,
    /// All sentences by current stage.
    pub stages: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub overall: ClusterProgress,
    pub clusters: BTreeMap<ClusterName, ClusterProgress>,
    pub hits_issued: u64,
    pub hits_outstanding: usize,
    pub cost_cents: u64,
}

pub struct Orchestrator {
    campaign: Campaign,
    config: OrchestratorConfig,
    control_truth: BTreeMap<(ClusterName, String), Label>,
    state: State,
    log: Vec<Event>,
}

impl Orchestrator {
    pub fn new(campaign: Campaign, config: OrchestratorConfig) -> Self {
        let control_truth = campaign
            .controls
            .entries
            .iter()
            .flat_map(|(c, items)| items.iter().map(move |i| ((c.clone(), i.instance.id.clone()), i.label.clone())))
            .collect();
        Orchestrator {
            campaign,
            config,
            control_truth,
            state: State::default(),
            log: Vec::new(),
        }
    }

    /// Rebuilds from a complete log, which must start at sequence 1.
    pub fn replay(campaign: Campaign, config: OrchestratorConfig, events: &[Event]) -> Result<Self, ReplayError> {
        let mut o = Orchestrator::new(campaign, config);
        o.apply_all(events)?;
        Ok(o)
    }

    /// Rebuilds from a snapshot plus the events after it. Events at or before
    /// the snapshot's sequence number are skipped.
    pub fn restore(
        campaign: Campaign,
        config: OrchestratorConfig,
        snapshot: State,
        events: &[Event],
    ) -> Result<Self, ReplayError> {
        let mut o = Orchestrator::new(campaign, config);
        let from = snapshot.last_seq;
        o.state = snapshot;
        let tail: Vec<Event> = events.iter().filter(|e| e.seq > from).cloned().collect();
        o.apply_all(&tail)?;
        Ok(o)
    }

    fn apply_all(&mut self, events: &[Event]) -> Result<(), ReplayError> {
        for e in events {
            let expected = self.state.last_seq + 1;
            if e.seq != expected {
                return Err(ReplayError::Gap {
                    expected,
                    found: e.seq,
                });
            }
            self.state.apply(e)?;
            self.log.push(e.clone());
        }
        Ok(())
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    pub fn plan(&self) -> &AnnotationPlan {
        &self.campaign.plan
    }

    pub fn campaign(&self) -> &Campaign {
        &self.campaign
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    fn now(&self, seq: u64) -> u64 {
        match self.config.clock {
            Clock::Logical => seq,
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    fn emit(&mut self, kind: EventKind) {
        let seq = self.state.last_seq + 1;
        let event = Event {
            seq,
            ts: self.now(seq),
            commit: false,
            kind,
        };
        self.state
            .apply(&event)
            .unwrap_or_else(|e| panic!("command produced an inapplicable event: {e}"));
        self.log.push(event);
    }

    fn commit(&mut self, batch_start: usize) {
        if self.log.len() > batch_start {
            self.log.last_mut().expect("non-empty batch").commit = true;
        }
    }

    fn cluster(&self, name: &ClusterName) -> Result<&SuperCluster, OrchestratorError> {
        self.campaign
            .plan
            .cluster(name)
            .ok_or_else(|| OrchestratorError::UnknownCluster(name.clone()))
    }

    /// Adds sentences to the campaign, all or nothing.
    pub fn enqueue(&mut self, instances: impl IntoIterator<Item = Instance>) -> Result<usize, OrchestratorError> {
        let instances: Vec<Instance> = instances.into_iter().collect();
        let mut seen = BTreeSet::new();
        let mut routed = Vec::with_capacity(instances.len());
        for inst in instances {
            if self.state.sentences.contains_key(&inst.id) || !seen.insert(inst.id.clone()) {
                return Err(OrchestratorError::DuplicateSentence(inst.id));
            }
            let cluster = self
                .campaign
                .plan
                .cluster_for(&inst.type_pair())
                .ok_or_else(|| OrchestratorError::Unroutable {
                    id: inst.id.clone(),
                    pair: inst.type_pair(),
                })?;
            let (name, stages) = (cluster.name.clone(), cluster.stage_count());
            routed.push((inst, name, stages));
        }
        let start = self.log.len();
        let n = routed.len();
        for (instance, cluster, stage_count) in routed {
            self.emit(EventKind::SentenceEnqueued {
                instance,
                cluster,
                stage_count,
            });
        }
        self.commit(start);
        Ok(n)
    }

    /// Registers an annotator that meets the prerequisites. Repeating an
    /// identical registration is a no-op.
    pub fn register(&mut self, id: &str, approved_count: u64, approval_rate: f64) -> Result<(), OrchestratorError> {
        if let Some(p) = self.state.annotators.get(id) {
            return if p.approved_count == approved_count && p.approval_rate == approval_rate {
                Ok(())
            } else {
                Err(OrchestratorError::AnnotatorConflict(id.to_string()))
            };
        }
        let candidate = crate::quality::AnnotatorProfile::new(id, approved_count, approval_rate);
        if !(0.0..=1.0).contains(&approval_rate) || !check_prerequisites(&candidate, &self.config.gate) {
            return Err(OrchestratorError::Ineligible(id.to_string()));
        }
        let start = self.log.len();
        self.emit(EventKind::AnnotatorRegistered {
            annotator: id.to_string(),
            approved_count,
            approval_rate,
        });
        self.commit(start);
        Ok(())
    }

    pub fn qualification_test(&self, cluster: &ClusterName) -> Result<&QualificationTest, OrchestratorError> {
        self.cluster(cluster)?;
        self.campaign
            .tests
            .get(cluster)
            .ok_or_else(|| OrchestratorError::NoQualificationTest(cluster.clone()))
    }

    /// Grades a qualification attempt. Passing again after a pass is a no-op;
    /// retakes are allowed after a failure but not once suspended.
    pub fn take_qualification(
        &mut self,
        annotator: &str,
        cluster: &ClusterName,
        answers: &[Label],
    ) -> Result<Qualification, OrchestratorError> {
        let profile = self
            .state
            .annotators
            .get(annotator)
            .ok_or_else(|| OrchestratorError::UnknownAnnotator(annotator.to_string()))?;
        let test = self.qualification_test(cluster)?;
        if profile.is_suspended(cluster) {
            return Err(OrchestratorError::Suspended {
                annotator: annotator.to_string(),
                cluster: cluster.clone(),
            });
        }
        if profile.is_qualified(cluster) {
            return Ok(Qualification::Passed);
        }
        let result = grade_qualification(test, answers)?;
        self.record_qualification(annotator, cluster, result);
        Ok(result)
    }

    /// Records a qualification outcome decided outside the grading flow.
    pub fn grant_qualification(
        &mut self,
        annotator: &str,
        cluster: &ClusterName,
        result: Qualification,
    ) -> Result<(), OrchestratorError> {
        self.cluster(cluster)?;
        if !self.state.annotators.contains_key(annotator) {
            return Err(OrchestratorError::UnknownAnnotator(annotator.to_string()));
        }
        if self.state.qualification(annotator, cluster) != result {
            self.record_qualification(annotator, cluster, result);
        }
        Ok(())
    }

    fn record_qualification(&mut self, annotator: &str, cluster: &ClusterName, result: Qualification) {
        let start = self.log.len();
        self.emit(EventKind::QualificationGraded {
            annotator: annotator.to_string(),
            cluster: cluster.clone(),
            result,
        });
        self.commit(start);
    }

    /// Control ids usable at `stage`: those whose known label is offered
    /// there, or the whole pool when none is.
    fn controls_for(&self, cluster: &SuperCluster, stage: usize) -> Vec<String> {
        let pool = self.campaign.controls.for_cluster(&cluster.name);
        let choices = cluster.stage_choices(stage);
        let fitting: Vec<String> = pool
            .iter()
            .filter(|c| choices.contains(&c.label))
            .map(|c| c.instance.id.clone())
            .collect();
        if fitting.is_empty() {
            pool.iter().map(|c| c.instance.id.clone()).collect()
        } else {
            fitting
        }
    }

    /// Returns the annotator's outstanding HIT, or issues a new one from the
    /// first cluster (in name order, or `cluster` if given) with work for
    /// them. `None` when nothing is available.
    pub fn request_hit(&mut self, annotator: &str, cluster: Option<&ClusterName>) -> Result<Option<Hit>, OrchestratorError> {
        let profile = self
            .state
            .annotators
            .get(annotator)
            .ok_or_else(|| OrchestratorError::UnknownAnnotator(annotator.to_string()))?;
        if let Some(rec) = self.state.outstanding_hit(annotator) {
            return Ok(Some(rec.hit.clone()));
        }
        let clusters: Vec<ClusterName> = match cluster {
            Some(c) => {
                self.cluster(c)?;
                if !profile.is_qualified(c) {
                    return Err(OrchestratorError::NotQualified {
                        annotator: annotator.to_string(),
                        cluster: c.clone(),
                    });
                }
                if profile.is_suspended(c) {
                    return Err(OrchestratorError::Suspended {
                        annotator: annotator.to_string(),
                        cluster: c.clone(),
                    });
                }
                vec![c.clone()]
            }
            None => {
                let open: Vec<ClusterName> = self
                    .campaign
                    .plan
                    .clusters
                    .keys()
                    .filter(|c| profile.can_annotate(c))
                    .cloned()
                    .collect();
                if open.is_empty() {
                    let suspended = self.campaign.plan.clusters.keys().find(|c| profile.is_suspended(c));
                    return Err(match suspended {
                        Some(c) => OrchestratorError::Suspended {
                            annotator: annotator.to_string(),
                            cluster: c.clone(),
                        },
                        None => OrchestratorError::NoQualifiedCluster(annotator.to_string()),
                    });
                }
                open
            }
        };
        for name in clusters {
            let mut eligible: Vec<&SentenceState> = self
                .state
                .sentences
                .values()
                .filter(|s| {
                    s.cluster == name
                        && s.resolution.is_open()
                        && s.open_slots() > 0
                        && !s.has_responded(annotator)
                        && !s.reserved_by.contains(annotator)
                })
                .collect();
            if eligible.is_empty() {
                continue;
            }
            eligible.sort_by_key(|s| s.queue_pos);
            let stage = eligible[0].stage;
            let pending: Vec<String> = eligible
                .iter()
                .filter(|s| s.stage == stage)
                .take(SENTENCES_PER_HIT)
                .map(|s| s.id().to_string())
                .collect();
            let cluster = self.cluster(&name)?;
            let controls = self.controls_for(cluster, stage);
            let number = self.state.hits_issued + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(number);
            let id = format!("hit-{number:06}");
            let mut hit = build_hits(&pending, &controls, &name, stage, &mut rng, || id.clone())?
                .pop()
                .expect("one chunk of at most four sentences");
            hit.price_cents = self.config.price_cents;
            let start = self.log.len();
            self.emit(EventKind::HitIssued {
                annotator: annotator.to_string(),
                hit: hit.clone(),
            });
            self.commit(start);
            return Ok(Some(hit));
        }
        Ok(None)
    }

    /// Releases an outstanding HIT without recording answers.
    pub fn cancel_hit(&mut self, hit: &str) -> Result<(), OrchestratorError> {
        let rec = self
            .state
            .hits
            .get(hit)
            .ok_or_else(|| OrchestratorError::UnknownHit(hit.to_string()))?;
        if rec.status != HitStatus::Outstanding {
            return Err(OrchestratorError::HitClosed { hit: hit.to_string() });
        }
        let start = self.log.len();
        self.emit(EventKind::HitCancelled { hit: hit.to_string() });
        self.commit(start);
        Ok(())
    }

    /// The instances shown in each slot, in slot order.
    pub fn slot_instances(&self, hit: &Hit) -> Vec<&Instance> {
        hit.slots
            .iter()
            .filter_map(|slot| match slot {
                Slot::Sentence(id) => self.state.sentences.get(id).map(|s| &s.instance),
                Slot::Control(id) => self
                    .campaign
                    .controls
                    .for_cluster(&hit.cluster)
                    .iter()
                    .find(|c| &c.instance.id == id)
                    .map(|c| &c.instance),
            })
            .collect()
    }

    pub fn choices(&self, hit: &Hit) -> Vec<Label> {
        self.campaign
            .plan
            .cluster(&hit.cluster)
            .map(|c| c.stage_choices(hit.stage))
            .unwrap_or_default()
    }

    /// Ingests one answer per slot. Resubmitting a completed HIT with the same
    /// idempotency key returns the recorded outcome and emits nothing.
    pub fn submit(
        &mut self,
        hit_id: &str,
        annotator: &str,
        answers: &[Label],
        idempotency_key: Option<&str>,
    ) -> Result<HitOutcome, OrchestratorError> {
        let rec = self
            .state
            .hits
            .get(hit_id)
            .ok_or_else(|| OrchestratorError::UnknownHit(hit_id.to_string()))?;
        if rec.annotator != annotator {
            return Err(OrchestratorError::HitNotOwned { hit: hit_id.to_string() });
        }
        match rec.status {
            HitStatus::Outstanding => {}
            HitStatus::Completed if idempotency_key.is_some() && rec.idempotency_key.as_deref() == idempotency_key => {
                return Ok(rec.outcome.clone().expect("completed hits carry an outcome"));
            }
            _ => return Err(OrchestratorError::HitClosed { hit: hit_id.to_string() }),
        }
        let hit = rec.hit.clone();
        let cluster = self.cluster(&hit.cluster)?.clone();
        let profile = &self.state.annotators[annotator];
        if !profile.is_qualified(&cluster.name) {
            return Err(OrchestratorError::NotQualified {
                annotator: annotator.to_string(),
                cluster: cluster.name.clone(),
            });
        }
        if answers.len() != hit.slots.len() {
            return Err(OrchestratorError::AnswerCount {
                expected: hit.slots.len(),
                got: answers.len(),
            });
        }
        let choices = cluster.stage_choices(hit.stage);
        for (slot, label) in answers.iter().enumerate() {
            if !choices.contains(label) {
                return Err(OrchestratorError::LabelOutsideChoices {
                    slot,
                    label: label.clone(),
                    choices,
                });
            }
        }

        let start = self.log.len();
        let mut touched: Vec<String> = Vec::new();
        let mut suspended_now = false;
        for (slot, answer) in hit.slots.iter().zip(answers) {
            let Slot::Control(cid) = slot else { continue };
            let truth = &self.control_truth[&(cluster.name.clone(), cid.clone())];
            let correct = *answer == cluster.expected_answer(hit.stage, truth);
            self.emit(EventKind::ControlRecorded {
                annotator: annotator.to_string(),
                cluster: cluster.name.clone(),
                control: cid.clone(),
                correct,
            });
            let profile = &self.state.annotators[annotator];
            let stats = profile.stats(&cluster.name);
            if self.config.gate.enabled && !profile.is_suspended(&cluster.name) && below_gate(&stats, &self.config.gate) {
                self.emit(EventKind::AnnotatorSuspended {
                    annotator: annotator.to_string(),
                    cluster: cluster.name.clone(),
                    correct: stats.correct,
                    seen: stats.seen,
                });
                suspended_now = true;
                touched.extend(self.invalidate(annotator, &cluster.name));
            }
        }

        let suspended = self.state.annotators[annotator].is_suspended(&cluster.name);
        let (mut accepted, mut rejected) = (0, 0);
        for (slot, answer) in hit.slots.iter().zip(answers) {
            let Slot::Sentence(sid) = slot else { continue };
            let s = &self.state.sentences[sid];
            let reason = if suspended {
                Some(RejectReason::Suspended)
            } else if s.resolution.is_open()
                && s.stage == hit.stage
                && !s.has_responded(annotator)
                && s.accepted_count() < required_responses(s.round)
            {
                None
            } else {
                Some(RejectReason::Stale)
            };
            match reason {
                None => {
                    let round = s.round;
                    self.emit(EventKind::ResponseAccepted {
                        sentence: sid.clone(),
                        annotator: annotator.to_string(),
                        label: answer.clone(),
                        round,
                    });
                    accepted += 1;
                    touched.push(sid.clone());
                }
                Some(reason) => {
                    self.emit(EventKind::ResponseRejected {
                        sentence: sid.clone(),
                        annotator: annotator.to_string(),
                        label: answer.clone(),
                        reason,
                    });
                    rejected += 1;
                }
            }
        }

        let mut settled = BTreeSet::new();
        for id in touched {
            if settled.insert(id.clone()) {
                self.settle(&id);
            }
        }

        let outcome = HitOutcome {
            accepted,
            rejected,
            controls: hit.control_count(),
            suspended: suspended_now,
        };
        self.emit(EventKind::HitCompleted {
            hit: hit_id.to_string(),
            annotator: annotator.to_string(),
            idempotency_key: idempotency_key.map(str::to_string),
            outcome: outcome.clone(),
        });
        self.commit(start);
        Ok(outcome)
    }

    /// Withdraws the annotator's accepted responses at the current stage of
    /// every sentence in `cluster`, reopening those sentences at the round
    /// their remaining responses support. Returns the affected ids.
    fn invalidate(&mut self, annotator: &str, cluster: &ClusterName) -> Vec<String> {
        let ids: Vec<String> = self
            .state
            .sentences
            .values()
            .filter(|s| &s.cluster == cluster && s.accepted().any(|r| r.annotator == annotator))
            .map(|s| s.id().to_string())
            .collect();
        for id in &ids {
            self.emit(EventKind::ResponseInvalidated {
                sentence: id.clone(),
                annotator: annotator.to_string(),
            });
            let s = &self.state.sentences[id];
            let remaining = s.accepted_count();
            let round = u8::try_from(remaining.saturating_sub(1).max(1)).expect("at most five responses");
            if !s.resolution.is_open() || round < s.round {
                self.emit(EventKind::SentenceReopened {
                    sentence: id.clone(),
                    round,
                });
            }
        }
        ids
    }

    /// Resolves, advances or closes a sentence once its round is complete.
    fn settle(&mut self, id: &str) {
        let s = &self.state.sentences[id];
        let Ok(decision) = decide(s) else { return };
        match decision {
            Decision::Resolve(label) => {
                let wrong_type = label.is_wrong_type();
                self.emit(EventKind::SentenceResolved {
                    sentence: id.to_string(),
                    label,
                });
                if wrong_type {
                    match fallback(&self.state.sentences[id]).expect("just resolved to WRONG_TYPE") {
                        Fallback::NextStage(stage) => self.emit(EventKind::StageAdvanced {
                            sentence: id.to_string(),
                            stage,
                        }),
                        Fallback::Exhausted => self.emit(EventKind::SentenceExhausted { sentence: id.to_string() }),
                    }
                }
            }
            Decision::NextRound(round) => self.emit(EventKind::RoundAdvanced {
                sentence: id.to_string(),
                round,
            }),
            Decision::Unresolvable => self.emit(EventKind::SentenceUnresolvable { sentence: id.to_string() }),
        }
    }

    pub fn final_labels(&self) -> FinalLabels {
        emit_final_labels(self.state.sentences.values())
    }

    /// True when every sentence is closed.
    pub fn is_complete(&self) -> bool {
        self.state.sentences.values().all(|s| !s.resolution.is_open())
    }

    pub fn progress(&self) -> Progress {
        progress(&self.campaign.plan, &self.state)
    }

    /// Bookkeeping cost of every billable HIT, in cents.
    pub fn cost_cents(&self) -> u64 {
        self.state.cost_cents()
    }
}

pub fn progress(plan: &AnnotationPlan, state: &State) -> Progress {
    let mut p = Progress {
        hits_issued: state.hits_issued,
        hits_outstanding: state.outstanding.len(),
        cost_cents: state.cost_cents(),
        ..Progress::default()
    };
    for name in plan.clusters.keys() {
        p.clusters.insert(name.clone(), ClusterProgress::default());
    }
    for s in state.sentences.values() {
        for cp in [&mut p.overall, p.clusters.entry(s.cluster.clone()).or_default()] {
            cp.total += 1;
            *cp.stages.entry(s.stage).or_default() += 1;
            match s.resolution {
                Resolution::Unresolved => {
                    cp.unresolved += 1;
                    *cp.rounds.entry(s.round).or_default() += 1;
                }
                Resolution::Resolved(_) => cp.resolved += 1,
                Resolution::WrongTypeExhausted => cp.wrong_type_exhausted += 1,
                Resolution::Unresolvable => cp.unresolvable += 1,
            }
        }
    }
    p
}
