//! The single-writer core: owns the orchestrator and the event log, executes
//! commands one at a time, and publishes read snapshots.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crowdre_core::campaign::{self, LoadedCampaign};
use crowdre_core::model::{Dataset, Instance};
use crowdre_core::orchestrator::persist::{read_log, read_snapshot, write_snapshot, LogWriter, PersistError, Snapshot};
use crowdre_core::orchestrator::{
    progress, Campaign, Clock, Hit, HitOutcome, Orchestrator, OrchestratorConfig, Progress,
    ReplayError, State,
};
use crowdre_core::quality::{Qualification, QualificationTest, WRONG_TYPE_DEFINITION};
use crowdre_core::{AnnotationPlan, ClusterName, Label, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Required on first start; later starts must agree with the stored one.
    pub seed: Option<u64>,
    pub logical_clock: bool,
    pub sync: bool,
    /// Write a snapshot after this many new events (0 disables).
    pub snapshot_every: u64,
}

/// Parameters fixed at the first start of a campaign directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub seed: u64,
    pub clock: Clock,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Campaign(#[from] campaign::CampaignError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("corrupt log: {0}")]
    Replay(#[from] ReplayError),
    #[error("{0}")]
    Config(String),
    #[error("enqueueing the dataset failed: {0}")]
    Enqueue(String),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Recovery {
    pub snapshot_seq: Option<u64>,
    pub events: usize,
    pub discarded_bytes: u64,
    pub enqueued: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanView {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub text: String,
}

/// A sentence as shown to an annotator. Carries no instance id, so control
/// slots cannot be told apart from sentence slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub index: usize,
    pub tokens: Vec<String>,
    pub text: String,
    pub subject: SpanView,
    pub object: SpanView,
}

impl SentenceView {
    pub fn new(index: usize, inst: &Instance) -> Self {
        let span = |s: crowdre_core::model::Span, t: crowdre_core::model::EntityType| SpanView {
            start: s.start,
            end: s.end,
            entity_type: t.to_string(),
            text: inst.tokens[s.start..s.end].join(" "),
        };
        SentenceView {
            index,
            tokens: inst.tokens.clone(),
            text: inst.text(),
            subject: span(inst.subj_span, inst.subj_type),
            object: span(inst.obj_span, inst.obj_type),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceView {
    pub label: Label,
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<String>,
}

pub fn choice_views(plan: &AnnotationPlan, labels: &[Label]) -> Vec<ChoiceView> {
    labels
        .iter()
        .map(|l| match plan.definition(l) {
            Some(info) => ChoiceView {
                label: l.clone(),
                definition: info.definition.clone(),
                guideline: info.guideline.clone(),
            },
            None if l.is_wrong_type() => ChoiceView {
                label: l.clone(),
                definition: WRONG_TYPE_DEFINITION.into(),
                guideline: None,
            },
            None => ChoiceView {
                label: l.clone(),
                definition: String::new(),
                guideline: None,
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub hit: String,
    pub cluster: ClusterName,
    pub stage: usize,
    pub stage_count: usize,
    pub price_cents: u64,
    pub sentences: Vec<SentenceView>,
    pub choices: Vec<ChoiceView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub index: usize,
    pub sentence: SentenceView,
    pub choices: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationView {
    pub cluster: ClusterName,
    pub definitions: Vec<ChoiceView>,
    pub questions: Vec<QuestionView>,
}

impl QualificationView {
    pub fn new(test: &QualificationTest) -> Self {
        QualificationView {
            cluster: test.cluster.clone(),
            definitions: test
                .definitions
                .iter()
                .map(|(l, info)| ChoiceView {
                    label: l.clone(),
                    definition: info.definition.clone(),
                    guideline: info.guideline.clone(),
                })
                .collect(),
            questions: test
                .questions
                .iter()
                .enumerate()
                .map(|(i, q)| QuestionView {
                    index: i,
                    sentence: SentenceView::new(i, &q.instance),
                    choices: q.choices.clone(),
                })
                .collect(),
        }
    }
}

/// What the annotator learns after submitting. `recorded` counts sentence
/// responses only and is reported for the HIT as a whole, so nothing here
/// tells which slot was a control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitView {
    pub hit: String,
    pub recorded: usize,
    pub suspended: bool,
}

impl SubmitView {
    fn new(hit: &str, outcome: &HitOutcome) -> Self {
        SubmitView {
            hit: hit.to_string(),
            recorded: outcome.accepted,
            suspended: outcome.suspended,
        }
    }
}

pub enum Command {
    Register {
        annotator: String,
        approved_count: u64,
        approval_rate: f64,
    },
    Qualify {
        annotator: String,
        cluster: ClusterName,
        answers: Vec<Label>,
    },
    NextHit {
        annotator: String,
        cluster: Option<ClusterName>,
    },
    Submit {
        annotator: String,
        hit: String,
        answers: Vec<Label>,
        idempotency_key: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Registered,
    Qualification(Qualification),
    Hit(Option<HitView>),
    Submitted(SubmitView),
}

/// Immutable view published after every command.
pub struct ReadModel {
    pub state: State,
    pub progress: Progress,
    pub events: usize,
}

pub struct Service {
    orch: Orchestrator,
    writer: LogWriter,
    persisted: usize,
    dir: PathBuf,
    snapshot_every: u64,
    last_snapshot_seq: u64,
    dataset: Dataset,
    taxonomy: Taxonomy,
    recovery: Recovery,
    poisoned: Option<String>,
}

fn load_run_params(dir: &Path, cfg: &ServiceConfig) -> Result<RunParams, ServiceError> {
    let path = dir.join(RUN_FILE);
    let clock = if cfg.logical_clock { Clock::Logical } else { Clock::Wall };
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|source| PersistError::Io { path: path.clone(), source })?;
        let stored: RunParams = serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        if cfg.seed.is_some_and(|s| s != stored.seed) {
            return Err(ServiceError::Config(format!(
                "seed {} differs from the seed {} this campaign was started with",
                cfg.seed.unwrap_or_default(),
                stored.seed
            )));
        }
        if stored.clock != clock {
            return Err(ServiceError::Config("clock mode differs from the one this campaign was started with".into()));
        }
        return Ok(stored);
    }
    let params = RunParams {
        seed: cfg.seed.unwrap_or(0),
        clock,
    };
    let tmp = dir.join(format!("{RUN_FILE}.tmp"));
    std::fs::write(&tmp, serde_json::to_string(&params).expect("run params serialise"))
        .map_err(|source| PersistError::Io { path: tmp.clone(), source })?;
    std::fs::rename(&tmp, &path).map_err(|source| PersistError::Io { path: path.clone(), source })?;
    Ok(params)
}

impl Service {
    /// Loads the campaign, recovers state from snapshot and log, and enqueues
    /// the dataset on first start.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let dir = cfg.data_dir.clone();
        let LoadedCampaign {
            campaign,
            dataset,
            settings,
            warnings,
        } = campaign::load(&dir)?;
        for w in warnings {
            tracing::warn!("{w}");
        }
        let params = load_run_params(&dir, cfg)?;
        let config = OrchestratorConfig {
            seed: params.seed,
            gate: settings.gate.clone(),
            price_cents: settings.price_cents,
            clock: params.clock,
        };
        let tax_path = dir.join(campaign::TAXONOMY);
        let taxonomy = if tax_path.exists() {
            Taxonomy::load(&tax_path).map_err(|e| ServiceError::Config(e.to_string()))?
        } else {
            Taxonomy::canonical()
        };

        let log_path = dir.join(campaign::LOG);
        let loaded = read_log(&log_path)?;
        let log_last = loaded.events.last().map_or(0, |e| e.seq);
        let snapshot = read_snapshot(&dir.join(campaign::SNAPSHOT))?.filter(|s| {
            let usable = s.last_seq() <= log_last;
            if !usable {
                tracing::warn!("snapshot at seq {} is ahead of the log (seq {log_last}); ignoring it", s.last_seq());
            }
            usable
        });
        let mut recovery = Recovery {
            snapshot_seq: snapshot.as_ref().map(Snapshot::last_seq),
            events: loaded.events.len(),
            discarded_bytes: loaded.discarded_bytes,
            enqueued: 0,
        };
        let mut orch = match snapshot {
            Some(s) => Orchestrator::restore(campaign, config, s.state, &loaded.events)?,
            None => Orchestrator::replay(campaign, config, &loaded.events)?,
        };
        let writer = LogWriter::open(&log_path, loaded.committed_bytes, cfg.sync)?;
        let persisted = orch.log().len();
        let last_snapshot_seq = recovery.snapshot_seq.unwrap_or(0);
        if orch.state().sentences.is_empty() && !dataset.is_empty() {
            recovery.enqueued = orch
                .enqueue(dataset.instances.iter().cloned())
                .map_err(|e| ServiceError::Enqueue(e.to_string()))?;
        }
        let mut svc = Service {
            orch,
            writer,
            persisted,
            dir,
            snapshot_every: cfg.snapshot_every,
            last_snapshot_seq,
            dataset,
            taxonomy,
            recovery,
            poisoned: None,
        };
        svc.persist().map_err(|e| ServiceError::Config(e.message))?;
        Ok(svc)
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn campaign(&self) -> &Campaign {
        self.orch.campaign()
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn read_model(&self) -> ReadModel {
        ReadModel {
            state: self.orch.state().clone(),
            progress: progress(self.orch.plan(), self.orch.state()),
            events: self.orch.log().len(),
        }
    }

    /// Appends events not yet on disk. A failed write leaves memory ahead of
    /// the log, so the service refuses further commands until restarted.
    fn persist(&mut self) -> Result<(), ApiError> {
        let new = &self.orch.log()[self.persisted..];
        if new.is_empty() {
            return Ok(());
        }
        if let Err(e) = self.writer.append(new) {
            let msg = format!("event log write failed: {e}");
            self.poisoned = Some(msg.clone());
            return Err(ApiError::unavailable(msg));
        }
        self.persisted = self.orch.log().len();
        let seq = self.orch.state().last_seq;
        if self.snapshot_every > 0 && seq - self.last_snapshot_seq >= self.snapshot_every {
            let snap = Snapshot {
                state: self.orch.state().clone(),
            };
            match write_snapshot(&self.dir.join(campaign::SNAPSHOT), &snap) {
                Ok(()) => self.last_snapshot_seq = seq,
                Err(e) => tracing::warn!("snapshot write failed: {e}"),
            }
        }
        Ok(())
    }

    fn hit_view(&self, hit: &Hit) -> HitView {
        let plan = self.orch.plan();
        let cluster = plan.cluster(&hit.cluster).expect("issued hits name known clusters");
        HitView {
            hit: hit.id.clone(),
            cluster: hit.cluster.clone(),
            stage: hit.stage,
            stage_count: cluster.stage_count(),
            price_cents: hit.price_cents,
            sentences: self
                .orch
                .slot_instances(hit)
                .into_iter()
                .enumerate()
                .map(|(i, inst)| SentenceView::new(i, inst))
                .collect(),
            choices: choice_views(plan, &self.orch.choices(hit)),
        }
    }

    pub fn execute(&mut self, cmd: Command) -> Result<Reply, ApiError> {
        if let Some(msg) = &self.poisoned {
            return Err(ApiError::unavailable(msg.clone()));
        }
        let result = match cmd {
            Command::Register {
                annotator,
                approved_count,
                approval_rate,
            } => self
                .orch
                .register(&annotator, approved_count, approval_rate)
                .map(|()| Reply::Registered),
            Command::Qualify {
                annotator,
                cluster,
                answers,
            } => self
                .orch
                .take_qualification(&annotator, &cluster, &answers)
                .map(Reply::Qualification),
            Command::NextHit { annotator, cluster } => self
                .orch
                .request_hit(&annotator, cluster.as_ref())
                .map(|h| Reply::Hit(h.map(|h| self.hit_view(&h)))),
            Command::Submit {
                annotator,
                hit,
                answers,
                idempotency_key,
            } => self
                .orch
                .submit(&hit, &annotator, &answers, idempotency_key.as_deref())
                .map(|o| Reply::Submitted(SubmitView::new(&hit, &o))),
        };
        // Persist whatever the outcome so no emitted event stays memory-only.
        self.persist()?;
        result.map_err(ApiError::from)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }
}

pub type SharedRead = Arc<ReadModel>;
