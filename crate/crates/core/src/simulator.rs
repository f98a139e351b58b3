//! Synthetic campaigns: generated sentences with known truth, parameterized
//! worker populations, and a driver that runs them through the orchestrator.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{agreement_report, RaterSelection};
use crate::model::{Dataset, EntityType, Instance, Label, Span, Split, TypePair};
use crate::orchestrator::{
    Campaign, Event, Orchestrator, OrchestratorConfig, OrchestratorError, Resolution, Slot, State,
    DEFAULT_PRICE_CENTS,
};
use crate::quality::{ControlItem, ControlPool, GateParams, Qualification, QualificationTest};
use crate::taxonomy::{AnnotationPlan, ClusterName, RelationInfo, SuperCluster, Taxonomy, DEFAULT_MAX_SUBSET};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKernel {
    /// Mistakes spread evenly over the other offered choices.
    #[default]
    Uniform,
    /// Half of all mistakes go to NO_RELATION.
    NegativeBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkerKind {
    Calibrated {
        accuracy: f64,
        #[serde(default)]
        kernel: ErrorKernel,
    },
    /// Answers uniformly at random.
    Spammer,
    Perfectionist,
}

impl WorkerKind {
    pub fn is_spammer(&self) -> bool {
        matches!(self, WorkerKind::Spammer)
    }
}

/// Ground truth of a simulated sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Truth {
    Label(Label),
    /// The true relation lies outside the sentence's cluster.
    WrongType,
}

pub const TRUTH_FILE: &str = "truth.jsonl";

#[derive(Serialize, Deserialize)]
struct TruthLine {
    id: String,
    truth: Truth,
}

pub fn truth_to_jsonl(truth: &BTreeMap<String, Truth>) -> String {
    truth
        .iter()
        .map(|(id, t)| {
            let line = TruthLine {
                id: id.clone(),
                truth: t.clone(),
            };
            serde_json::to_string(&line).expect("truth serialises") + "\n"
        })
        .collect()
}

pub fn parse_truth(text: &str) -> Result<BTreeMap<String, Truth>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let t: TruthLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        if out.insert(t.id.clone(), t.truth).is_some() {
            return Err(format!("line {}: duplicate id `{}`", n + 1, t.id));
        }
    }
    Ok(out)
}

/// The answer a careful annotator gives at `stage`.
pub fn expected_answer(cluster: &SuperCluster, stage: usize, truth: &Truth) -> Label {
    match truth {
        Truth::WrongType => Label::wrong_type(),
        Truth::Label(l) => cluster.expected_answer(stage, l),
    }
}

pub struct Worker {
    pub id: String,
    pub kind: WorkerKind,
    rng: ChaCha8Rng,
}

impl Worker {
    pub fn new(id: impl Into<String>, kind: WorkerKind, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Worker {
            id: id.into(),
            kind,
            rng,
        }
    }

    /// Picks one of `choices` given the correct one.
    pub fn answer(&mut self, choices: &[Label], expected: &Label) -> Label {
        let others: Vec<&Label> = choices.iter().filter(|c| *c != expected).collect();
        match self.kind {
            WorkerKind::Perfectionist => expected.clone(),
            WorkerKind::Spammer => choices.choose(&mut self.rng).expect("non-empty choices").clone(),
            WorkerKind::Calibrated { accuracy, kernel } => {
                if others.is_empty() || self.rng.random_bool(accuracy.clamp(0.0, 1.0)) {
                    return expected.clone();
                }
                let negative = Label::no_relation();
                if kernel == ErrorKernel::NegativeBiased
                    && others.contains(&&negative)
                    && self.rng.random_bool(0.5)
                {
                    return negative;
                }
                (*others.choose(&mut self.rng).expect("non-empty")).clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LabelSource {
    /// All type pairs of the canonical taxonomy.
    Canonical,
    /// The type pairs of one canonical super-cluster.
    Cluster { name: String },
    /// One cluster over (PERSON, PERSON) with `labels` synthetic relations.
    Synthetic { labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationShare {
    pub fraction: f64,
    pub worker: WorkerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub sentences: usize,
    pub seed: u64,
    pub labels: LabelSource,
    pub wrong_type_fraction: f64,
    pub no_relation_fraction: f64,
    pub workers: usize,
    pub population: Vec<PopulationShare>,
    pub control_pool_size: usize,
    pub max_subset: usize,
    pub gate: GateParams,
    pub price_cents: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            sentences: 200,
            seed: 0,
            labels: LabelSource::Canonical,
            wrong_type_fraction: 0.05,
            no_relation_fraction: 0.3,
            workers: 25,
            population: vec![
                PopulationShare {
                    fraction: 0.8,
                    worker: WorkerKind::Calibrated {
                        accuracy: 0.9,
                        kernel: ErrorKernel::Uniform,
                    },
                },
                PopulationShare {
                    fraction: 0.2,
                    worker: WorkerKind::Spammer,
                },
            ],
            control_pool_size: 100,
            max_subset: DEFAULT_MAX_SUBSET,
            gate: GateParams::default(),
            price_cents: DEFAULT_PRICE_CENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Config(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.wrong_type_fraction) || !unit(self.no_relation_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.wrong_type_fraction + self.no_relation_fraction > 1.0 {
            return bad("wrong_type_fraction + no_relation_fraction exceeds 1");
        }
        if self.population.is_empty() {
            return bad("population is empty");
        }
        let total: f64 = self.population.iter().map(|p| p.fraction).sum();
        if (total - 1.0).abs() > 1e-9 || self.population.iter().any(|p| p.fraction < 0.0) {
            return bad("population fractions must be non-negative and sum to 1");
        }
        for p in &self.population {
            if let WorkerKind::Calibrated { accuracy, .. } = p.worker {
                if !unit(accuracy) {
                    return bad("worker accuracy must lie in [0, 1]");
                }
            }
        }
        if self.workers < 5 {
            return bad("at least 5 workers are needed to fill four adjudication rounds");
        }
        if self.max_subset == 0 {
            return bad("max_subset must be positive");
        }
        if self.control_pool_size == 0 {
            return bad("control_pool_size must be positive");
        }
        if let LabelSource::Synthetic { labels: 0 } = self.labels {
            return bad("synthetic label count must be positive");
        }
        Ok(())
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            seed: self.seed,
            gate: self.gate.clone(),
            price_cents: self.price_cents,
            ..OrchestratorConfig::default()
        }
    }

    /// Worker kinds in population order, apportioned by largest remainder.
    pub fn worker_kinds(&self) -> Vec<WorkerKind> {
        let raw: Vec<f64> = self.population.iter().map(|p| p.fraction * self.workers as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.workers - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        self.population
            .iter()
            .zip(counts)
            .flat_map(|(p, n)| std::iter::repeat_n(p.worker, n))
            .collect()
    }
}

/// A generated campaign: plan, sentences with their truth, controls and
/// qualification tests.
#[derive(Debug, Clone)]
pub struct SyntheticCampaign {
    pub plan: AnnotationPlan,
    pub dataset: Dataset,
    pub truth: BTreeMap<String, Truth>,
    pub controls: ControlPool,
    pub tests: BTreeMap<ClusterName, QualificationTest>,
}

impl SyntheticCampaign {
    pub fn campaign(&self) -> Campaign {
        Campaign {
            plan: self.plan.clone(),
            controls: self.controls.clone(),
            tests: self.tests.clone(),
        }
    }

    /// Clusters with at least one sentence.
    pub fn active_clusters(&self) -> BTreeSet<ClusterName> {
        self.dataset
            .instances
            .iter()
            .filter_map(|i| self.plan.cluster_for(&i.type_pair()).map(|c| c.name.clone()))
            .collect()
    }
}

/// A sentence whose tokens are unique to `serial`.
pub fn synthetic_instance(id: &str, serial: usize, pair: TypePair) -> Instance {
    Instance {
        id: id.to_string(),
        tokens: vec![
            format!("Subject{serial}"),
            "was".into(),
            "seen".into(),
            "with".into(),
            format!("Object{serial}"),
            ".".into(),
        ],
        subj_span: Span::new(0, 1),
        obj_span: Span::new(4, 5),
        subj_type: pair.subject,
        obj_type: pair.object,
        label: None,
        split: Split::Train,
    }
}

fn synthetic_plan(n: usize, max_subset: usize) -> AnnotationPlan {
    let positives: BTreeSet<Label> = (0..n).map(|i| Label::new(&format!("SYN:R{i:02}"))).collect();
    let pairs = BTreeSet::from([TypePair::new(EntityType::Person, EntityType::Person)]);
    let definitions = positives
        .iter()
        .cloned()
        .chain(std::iter::once(Label::no_relation()))
        .map(|l| {
            let info = RelationInfo {
                definition: format!("Synthetic relation {l}."),
                guideline: None,
            };
            (l, info)
        })
        .collect();
    let cluster = SuperCluster::new(ClusterName::new("synthetic"), pairs, positives, max_subset);
    AnnotationPlan::from_clusters(vec![cluster], definitions)
}

pub fn generate(config: &SimulationConfig) -> Result<SyntheticCampaign, SimulationError> {
    config.validate()?;
    let tax = Taxonomy::canonical();
    let plan = match &config.labels {
        LabelSource::Synthetic { labels } => synthetic_plan(*labels, config.max_subset),
        _ => AnnotationPlan::from_taxonomy(&tax, config.max_subset),
    };
    let pairs: Vec<TypePair> = match &config.labels {
        LabelSource::Canonical => tax.type_pairs().copied().collect(),
        LabelSource::Cluster { name } => {
            let c = plan
                .cluster(&ClusterName::new(name.as_str()))
                .ok_or_else(|| SimulationError::Config(format!("unknown cluster {name}")))?;
            c.member_pairs.iter().copied().collect()
        }
        LabelSource::Synthetic { .. } => plan.cluster_of.keys().copied().collect(),
    };
    let candidates = |pair: &TypePair| -> Vec<Label> {
        match &config.labels {
            LabelSource::Synthetic { .. } => plan.cluster_for(pair).expect("routed").positives.iter().cloned().collect(),
            _ => tax.candidates(pair).expect("canonical pair").iter().cloned().collect(),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::with_capacity(config.sentences);
    let mut truth = BTreeMap::new();
    for n in 0..config.sentences {
        let pair = *pairs.choose(&mut rng).expect("at least one pair");
        let id = format!("s{n:05}");
        let x: f64 = rng.random();
        let t = if x < config.wrong_type_fraction {
            Truth::WrongType
        } else if x < config.wrong_type_fraction + config.no_relation_fraction {
            Truth::Label(Label::no_relation())
        } else {
            Truth::Label(candidates(&pair).choose(&mut rng).expect("non-empty candidates").clone())
        };
        instances.push(synthetic_instance(&id, n, pair));
        truth.insert(id, t);
    }
    let dataset = Dataset::new(instances).map_err(|e| SimulationError::Config(e.to_string()))?;

    let mut controls = ControlPool::default();
    let mut tests = BTreeMap::new();
    let mut serial = config.sentences;
    for cluster in plan.clusters.values() {
        let member_pairs: Vec<TypePair> = cluster.member_pairs.iter().copied().collect();
        let mut labels: Vec<Label> = cluster.positives.iter().cloned().collect();
        labels.push(Label::no_relation());
        for k in 0..config.control_pool_size {
            serial += 1;
            let pair = *member_pairs.choose(&mut rng).expect("member pair");
            let label = labels[k % labels.len()].clone();
            controls.insert(
                cluster.name.clone(),
                ControlItem {
                    instance: synthetic_instance(&format!("ctl-{}-{k:04}", cluster.name), serial, pair),
                    label,
                },
            );
        }
        let items = (0..5)
            .map(|k| {
                serial += 1;
                let pair = member_pairs[k % member_pairs.len()];
                let inst = synthetic_instance(&format!("qual-{}-{k}", cluster.name), serial, pair);
                (inst, labels[k % labels.len()].clone())
            })
            .collect();
        let test = QualificationTest::build(cluster, &plan, items)
            .map_err(|e| SimulationError::Config(e.to_string()))?;
        tests.insert(cluster.name.clone(), test);
    }
    Ok(SyntheticCampaign {
        plan,
        dataset,
        truth,
        controls,
        tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionRecord {
    pub worker: String,
    pub spammer: bool,
    pub cluster: ClusterName,
    pub controls_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub sentences: usize,
    /// Correct final outcomes over all sentences: the true label assigned,
    /// or a wrong-type sentence excluded as such.
    pub accuracy: f64,
    pub assigned: usize,
    pub excluded_wrong_type: usize,
    pub excluded_unresolvable: usize,
    pub stuck: usize,
    pub wrong_type_truth: usize,
    pub wrong_type_caught: usize,
    pub kappa: Option<f64>,
    pub agreement_rate: f64,
    pub hits_issued: u64,
    pub cost_cents: u64,
    pub spammers: usize,
    pub spammers_suspended: usize,
    pub suspensions: Vec<SuspensionRecord>,
    /// Sentences by number of stages they were presented at.
    pub stages_used: BTreeMap<usize, usize>,
    pub max_stages_used: usize,
}

impl SimulationReport {
    pub fn to_table(&self) -> String {
        let kappa = self.kappa.map_or_else(|| "undefined".to_string(), |k| format!("{k:.4}"));
        let mut rows = vec![
            ("seed", self.seed.to_string()),
            ("sentences", self.sentences.to_string()),
            ("accuracy", format!("{:.4}", self.accuracy)),
            ("assigned", self.assigned.to_string()),
            ("excluded (wrong type)", self.excluded_wrong_type.to_string()),
            ("excluded (unresolvable)", self.excluded_unresolvable.to_string()),
            ("stuck", self.stuck.to_string()),
            ("wrong-type truth / caught", format!("{} / {}", self.wrong_type_truth, self.wrong_type_caught)),
            ("kappa", kappa),
            ("agreement rate", format!("{:.4}", self.agreement_rate)),
            ("HITs issued", self.hits_issued.to_string()),
            ("cost", format!("${}.{:02}", self.cost_cents / 100, self.cost_cents % 100)),
            ("spammers suspended", format!("{} / {}", self.spammers_suspended, self.spammers)),
            ("suspensions", self.suspensions.len().to_string()),
            ("max stages used", self.max_stages_used.to_string()),
        ];
        for (k, v) in &self.stages_used {
            rows.push(("", format!("{v} sentences over {k} stage(s)")));
        }
        rows.iter().map(|(k, v)| format!("{k:<26} {v}\n")).collect()
    }
}

pub struct SimulationOutcome {
    pub report: SimulationReport,
    pub log: Vec<Event>,
    pub state: State,
    pub truth: BTreeMap<String, Truth>,
}

/// Generates a campaign and runs it to completion.
pub fn run(config: &SimulationConfig) -> Result<SimulationOutcome, SimulationError> {
    let synthetic = generate(config)?;
    run_campaign(config, &synthetic)
}

pub fn run_campaign(config: &SimulationConfig, synthetic: &SyntheticCampaign) -> Result<SimulationOutcome, SimulationError> {
    config.validate()?;
    let mut orch = Orchestrator::new(synthetic.campaign(), config.orchestrator_config());
    orch.enqueue(synthetic.dataset.instances.iter().cloned())?;

    let clusters = synthetic.active_clusters();
    let mut workers: Vec<Worker> = config
        .worker_kinds()
        .into_iter()
        .enumerate()
        .map(|(i, kind)| Worker::new(format!("w{i:03}"), kind, config.seed, 1 + i as u64))
        .collect();
    for w in &workers {
        orch.register(&w.id, 1000, 0.99)?;
        // Spammers answer carefully while on trial, so everyone passes.
        for c in &clusters {
            orch.grant_qualification(&w.id, c, Qualification::Passed)?;
        }
    }

    let control_truth: BTreeMap<(ClusterName, String), Label> = synthetic
        .controls
        .entries
        .iter()
        .flat_map(|(c, items)| items.iter().map(move |i| ((c.clone(), i.instance.id.clone()), i.label.clone())))
        .collect();
    let mut suspensions = Vec::new();
    loop {
        let mut progressed = false;
        for w in workers.iter_mut() {
            let hit = match orch.request_hit(&w.id, None) {
                Ok(Some(h)) => h,
                Ok(None) | Err(OrchestratorError::Suspended { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let cluster = orch.plan().cluster(&hit.cluster).expect("known cluster").clone();
            let choices = cluster.stage_choices(hit.stage);
            let answers: Vec<Label> = hit
                .slots
                .iter()
                .map(|slot| {
                    let expected = match slot {
                        Slot::Sentence(id) => expected_answer(&cluster, hit.stage, &synthetic.truth[id]),
                        Slot::Control(id) => {
                            cluster.expected_answer(hit.stage, &control_truth[&(cluster.name.clone(), id.clone())])
                        }
                    };
                    w.answer(&choices, &expected)
                })
                .collect();
            let outcome = orch.submit(&hit.id, &w.id, &answers, None)?;
            if outcome.suspended {
                suspensions.push(SuspensionRecord {
                    worker: w.id.clone(),
                    spammer: w.kind.is_spammer(),
                    cluster: hit.cluster.clone(),
                    controls_seen: orch.state().annotators[&w.id].stats(&hit.cluster).seen,
                });
            }
            progressed = true;
        }
        if !progressed {
            break;
        }
    }

    let report = build_report(config, &orch, synthetic, &workers, suspensions);
    Ok(SimulationOutcome {
        report,
        log: orch.log().to_vec(),
        state: orch.state().clone(),
        truth: synthetic.truth.clone(),
    })
}

fn build_report(
    config: &SimulationConfig,
    orch: &Orchestrator,
    synthetic: &SyntheticCampaign,
    workers: &[Worker],
    suspensions: Vec<SuspensionRecord>,
) -> SimulationReport {
    let state = orch.state();
    let (mut correct, mut assigned, mut ex_wt, mut ex_un, mut stuck, mut wt_truth, mut wt_caught) = (0, 0, 0, 0, 0, 0, 0);
    let mut stages_used: BTreeMap<usize, usize> = BTreeMap::new();
    for s in state.sentences.values() {
        let truth = &synthetic.truth[s.id()];
        *stages_used.entry(s.stages_used()).or_default() += 1;
        let is_wt = *truth == Truth::WrongType;
        wt_truth += usize::from(is_wt);
        match &s.resolution {
            Resolution::Resolved(l) => {
                assigned += 1;
                correct += usize::from(*truth == Truth::Label(l.clone()));
            }
            Resolution::WrongTypeExhausted => {
                ex_wt += 1;
                correct += usize::from(is_wt);
                wt_caught += usize::from(is_wt);
            }
            Resolution::Unresolvable => ex_un += 1,
            Resolution::Unresolved => stuck += 1,
        }
    }
    let agreement = agreement_report(state, RaterSelection::FirstTwo);
    let spammer_ids: BTreeSet<&str> = workers.iter().filter(|w| w.kind.is_spammer()).map(|w| w.id.as_str()).collect();
    let spammers_suspended = state
        .annotators
        .values()
        .filter(|p| spammer_ids.contains(p.id.as_str()) && p.status.values().any(|s| *s == crate::quality::Status::Suspended))
        .count();
    let n = state.sentences.len();
    SimulationReport {
        seed: config.seed,
        sentences: n,
        accuracy: if n == 0 { 1.0 } else { correct as f64 / n as f64 },
        assigned,
        excluded_wrong_type: ex_wt,
        excluded_unresolvable: ex_un,
        stuck,
        wrong_type_truth: wt_truth,
        wrong_type_caught: wt_caught,
        kappa: agreement.kappa,
        agreement_rate: agreement.agreement_rate,
        hits_issued: state.hits_issued,
        cost_cents: orch.cost_cents(),
        spammers: spammer_ids.len(),
        spammers_suspended,
        suspensions,
        max_stages_used: stages_used.keys().copied().max().unwrap_or(0),
        stages_used,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub sentences: usize,
    pub wrong_type_fraction: f64,
    pub seed: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            sentences: 20_000,
            wrong_type_fraction: 0.05,
            seed: 0,
        }
    }
}

/// Task counts at candidate-set granularity: a sentence costs one task per
/// candidate set it is annotated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub sentences: usize,
    pub wrong_typed: usize,
    /// Tasks when nothing falls back: one per sentence.
    pub baseline_tasks: u64,
    pub naive_worst_case_per_sentence: u64,
    pub clustered_worst_case_per_sentence: u64,
    pub worst_case_ratio: f64,
    pub naive_worst_case_tasks: u64,
    pub clustered_worst_case_tasks: u64,
    /// Relative increase over the baseline when every realized wrong-typed
    /// sentence is tried against all other candidate sets.
    pub naive_worst_case_overhead: f64,
    pub clustered_worst_case_overhead: f64,
    /// Fallback in random order that stops at the true candidate set, for
    /// comparison only.
    pub naive_early_stop_tasks: u64,
    pub clustered_early_stop_tasks: u64,
}

/// Position (1-based) of `target` in a random ordering of `n` items.
fn random_position<R: Rng>(rng: &mut R, n: u64) -> u64 {
    rng.random_range(1..=n)
}

pub fn naive_vs_clustered_cost(tax: &Taxonomy, config: &CostConfig) -> CostComparison {
    let plan = AnnotationPlan::from_taxonomy(tax, DEFAULT_MAX_SUBSET);
    let pairs: Vec<TypePair> = tax.type_pairs().copied().collect();
    let n_pairs = pairs.len() as u64;
    let n_clusters = plan.clusters.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut wrong, mut naive_early, mut clustered_early) = (0u64, 0u64, 0u64);
    for _ in 0..config.sentences {
        naive_early += 1;
        clustered_early += 1;
        if !rng.random_bool(config.wrong_type_fraction.clamp(0.0, 1.0)) {
            continue;
        }
        wrong += 1;
        let shown = pairs.choose(&mut rng).expect("pairs");
        let actual = loop {
            let p = pairs.choose(&mut rng).expect("pairs");
            if p != shown {
                break p;
            }
        };
        naive_early += random_position(&mut rng, n_pairs - 1);
        if plan.cluster_of[shown] != plan.cluster_of[actual] {
            clustered_early += random_position(&mut rng, n_clusters - 1);
        }
    }
    let n = config.sentences as u64;
    let naive_worst = n + wrong * (n_pairs - 1);
    let clustered_worst = n + wrong * (n_clusters - 1);
    let overhead = |total: u64| if n == 0 { 0.0 } else { total as f64 / n as f64 - 1.0 };
    CostComparison {
        sentences: config.sentences,
        wrong_typed: wrong as usize,
        baseline_tasks: n,
        naive_worst_case_per_sentence: n_pairs,
        clustered_worst_case_per_sentence: n_clusters,
        worst_case_ratio: n_pairs as f64 / n_clusters as f64,
        naive_worst_case_tasks: naive_worst,
        clustered_worst_case_tasks: clustered_worst,
        naive_worst_case_overhead: overhead(naive_worst),
        clustered_worst_case_overhead: overhead(clustered_worst),
        naive_early_stop_tasks: naive_early,
        clustered_early_stop_tasks: clustered_early,
    }
}
