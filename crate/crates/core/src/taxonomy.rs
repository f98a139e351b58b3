//! Relation label system: refinement mapping, type-compatible candidate sets,
//! super-clusters and their bounded-size stage partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{EntityType, Label, TypePair};
use crate::scalar::Scalar;

/// Number of original labels, including the negative label.
pub const ORIGINAL_LABEL_COUNT: usize = 42;
/// Number of refined labels, including the negative label.
pub const REFINED_LABEL_COUNT: usize = 40;
pub const TYPE_PAIR_COUNT: usize = 27;
pub const DEFAULT_MAX_SUBSET: usize = 9;

const CANONICAL_TOML: &str = include_str!("../data/taxonomy.toml");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterName(pub String);

impl ClusterName {
    pub fn new(s: impl Into<String>) -> Self {
        ClusterName(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClusterName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy file: {0}")]
    Parse(String),
    #[error("taxonomy invariant violated: {0}")]
    Invariant(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown type pair {0}")]
    UnknownPair(TypePair),
}

/// Annotator-facing text for one relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInfo {
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<String>,
}

#[derive(Debug, Deserialize)]
struct TaxonomyFile {
    version: String,
    negative_label: String,
    original_labels: Vec<String>,
    #[serde(default)]
    refinement: BTreeMap<String, String>,
    relation: Vec<RelationEntry>,
    pair: Vec<PairEntry>,
}

#[derive(Debug, Deserialize)]
struct RelationEntry {
    name: String,
    definition: String,
    guideline: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PairEntry {
    subject: String,
    object: String,
    cluster: String,
    candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    pub version: String,
    negative: Label,
    original: BTreeSet<Label>,
    /// Total over original labels.
    refinement: BTreeMap<Label, Label>,
    relations: BTreeMap<Label, RelationInfo>,
    candidates: BTreeMap<TypePair, BTreeSet<Label>>,
    cluster_of: BTreeMap<TypePair, ClusterName>,
}

impl Taxonomy {
    /// The shipped configuration.
    pub fn canonical() -> Self {
        Taxonomy::from_toml_str(CANONICAL_TOML).expect("shipped taxonomy is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Parse(format!("{}: {e}", path.display())))?;
        Taxonomy::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        let negative = Label::new(&file.negative_label);
        let original: BTreeSet<Label> = file.original_labels.iter().map(|s| Label::new(s)).collect();
        let overrides: BTreeMap<Label, Label> = file
            .refinement
            .iter()
            .map(|(k, v)| (Label::new(k), Label::new(v)))
            .collect();
        for k in overrides.keys() {
            if !original.contains(k) {
                return Err(TaxonomyError::Invariant(format!("refinement source {k} is not an original label")));
            }
        }
        let refinement = original
            .iter()
            .map(|l| (l.clone(), overrides.get(l).cloned().unwrap_or_else(|| l.clone())))
            .collect();
        let relations = file
            .relation
            .into_iter()
            .map(|r| {
                (
                    Label::new(&r.name),
                    RelationInfo {
                        definition: r.definition,
                        guideline: r.guideline,
                    },
                )
            })
            .collect();
        let mut candidates = BTreeMap::new();
        let mut cluster_of = BTreeMap::new();
        for p in file.pair {
            let subject: EntityType = p.subject.parse().map_err(|e| TaxonomyError::Parse(format!("{e}")))?;
            let object: EntityType = p.object.parse().map_err(|e| TaxonomyError::Parse(format!("{e}")))?;
            let pair = TypePair::new(subject, object);
            let set: BTreeSet<Label> = p.candidates.iter().map(|s| Label::new(s)).collect();
            if candidates.insert(pair, set).is_some() {
                return Err(TaxonomyError::Invariant(format!("type pair {pair} listed twice")));
            }
            cluster_of.insert(pair, ClusterName::new(p.cluster));
        }
        let tax = Taxonomy {
            version: file.version,
            negative,
            original,
            refinement,
            relations,
            candidates,
            cluster_of,
        };
        let violations = tax.violations();
        if violations.is_empty() {
            Ok(tax)
        } else {
            Err(TaxonomyError::Invariant(violations.join("; ")))
        }
    }

    /// Every structural invariant that does not hold, as readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.negative.is_no_relation() {
            out.push(format!("negative label must be NO_RELATION, found {}", self.negative));
        }
        let negatives = self.original.iter().filter(|l| l.is_no_relation()).count();
        if negatives != 1 {
            out.push(format!("original labels contain {negatives} NO_RELATION entries"));
        }
        if self.original.iter().any(Label::is_wrong_type) || self.relations.keys().any(Label::is_wrong_type) {
            out.push("WRONG_TYPE must not be a taxonomy label".into());
        }
        if self.original.len() != ORIGINAL_LABEL_COUNT {
            out.push(format!("expected {ORIGINAL_LABEL_COUNT} original labels, found {}", self.original.len()));
        }
        if self.relations.len() != REFINED_LABEL_COUNT {
            out.push(format!("expected {REFINED_LABEL_COUNT} refined labels, found {}", self.relations.len()));
        }
        if !self.relations.contains_key(&self.negative) {
            out.push("refined labels lack NO_RELATION".into());
        }
        if self.refinement.get(&self.negative) != Some(&self.negative) {
            out.push("NO_RELATION must refine to itself".into());
        }
        let targets: BTreeSet<&Label> = self.refinement.values().collect();
        for t in &targets {
            if !self.relations.contains_key(*t) {
                out.push(format!("refinement target {t} is not a refined label"));
            }
        }
        for r in self.relations.keys() {
            if !targets.contains(r) {
                out.push(format!("refined label {r} has no original source"));
            }
        }
        if self.candidates.len() != TYPE_PAIR_COUNT {
            out.push(format!("expected {TYPE_PAIR_COUNT} type pairs, found {}", self.candidates.len()));
        }
        for (pair, set) in &self.candidates {
            if !pair.subject.is_subject_type() {
                out.push(format!("type pair {pair} has a non-subject subject type"));
            }
            if set.is_empty() {
                out.push(format!("type pair {pair} has no candidates"));
            }
            for l in set {
                if !l.is_positive() || !self.relations.contains_key(l) {
                    out.push(format!("candidate {l} of {pair} is not a positive refined label"));
                }
            }
        }
        out
    }

    pub fn negative_label(&self) -> &Label {
        &self.negative
    }

    pub fn original_labels(&self) -> &BTreeSet<Label> {
        &self.original
    }

    pub fn refined_labels(&self) -> impl Iterator<Item = &Label> {
        self.relations.keys()
    }

    pub fn refined_positive_labels(&self) -> BTreeSet<Label> {
        self.relations.keys().filter(|l| l.is_positive()).cloned().collect()
    }

    pub fn relation_info(&self, label: &Label) -> Option<&RelationInfo> {
        self.relations.get(label)
    }

    pub fn definitions(&self) -> &BTreeMap<Label, RelationInfo> {
        &self.relations
    }

    pub fn is_known(&self, label: &Label) -> bool {
        self.original.contains(label) || self.relations.contains_key(label)
    }

    pub fn is_refined(&self, label: &Label) -> bool {
        self.relations.contains_key(label)
    }

    /// Maps an original label to its refined name.
    pub fn refine_label(&self, label: &Label) -> Result<Label, TaxonomyError> {
        self.refinement
            .get(label)
            .cloned()
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))
    }

    /// Like [`refine_label`](Self::refine_label) but passes refined labels through.
    pub fn to_refined(&self, label: &Label) -> Result<Label, TaxonomyError> {
        match self.refinement.get(label) {
            Some(l) => Ok(l.clone()),
            None if self.relations.contains_key(label) => Ok(label.clone()),
            None => Err(TaxonomyError::UnknownLabel(label.to_string())),
        }
    }

    /// Original labels that refine to `refined`.
    pub fn sources_of(&self, refined: &Label) -> BTreeSet<Label> {
        self.refinement
            .iter()
            .filter(|(_, to)| *to == refined)
            .map(|(from, _)| from.clone())
            .collect()
    }

    pub fn type_pairs(&self) -> impl Iterator<Item = &TypePair> {
        self.candidates.keys()
    }

    pub fn candidates(&self, pair: &TypePair) -> Result<&BTreeSet<Label>, TaxonomyError> {
        self.candidates.get(pair).ok_or(TaxonomyError::UnknownPair(*pair))
    }

    pub fn super_cluster_of(&self, pair: &TypePair) -> Result<&ClusterName, TaxonomyError> {
        self.cluster_of.get(pair).ok_or(TaxonomyError::UnknownPair(*pair))
    }

    /// Pairs whose candidate set contains `label` (refined name).
    pub fn pairs_for(&self, label: &Label) -> BTreeSet<TypePair> {
        self.candidates
            .iter()
            .filter(|(_, set)| set.contains(label))
            .map(|(p, _)| *p)
            .collect()
    }

    /// Replaces the cluster assignment, e.g. for alternative cost configurations.
    pub fn with_cluster_assignment(&self, assign: impl Fn(&TypePair) -> ClusterName) -> Taxonomy {
        let mut t = self.clone();
        t.cluster_of = t.candidates.keys().map(|p| (*p, assign(p))).collect();
        t
    }

    /// Builds the super-clusters: member pairs, merged candidate set, stage subsets.
    pub fn super_clusters(&self, max_size: usize) -> Vec<SuperCluster> {
        let mut members: BTreeMap<&ClusterName, BTreeSet<TypePair>> = BTreeMap::new();
        for (pair, name) in &self.cluster_of {
            members.entry(name).or_default().insert(*pair);
        }
        members
            .into_iter()
            .map(|(name, pairs)| {
                let positives: BTreeSet<Label> = pairs
                    .iter()
                    .flat_map(|p| self.candidates[p].iter().cloned())
                    .collect();
                SuperCluster::new(name.clone(), pairs, positives, max_size)
            })
            .collect()
    }
}

/// A named union of sentence groups sharing one merged candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperCluster {
    pub name: ClusterName,
    pub member_pairs: BTreeSet<TypePair>,
    /// Union of the member pairs' candidate sets (positive labels only).
    pub positives: BTreeSet<Label>,
    /// Ordered partition of `positives`, one entry per annotation stage.
    pub subsets: Vec<Vec<Label>>,
}

impl SuperCluster {
    pub fn new(name: ClusterName, member_pairs: BTreeSet<TypePair>, positives: BTreeSet<Label>, max_size: usize) -> Self {
        let subsets = partition_label_set(&positives, max_size);
        SuperCluster {
            name,
            member_pairs,
            positives,
            subsets,
        }
    }

    pub fn stage_count(&self) -> usize {
        self.subsets.len().max(1)
    }

    /// Merged set offered across all stages: positives plus the two specials.
    pub fn merged_set(&self) -> BTreeSet<Label> {
        let mut s = self.positives.clone();
        s.insert(Label::no_relation());
        s.insert(Label::wrong_type());
        s
    }

    /// Choices offered at `stage`: the stage subset, then NO_RELATION and WRONG_TYPE.
    pub fn stage_choices(&self, stage: usize) -> Vec<Label> {
        let mut v: Vec<Label> = self.subsets.get(stage).cloned().unwrap_or_default();
        v.push(Label::no_relation());
        v.push(Label::wrong_type());
        v
    }

    pub fn stage_of(&self, label: &Label) -> Option<usize> {
        self.subsets.iter().position(|s| s.contains(label))
    }

    /// The correct answer at `stage` for a sentence whose true label is `truth`.
    /// Labels outside the stage subset can only be answered with WRONG_TYPE.
    pub fn expected_answer(&self, stage: usize, truth: &Label) -> Label {
        if !truth.is_positive() || self.subsets.get(stage).is_some_and(|s| s.contains(truth)) {
            truth.clone()
        } else {
            Label::wrong_type()
        }
    }
}

/// Greedy fill in canonical (alphabetical) order: `ceil(n / max_size)` subsets,
/// all full except possibly the last.
pub fn partition_label_set(labels: &BTreeSet<Label>, max_size: usize) -> Vec<Vec<Label>> {
    debug_assert!(max_size >= 1, "max_size must be at least 1");
    let k = max_size.max(1);
    let ordered: Vec<Label> = labels.iter().cloned().collect();
    ordered.chunks(k).map(<[Label]>::to_vec).collect()
}

/// Worst-case task counts for a wrong-typed sentence under naive per-pair
/// enumeration versus super-cluster enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub naive_worst_case_tasks: usize,
    pub clustered_worst_case_tasks: usize,
    pub reduction_factor: f64,
    pub per_cluster_stage_counts: BTreeMap<ClusterName, usize>,
}

impl CostReport {
    pub fn exact_reduction_factor<T: Scalar>(&self) -> T {
        T::ratio(self.naive_worst_case_tasks as u64, self.clustered_worst_case_tasks as u64)
    }
}

pub fn cost_report(clusters: &[SuperCluster]) -> CostReport {
    let naive = clusters.iter().map(|c| c.member_pairs.len()).sum::<usize>();
    let clustered = clusters.len();
    CostReport {
        naive_worst_case_tasks: naive,
        clustered_worst_case_tasks: clustered,
        reduction_factor: if clustered == 0 { 0.0 } else { naive as f64 / clustered as f64 },
        per_cluster_stage_counts: clusters.iter().map(|c| (c.name.clone(), c.stage_count())).collect(),
    }
}

/// What the orchestrator needs from a taxonomy: clusters, pair routing and
/// display text. Can also be assembled from synthetic clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPlan {
    pub clusters: BTreeMap<ClusterName, SuperCluster>,
    pub cluster_of: BTreeMap<TypePair, ClusterName>,
    pub definitions: BTreeMap<Label, RelationInfo>,
}

impl AnnotationPlan {
    pub fn from_taxonomy(tax: &Taxonomy, max_size: usize) -> Self {
        AnnotationPlan::from_clusters(tax.super_clusters(max_size), tax.definitions().clone())
    }

    pub fn from_clusters(clusters: Vec<SuperCluster>, definitions: BTreeMap<Label, RelationInfo>) -> Self {
        let cluster_of = clusters
            .iter()
            .flat_map(|c| c.member_pairs.iter().map(move |p| (*p, c.name.clone())))
            .collect();
        AnnotationPlan {
            clusters: clusters.into_iter().map(|c| (c.name.clone(), c)).collect(),
            cluster_of,
            definitions,
        }
    }

    pub fn cluster(&self, name: &ClusterName) -> Option<&SuperCluster> {
        self.clusters.get(name)
    }

    pub fn cluster_for(&self, pair: &TypePair) -> Option<&SuperCluster> {
        self.cluster_of.get(pair).and_then(|n| self.clusters.get(n))
    }

    pub fn definition(&self, label: &Label) -> Option<&RelationInfo> {
        self.definitions.get(label)
    }
}
