//! Annotator quality gating: trial prerequisites, per-cluster qualification
//! tests and the rolling control-accuracy filter.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{parse_records, DatasetError, Instance, Label};
use crate::taxonomy::{AnnotationPlan, ClusterName, RelationInfo, SuperCluster};

/// Control pools smaller than this trigger a configuration warning.
pub const CONTROL_POOL_WARN_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub min_approved: u64,
    pub min_approval_rate: f64,
    /// Control accuracy at or above this passes; below suspends.
    pub accuracy_threshold: f64,
    /// Controls seen before a suspension can trigger.
    pub min_sample: u64,
    /// When false, control accuracy is tracked but never suspends anyone.
    pub enabled: bool,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            min_approved: 500,
            min_approval_rate: 0.95,
            accuracy_threshold: 0.80,
            min_sample: 5,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualification {
    Untested,
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Suspended,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlStats {
    pub correct: u64,
    pub seen: u64,
}

impl ControlStats {
    pub fn accuracy(&self) -> Option<f64> {
        (self.seen > 0).then(|| self.correct as f64 / self.seen as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    pub approved_count: u64,
    /// Approved / completed annotations on the crowd platform.
    pub approval_rate: f64,
    pub qualifications: BTreeMap<ClusterName, Qualification>,
    pub control_stats: BTreeMap<ClusterName, ControlStats>,
    pub status: BTreeMap<ClusterName, Status>,
}

impl AnnotatorProfile {
    pub fn new(id: impl Into<String>, approved_count: u64, approval_rate: f64) -> Self {
        AnnotatorProfile {
            id: id.into(),
            approved_count,
            approval_rate,
            qualifications: BTreeMap::new(),
            control_stats: BTreeMap::new(),
            status: BTreeMap::new(),
        }
    }

    pub fn qualification(&self, cluster: &ClusterName) -> Qualification {
        self.qualifications.get(cluster).copied().unwrap_or(Qualification::Untested)
    }

    pub fn is_qualified(&self, cluster: &ClusterName) -> bool {
        self.qualification(cluster) == Qualification::Passed
    }

    pub fn status(&self, cluster: &ClusterName) -> Status {
        self.status.get(cluster).copied().unwrap_or(Status::Active)
    }

    pub fn is_suspended(&self, cluster: &ClusterName) -> bool {
        self.status(cluster) == Status::Suspended
    }

    /// Qualified and not suspended.
    pub fn can_annotate(&self, cluster: &ClusterName) -> bool {
        self.is_qualified(cluster) && !self.is_suspended(cluster)
    }

    pub fn stats(&self, cluster: &ClusterName) -> ControlStats {
        self.control_stats.get(cluster).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("annotator `{annotator}` is not qualified for cluster {cluster}")]
    NotQualified { annotator: String, cluster: ClusterName },
    #[error("qualification test for {0} has no questions")]
    EmptyTest(ClusterName),
    #[error("qualification test for {cluster} lacks a definition for {label}")]
    MissingDefinition { cluster: ClusterName, label: Label },
    #[error("submission answers {answered} of {total} questions")]
    Incomplete { answered: usize, total: usize },
    #[error("control `{id}` in {cluster} has label {label} outside the cluster's choices")]
    ControlLabel { cluster: ClusterName, id: String, label: Label },
    #[error("{0}")]
    File(String),
}

/// Trial prerequisites; both bounds inclusive.
pub fn check_prerequisites(p: &AnnotatorProfile, params: &GateParams) -> bool {
    p.approved_count >= params.min_approved && p.approval_rate >= params.min_approval_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationQuestion {
    pub instance: Instance,
    pub choices: Vec<Label>,
    pub correct: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationTest {
    pub cluster: ClusterName,
    /// Definitions of every candidate relation in the cluster, shown first.
    pub definitions: Vec<(Label, RelationInfo)>,
    pub questions: Vec<QualificationQuestion>,
}

pub const WRONG_TYPE_DEFINITION: &str = "The subject or object type is wrong, so none of the offered relations can apply.";

impl QualificationTest {
    /// Assembles a test for `cluster` from labelled instances, attaching the
    /// definition of every merged-set label.
    pub fn build(
        cluster: &SuperCluster,
        plan: &AnnotationPlan,
        items: Vec<(Instance, Label)>,
    ) -> Result<Self, QualityError> {
        let choices: Vec<Label> = cluster.merged_set().into_iter().collect();
        let mut definitions = Vec::new();
        for label in cluster.positives.iter().chain(std::iter::once(&Label::no_relation())) {
            let info = plan.definition(label).cloned().ok_or_else(|| QualityError::MissingDefinition {
                cluster: cluster.name.clone(),
                label: label.clone(),
            })?;
            definitions.push((label.clone(), info));
        }
        definitions.push((
            Label::wrong_type(),
            RelationInfo {
                definition: WRONG_TYPE_DEFINITION.into(),
                guideline: None,
            },
        ));
        let questions = items
            .into_iter()
            .map(|(instance, correct)| QualificationQuestion {
                instance,
                choices: choices.clone(),
                correct,
            })
            .collect();
        let test = QualificationTest {
            cluster: cluster.name.clone(),
            definitions,
            questions,
        };
        test.validate(cluster)?;
        Ok(test)
    }

    pub fn validate(&self, cluster: &SuperCluster) -> Result<(), QualityError> {
        if self.questions.is_empty() {
            return Err(QualityError::EmptyTest(self.cluster.clone()));
        }
        for label in &cluster.positives {
            if !self.definitions.iter().any(|(l, _)| l == label) {
                return Err(QualityError::MissingDefinition {
                    cluster: self.cluster.clone(),
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Perfect score required: passes iff every answer is correct.
pub fn grade_qualification(test: &QualificationTest, answers: &[Label]) -> Result<Qualification, QualityError> {
    if test.questions.is_empty() {
        return Err(QualityError::EmptyTest(test.cluster.clone()));
    }
    if answers.len() != test.questions.len() {
        return Err(QualityError::Incomplete {
            answered: answers.len(),
            total: test.questions.len(),
        });
    }
    let all_correct = test.questions.iter().zip(answers).all(|(q, a)| &q.correct == a);
    Ok(if all_correct { Qualification::Passed } else { Qualification::Failed })
}

/// Whether the stats put the annotator below the gate.
pub fn below_gate(stats: &ControlStats, params: &GateParams) -> bool {
    stats.seen >= params.min_sample && (stats.correct as f64 / stats.seen as f64) < params.accuracy_threshold
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suspension {
    pub annotator: String,
    pub cluster: ClusterName,
    pub stats: ControlStats,
}

/// Records one control outcome for `cluster`, suspending the annotator there
/// when the gate trips. Other clusters are untouched.
pub fn record_control(
    p: &mut AnnotatorProfile,
    cluster: &ClusterName,
    correct: bool,
    params: &GateParams,
) -> Result<Option<Suspension>, QualityError> {
    if !p.is_qualified(cluster) {
        return Err(QualityError::NotQualified {
            annotator: p.id.clone(),
            cluster: cluster.clone(),
        });
    }
    let stats = p.control_stats.entry(cluster.clone()).or_default();
    stats.seen += 1;
    if correct {
        stats.correct += 1;
    }
    let stats = *stats;
    if params.enabled && !p.is_suspended(cluster) && below_gate(&stats, params) {
        p.status.insert(cluster.clone(), Status::Suspended);
        return Ok(Some(Suspension {
            annotator: p.id.clone(),
            cluster: cluster.clone(),
            stats,
        }));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlItem {
    pub instance: Instance,
    pub label: Label,
}

/// Known-answer sentences per cluster.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPool {
    pub entries: BTreeMap<ClusterName, Vec<ControlItem>>,
}

impl ControlPool {
    pub fn for_cluster(&self, cluster: &ClusterName) -> &[ControlItem] {
        self.entries.get(cluster).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn insert(&mut self, cluster: ClusterName, item: ControlItem) {
        self.entries.entry(cluster).or_default().push(item);
    }

    /// Control labels must come from the cluster's merged set.
    pub fn validate(&self, plan: &AnnotationPlan) -> Result<(), QualityError> {
        for (name, items) in &self.entries {
            let merged = plan
                .cluster(name)
                .map(SuperCluster::merged_set)
                .ok_or_else(|| QualityError::File(format!("control pool names unknown cluster {name}")))?;
            for item in items {
                if !merged.contains(&item.label) {
                    return Err(QualityError::ControlLabel {
                        cluster: name.clone(),
                        id: item.instance.id.clone(),
                        label: item.label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Clusters in `plan` whose pool is below the guidance size.
    pub fn warnings(&self, plan: &AnnotationPlan) -> Vec<String> {
        plan.clusters
            .keys()
            .filter_map(|name| {
                let n = self.for_cluster(name).len();
                (n < CONTROL_POOL_WARN_SIZE)
                    .then(|| format!("control pool for {name} has {n} sentences (< {CONTROL_POOL_WARN_SIZE})"))
            })
            .collect()
    }
}

/// Reads labelled records (dataset format plus `true_label`) and routes each
/// to its cluster by type pair.
pub fn read_labelled_records(text: &str, plan: &AnnotationPlan) -> Result<Vec<(ClusterName, Instance, Label)>, QualityError> {
    let records = parse_records(text).map_err(|e: DatasetError| QualityError::File(e.to_string()))?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let truth = rec
            .true_label
            .clone()
            .or_else(|| rec.relation.clone())
            .ok_or_else(|| QualityError::File(format!("record `{}` has no true_label", rec.id)))?;
        let inst = rec
            .into_instance(Some(crate::model::Split::Train))
            .map_err(|e| QualityError::File(e.to_string()))?;
        let cluster = plan
            .cluster_for(&inst.type_pair())
            .ok_or_else(|| QualityError::File(format!("record `{}` has unknown type pair {}", inst.id, inst.type_pair())))?;
        out.push((cluster.name.clone(), inst, Label::new(&truth)));
    }
    Ok(out)
}

pub fn load_control_pool(path: &Path, plan: &AnnotationPlan) -> Result<ControlPool, QualityError> {
    let text = std::fs::read_to_string(path).map_err(|e| QualityError::File(format!("{}: {e}", path.display())))?;
    let mut pool = ControlPool::default();
    for (cluster, instance, label) in read_labelled_records(&text, plan)? {
        pool.insert(cluster, ControlItem { instance, label });
    }
    pool.validate(plan)?;
    Ok(pool)
}

pub fn load_qualification_tests(path: &Path, plan: &AnnotationPlan) -> Result<BTreeMap<ClusterName, QualificationTest>, QualityError> {
    let text = std::fs::read_to_string(path).map_err(|e| QualityError::File(format!("{}: {e}", path.display())))?;
    let mut grouped: BTreeMap<ClusterName, Vec<(Instance, Label)>> = BTreeMap::new();
    for (cluster, inst, label) in read_labelled_records(&text, plan)? {
        grouped.entry(cluster).or_default().push((inst, label));
    }
    grouped
        .into_iter()
        .map(|(name, items)| {
            let cluster = plan.cluster(&name).expect("routed to a known cluster");
            QualificationTest::build(cluster, plan, items).map(|t| (name, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster() -> ClusterName {
        ClusterName::new("per2per")
    }

    fn qualified() -> AnnotatorProfile {
        let mut p = AnnotatorProfile::new("w", 1000, 0.99);
        p.qualifications.insert(cluster(), Qualification::Passed);
        p.qualifications.insert(ClusterName::new("org2org"), Qualification::Passed);
        p
    }

    fn feed(p: &mut AnnotatorProfile, correct: u64, wrong: u64) -> Option<Suspension> {
        let params = GateParams::default();
        let mut last = None;
        for i in 0..(correct + wrong) {
            if let Some(s) = record_control(p, &cluster(), i < correct, &params).unwrap() {
                last = Some(s);
            }
        }
        last
    }

    #[test]
    fn prerequisites() {
        let params = GateParams::default();
        assert!(check_prerequisites(&AnnotatorProfile::new("a", 600, 0.96), &params));
        assert!(!check_prerequisites(&AnnotatorProfile::new("b", 400, 0.99), &params));
        assert!(check_prerequisites(&AnnotatorProfile::new("c", 500, 0.95), &params));
        assert!(!check_prerequisites(&AnnotatorProfile::new("d", 500, 0.949), &params));
    }

    #[test]
    fn seven_of_ten_suspends() {
        let mut p = qualified();
        assert!(feed(&mut p, 7, 3).is_some());
        assert!(p.is_suspended(&cluster()));
    }

    #[test]
    fn nine_of_ten_stays_active() {
        let mut p = qualified();
        assert!(feed(&mut p, 9, 1).is_none());
        assert!(!p.is_suspended(&cluster()));
    }

    #[test]
    fn below_min_sample_never_suspends() {
        let mut p = qualified();
        assert!(feed(&mut p, 0, 4).is_none());
        assert_eq!(p.stats(&cluster()), ControlStats { correct: 0, seen: 4 });
        let mut q = qualified();
        assert!(feed(&mut q, 3, 0).is_none());
    }

    #[test]
    fn exactly_at_threshold_passes() {
        let mut p = qualified();
        assert!(feed(&mut p, 4, 1).is_none());
        let mut q = qualified();
        assert!(feed(&mut q, 8, 2).is_none());
    }

    #[test]
    fn suspension_is_per_cluster() {
        let mut p = qualified();
        feed(&mut p, 0, 5);
        assert!(p.is_suspended(&cluster()));
        assert!(!p.is_suspended(&ClusterName::new("org2org")));
    }

    #[test]
    fn unqualified_annotator_is_rejected() {
        let mut p = AnnotatorProfile::new("x", 1000, 1.0);
        assert!(matches!(
            record_control(&mut p, &cluster(), true, &GateParams::default()),
            Err(QualityError::NotQualified { .. })
        ));
    }

    #[test]
    fn disabled_gate_never_suspends() {
        let mut p = qualified();
        let params = GateParams {
            enabled: false,
            ..GateParams::default()
        };
        for _ in 0..20 {
            assert!(record_control(&mut p, &cluster(), false, &params).unwrap().is_none());
        }
    }

    fn test_with(n: usize) -> QualificationTest {
        use crate::model::{EntityType, Span, Split};
        let inst = Instance {
            id: "q".into(),
            tokens: vec!["He".into(), "met".into(), "her".into()],
            subj_span: Span::new(0, 1),
            obj_span: Span::new(2, 3),
            subj_type: EntityType::Person,
            obj_type: EntityType::Person,
            label: None,
            split: Split::Train,
        };
        QualificationTest {
            cluster: cluster(),
            definitions: vec![],
            questions: (0..n)
                .map(|_| QualificationQuestion {
                    instance: inst.clone(),
                    choices: vec![Label::new("PERSON:SPOUSE"), Label::no_relation()],
                    correct: Label::new("PERSON:SPOUSE"),
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_score_required() {
        let t = test_with(10);
        let right = vec![Label::new("PERSON:SPOUSE"); 10];
        assert_eq!(grade_qualification(&t, &right).unwrap(), Qualification::Passed);
        let mut one_wrong = right.clone();
        one_wrong[3] = Label::no_relation();
        assert_eq!(grade_qualification(&t, &one_wrong).unwrap(), Qualification::Failed);
        assert!(matches!(grade_qualification(&t, &right[..9]), Err(QualityError::Incomplete { .. })));
        assert!(matches!(grade_qualification(&test_with(0), &[]), Err(QualityError::EmptyTest(_))));
    }
}
