//! Agreement statistics, before/after label diffs, difficulty ranking and
//! revision patches.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Dataset, Exclusion, Label};
use crate::orchestrator::{ResponseStatus, SentenceState, State};
use crate::scalar::Scalar;
use crate::taxonomy::Taxonomy;

/// How the reported agreement rate is defined.
pub const AGREEMENT_DEFINITION: &str = "mean per-item pairwise agreement (P_o)";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("kappa is undefined: all ratings fall in one category (P_e = 1)")]
    UndefinedKappa,
    #[error("rating matrix has no items")]
    EmptyMatrix,
    #[error("item `{0}` has fewer than 2 ratings")]
    TooFewRaters(String),
    #[error("item `{id}` has {found} ratings, expected {expected}")]
    Ragged { id: String, expected: u64, found: u64 },
    #[error("item `{id}` has {found} counts for {expected} categories")]
    Width { id: String, expected: usize, found: usize },
    #[error("unknown label {0}")]
    UnknownLabel(Label),
    #[error("id `{0}` is not in the base dataset")]
    DanglingId(String),
    #[error("id `{0}` appears twice")]
    DuplicateId(String),
    #[error("patch line {line}: {message}")]
    PatchParse { line: usize, message: String },
}

/// Per-item category counts. Rater counts may vary between items unless the
/// matrix was built with [`RatingMatrix::uniform`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    categories: Vec<Label>,
    items: Vec<(String, Vec<u64>)>,
}

impl RatingMatrix {
    /// Items may have different rater counts, each at least 2.
    pub fn new(categories: Vec<Label>, items: Vec<(String, Vec<u64>)>) -> Result<Self, AnalyticsError> {
        if items.is_empty() {
            return Err(AnalyticsError::EmptyMatrix);
        }
        for (id, counts) in &items {
            if counts.len() != categories.len() {
                return Err(AnalyticsError::Width {
                    id: id.clone(),
                    expected: categories.len(),
                    found: counts.len(),
                });
            }
            if counts.iter().sum::<u64>() < 2 {
                return Err(AnalyticsError::TooFewRaters(id.clone()));
            }
        }
        Ok(RatingMatrix { categories, items })
    }

    /// Every item must have the same rater count.
    pub fn uniform(categories: Vec<Label>, items: Vec<(String, Vec<u64>)>) -> Result<Self, AnalyticsError> {
        let m = RatingMatrix::new(categories, items)?;
        let n = m.items[0].1.iter().sum::<u64>();
        for (id, counts) in &m.items {
            let found = counts.iter().sum::<u64>();
            if found != n {
                return Err(AnalyticsError::Ragged {
                    id: id.clone(),
                    expected: n,
                    found,
                });
            }
        }
        Ok(m)
    }

    /// Builds from raw label lists, one per item.
    pub fn from_labels(items: &[(String, Vec<Label>)]) -> Result<Self, AnalyticsError> {
        let categories: Vec<Label> = items
            .iter()
            .flat_map(|(_, ls)| ls.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&Label, usize> = categories.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let rows = items
            .iter()
            .map(|(id, ls)| {
                let mut counts = vec![0u64; categories.len()];
                for l in ls {
                    counts[index[l]] += 1;
                }
                (id.clone(), counts)
            })
            .collect();
        RatingMatrix::new(categories.clone(), rows)
    }

    pub fn categories(&self) -> &[Label] {
        &self.categories
    }

    pub fn items(&self) -> &[(String, Vec<u64>)] {
        &self.items
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.items[0].1.iter().sum::<u64>();
        self.items.iter().all(|(_, c)| c.iter().sum::<u64>() == n)
    }
}

fn item_agreement<T: Scalar>(counts: &[u64]) -> T {
    let n: u64 = counts.iter().sum();
    let agreeing: u64 = counts.iter().map(|&c| c * c.saturating_sub(1)).sum();
    T::ratio(agreeing, n * (n - 1))
}

/// Observed agreement: the mean over items of the fraction of agreeing
/// ordered rater pairs.
pub fn agreement_rate<T: Scalar>(m: &RatingMatrix) -> T {
    let total = m
        .items
        .iter()
        .fold(T::zero(), |acc, (_, c)| acc + item_agreement::<T>(c));
    total / T::from_count(m.items.len() as u64)
}

/// Chance agreement: sum of squared overall category proportions.
pub fn expected_agreement<T: Scalar>(m: &RatingMatrix) -> T {
    let ratings: u64 = m.items.iter().map(|(_, c)| c.iter().sum::<u64>()).sum();
    (0..m.categories.len())
        .map(|j| {
            let col: u64 = m.items.iter().map(|(_, c)| c[j]).sum();
            let p = T::ratio(col, ratings);
            p.clone() * p
        })
        .fold(T::zero(), |a, b| a + b)
}

pub fn fleiss_kappa<T: Scalar>(m: &RatingMatrix) -> Result<T, AnalyticsError> {
    let po = agreement_rate::<T>(m);
    let pe = expected_agreement::<T>(m);
    if pe == T::one() {
        return Err(AnalyticsError::UndefinedKappa);
    }
    Ok((po - pe.clone()) / (T::one() - pe))
}

/// Which accepted responses of a sentence stage count as ratings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterSelection {
    /// The first two accepted responses; every item has two raters.
    #[default]
    FirstTwo,
    /// All accepted responses; rater counts vary.
    All,
}

/// One item per (sentence, stage) with at least two accepted responses.
pub fn rating_items(state: &State, selection: RaterSelection) -> Vec<(String, Vec<Label>)> {
    let mut out = Vec::new();
    for s in state.sentences.values() {
        let stages = s
            .history
            .iter()
            .map(|h| (h.stage, &h.responses))
            .chain(std::iter::once((s.stage, &s.responses)));
        for (stage, responses) in stages {
            let mut labels: Vec<Label> = responses
                .iter()
                .filter(|r| r.status == ResponseStatus::Accepted)
                .map(|r| r.label.clone())
                .collect();
            if selection == RaterSelection::FirstTwo {
                labels.truncate(2);
            }
            if labels.len() >= 2 {
                out.push((format!("{}#{stage}", s.id()), labels));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub selection: RaterSelection,
    pub agreement_rate: f64,
    pub agreement_definition: String,
    /// `None` when undefined (no items or a single category).
    pub kappa: Option<f64>,
}

pub fn agreement_report(state: &State, selection: RaterSelection) -> AgreementReport {
    let items = rating_items(state, selection);
    let m = RatingMatrix::from_labels(&items).ok();
    AgreementReport {
        items: items.len(),
        selection,
        agreement_rate: m.as_ref().map(agreement_rate::<f64>).unwrap_or(0.0),
        agreement_definition: AGREEMENT_DEFINITION.into(),
        kappa: m.as_ref().and_then(|m| fleiss_kappa::<f64>(m).ok()),
    }
}

/// Polarity transition of a changed label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    NegToPos,
    PosToNeg,
    PosToPos,
}

/// Classifies `before → after`; `None` when unchanged.
pub fn transition(before: &Label, after: &Label) -> Option<Transition> {
    if before == after {
        return None;
    }
    Some(match (before.is_positive(), after.is_positive()) {
        (false, _) => Transition::NegToPos,
        (true, false) => Transition::PosToNeg,
        (true, true) => Transition::PosToPos,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDelta {
    pub before: u64,
    pub after: u64,
    /// Before-labels of ids that now carry this label, excluding itself.
    pub inflow: BTreeMap<Label, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport<T> {
    pub total: u64,
    pub changed: u64,
    pub changed_fraction: T,
    pub neg_to_pos: u64,
    pub pos_to_neg: u64,
    pub pos_to_pos: u64,
    pub neg_to_pos_fraction: T,
    pub pos_to_neg_fraction: T,
    pub pos_to_pos_fraction: T,
    pub per_label: BTreeMap<Label, LabelDelta>,
    pub changed_ids: BTreeMap<Transition, Vec<String>>,
    pub only_before: Vec<String>,
    pub only_after: Vec<String>,
}

/// Compares two label assignments over their shared ids. With a taxonomy,
/// labels are checked and `before` labels are mapped into the refined
/// taxonomy first, so pure renames do not count as changes.
pub fn diff<T: Scalar>(
    before: &BTreeMap<String, Label>,
    after: &BTreeMap<String, Label>,
    taxonomy: Option<&Taxonomy>,
) -> Result<DiffReport<T>, AnalyticsError> {
    let check = |l: &Label| -> Result<Label, AnalyticsError> {
        if l.is_wrong_type() {
            return Err(AnalyticsError::UnknownLabel(l.clone()));
        }
        match taxonomy {
            Some(t) => t.to_refined(l).map_err(|_| AnalyticsError::UnknownLabel(l.clone())),
            None => Ok(l.clone()),
        }
    };
    let mut per_label: BTreeMap<Label, LabelDelta> = BTreeMap::new();
    let mut changed_ids: BTreeMap<Transition, Vec<String>> = BTreeMap::new();
    let mut total = 0u64;
    for (id, b) in before {
        let b = check(b)?;
        let Some(a) = after.get(id) else { continue };
        let a = check(a)?;
        total += 1;
        per_label.entry(b.clone()).or_default().before += 1;
        let d = per_label.entry(a.clone()).or_default();
        d.after += 1;
        if let Some(t) = transition(&b, &a) {
            *d.inflow.entry(b).or_default() += 1;
            changed_ids.entry(t).or_default().push(id.clone());
        }
    }
    for a in after.values() {
        check(a)?;
    }
    let count = |t| changed_ids.get(&t).map_or(0, |v| v.len() as u64);
    let (n2p, p2n, p2p) = (count(Transition::NegToPos), count(Transition::PosToNeg), count(Transition::PosToPos));
    let changed = n2p + p2n + p2p;
    Ok(DiffReport {
        total,
        changed,
        changed_fraction: T::ratio_or_zero(changed, total),
        neg_to_pos: n2p,
        pos_to_neg: p2n,
        pos_to_pos: p2p,
        neg_to_pos_fraction: T::ratio_or_zero(n2p, changed),
        pos_to_neg_fraction: T::ratio_or_zero(p2n, changed),
        pos_to_pos_fraction: T::ratio_or_zero(p2p, changed),
        per_label,
        changed_ids,
        only_before: before.keys().filter(|k| !after.contains_key(*k)).cloned().collect(),
        only_after: after.keys().filter(|k| !before.contains_key(*k)).cloned().collect(),
    })
}

/// `1 - plurality / responses` per item, hardest first, ties by id. Items
/// with fewer than two responses are skipped.
pub fn difficulty<T: Scalar>(items: &[(String, Vec<Label>)]) -> Vec<(String, T)> {
    let mut out: Vec<(String, T)> = items
        .iter()
        .filter(|(_, ls)| ls.len() >= 2)
        .map(|(id, ls)| {
            let mut counts: BTreeMap<&Label, u64> = BTreeMap::new();
            for l in ls {
                *counts.entry(l).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            let n = ls.len() as u64;
            (id.clone(), T::ratio(n - top, n))
        })
        .collect();
    out.sort_by(|(ia, a), (ib, b)| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal).then_with(|| ia.cmp(ib)));
    out
}

/// Difficulty of each sentence from the accepted responses at its latest stage.
pub fn difficulty_report<T: Scalar>(states: &[&SentenceState]) -> Vec<(String, T)> {
    let items: Vec<(String, Vec<Label>)> = states.iter().map(|s| (s.id().to_string(), s.accepted_labels())).collect();
    difficulty(&items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PatchAction {
    Relabel { new_label: Label },
    Remove { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub id: String,
    #[serde(flatten)]
    pub action: PatchAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionPatch {
    pub entries: Vec<PatchEntry>,
}

impl RevisionPatch {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, AnalyticsError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: PatchEntry = serde_json::from_str(line).map_err(|e| AnalyticsError::PatchParse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        let p = RevisionPatch { entries };
        p.check_unique()?;
        Ok(p)
    }

    fn check_unique(&self) -> Result<(), AnalyticsError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(AnalyticsError::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }
}

fn refined(tax: &Taxonomy, l: &Label) -> Result<Label, AnalyticsError> {
    if tax.is_refined(l) {
        Ok(l.clone())
    } else {
        Err(AnalyticsError::UnknownLabel(l.clone()))
    }
}

/// Target label for an id: its final label if it has one, otherwise the
/// mechanical refinement of its base label.
fn target(tax: &Taxonomy, base: Option<&Label>, assigned: Option<&Label>) -> Result<Option<Label>, AnalyticsError> {
    match (assigned, base) {
        (Some(a), _) => refined(tax, a).map(Some),
        (None, Some(b)) => tax
            .to_refined(b)
            .map(Some)
            .map_err(|_| AnalyticsError::UnknownLabel(b.clone())),
        (None, None) => Ok(None),
    }
}

fn check_dangling(base: &Dataset, ids: impl IntoIterator<Item = impl AsRef<str>>) -> Result<(), AnalyticsError> {
    let known: BTreeSet<&str> = base.instances.iter().map(|i| i.id.as_str()).collect();
    for id in ids {
        if !known.contains(id.as_ref()) {
            return Err(AnalyticsError::DanglingId(id.as_ref().to_string()));
        }
    }
    Ok(())
}

/// Patch turning `base` into its revision: removals for exclusions and
/// relabels wherever the revised label differs, in base order.
pub fn emit_patch(
    base: &Dataset,
    assignments: &BTreeMap<String, Label>,
    exclusions: &[Exclusion],
    tax: &Taxonomy,
) -> Result<RevisionPatch, AnalyticsError> {
    check_dangling(base, assignments.keys().chain(exclusions.iter().map(|e| &e.id)))?;
    let removed: BTreeMap<&str, &str> = exclusions.iter().map(|e| (e.id.as_str(), e.reason.as_str())).collect();
    let mut entries = Vec::new();
    for inst in &base.instances {
        if let Some(reason) = removed.get(inst.id.as_str()) {
            entries.push(PatchEntry {
                id: inst.id.clone(),
                action: PatchAction::Remove {
                    reason: reason.to_string(),
                },
            });
            continue;
        }
        if let Some(new) = target(tax, inst.label.as_ref(), assignments.get(&inst.id))? {
            if inst.label.as_ref() != Some(&new) {
                entries.push(PatchEntry {
                    id: inst.id.clone(),
                    action: PatchAction::Relabel { new_label: new },
                });
            }
        }
    }
    Ok(RevisionPatch { entries })
}

pub fn apply_patch(base: &Dataset, patch: &RevisionPatch, tax: &Taxonomy) -> Result<Dataset, AnalyticsError> {
    patch.check_unique()?;
    check_dangling(base, patch.entries.iter().map(|e| &e.id))?;
    let by_id: BTreeMap<&str, &PatchAction> = patch.entries.iter().map(|e| (e.id.as_str(), &e.action)).collect();
    let mut out = Dataset {
        exclusions: base.exclusions.clone(),
        ..Dataset::default()
    };
    for inst in &base.instances {
        match by_id.get(inst.id.as_str()) {
            Some(PatchAction::Remove { reason }) => out.exclusions.push(Exclusion {
                id: inst.id.clone(),
                reason: reason.clone(),
            }),
            Some(PatchAction::Relabel { new_label }) => {
                let mut i = inst.clone();
                i.label = Some(refined(tax, new_label)?);
                out.instances.push(i);
            }
            None => out.instances.push(inst.clone()),
        }
    }
    Ok(out)
}

/// Builds the revised dataset directly from the final labels, without a
/// patch. Used to check that applying an emitted patch agrees.
pub fn revise(
    base: &Dataset,
    assignments: &BTreeMap<String, Label>,
    exclusions: &[Exclusion],
    tax: &Taxonomy,
) -> Result<Dataset, AnalyticsError> {
    check_dangling(base, assignments.keys().chain(exclusions.iter().map(|e| &e.id)))?;
    let mut out = Dataset {
        exclusions: base.exclusions.clone(),
        ..Dataset::default()
    };
    for inst in &base.instances {
        if let Some(e) = exclusions.iter().find(|e| e.id == inst.id) {
            out.exclusions.push(e.clone());
            continue;
        }
        let mut i = inst.clone();
        i.label = target(tax, inst.label.as_ref(), assignments.get(&inst.id))?;
        out.instances.push(i);
    }
    Ok(out)
}
