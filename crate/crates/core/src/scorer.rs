//! Relation-extraction scoring: micro P/R/F1 over positive labels, category
//! breakdowns, the error-correction taxonomy and cross train/test tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{EntityType, Label, TypePair};
use crate::scalar::{harmonic_mean, Scalar};
use crate::taxonomy::Taxonomy;

/// Category restriction rule, printed with category reports.
pub const CATEGORY_RULE: &str =
    "an instance counts toward a category when its gold or predicted label is in the category";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("id `{0}` is missing from the predictions")]
    MissingPrediction(String),
    #[error("id `{0}` is not in the gold labels")]
    UnknownId(String),
    #[error("id `{0}` appears twice")]
    DuplicateId(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown label {0}")]
    UnknownLabel(Label),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Labels = BTreeMap<String, Label>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub true_positives: u64,
    pub predicted: u64,
    pub gold: u64,
}

impl<T: Scalar> Prf<T> {
    pub fn from_counts(tp: u64, predicted: u64, gold: u64) -> Self {
        let precision = T::ratio_or_zero(tp, predicted);
        let recall = T::ratio_or_zero(tp, gold);
        let f1 = harmonic_mean(&precision, &recall);
        Prf {
            precision,
            recall,
            f1,
            true_positives: tp,
            predicted,
            gold,
        }
    }

    pub fn warnings(&self, scope: &str) -> Vec<String> {
        let mut w = Vec::new();
        if self.predicted == 0 {
            w.push(format!("{scope}: no positive predictions, precision set to 0"));
        }
        if self.gold == 0 {
            w.push(format!("{scope}: no positive gold labels, recall set to 0"));
        }
        w
    }

    pub fn to_f64(&self) -> Prf<f64> {
        Prf {
            precision: self.precision.to_f64(),
            recall: self.recall.to_f64(),
            f1: self.f1.to_f64(),
            true_positives: self.true_positives,
            predicted: self.predicted,
            gold: self.gold,
        }
    }
}

fn same_ids(gold: &Labels, pred: &Labels) -> Result<(), ScoreError> {
    if let Some(id) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(ScoreError::MissingPrediction(id.clone()));
    }
    if let Some(id) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(ScoreError::UnknownId(id.clone()));
    }
    Ok(())
}

/// Counts restricted to labels accepted by `member`.
fn counts(gold: &Labels, pred: &Labels, member: impl Fn(&Label) -> bool) -> (u64, u64, u64) {
    let (mut tp, mut p, mut g) = (0, 0, 0);
    for (id, gl) in gold {
        let pl = &pred[id];
        let (gin, pin) = (member(gl), member(pl));
        g += u64::from(gin);
        p += u64::from(pin);
        tp += u64::from(pin && gl == pl);
    }
    (tp, p, g)
}

/// Micro-averaged scores with `negative` excluded from the positive class.
pub fn micro_prf<T: Scalar>(gold: &Labels, pred: &Labels, negative: &Label) -> Result<Prf<T>, ScoreError> {
    same_ids(gold, pred)?;
    let (tp, p, g) = counts(gold, pred, |l| l != negative);
    Ok(Prf::from_counts(tp, p, g))
}

/// A named set of relation labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub labels: BTreeSet<Label>,
}

pub fn category_prf<T: Scalar>(gold: &Labels, pred: &Labels, category: &Category) -> Result<Prf<T>, ScoreError> {
    same_ids(gold, pred)?;
    let (tp, p, g) = counts(gold, pred, |l| category.labels.contains(l));
    Ok(Prf::from_counts(tp, p, g))
}

pub fn category_scores<T: Scalar>(
    gold: &Labels,
    pred: &Labels,
    categories: &[Category],
) -> Result<BTreeMap<String, Prf<T>>, ScoreError> {
    categories
        .iter()
        .map(|c| category_prf(gold, pred, c).map(|p| (c.name.clone(), p)))
        .collect()
}

/// Selects categories by name.
pub fn select_categories(all: &[Category], names: &[String]) -> Result<Vec<Category>, ScoreError> {
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|c| &c.name == n)
                .cloned()
                .ok_or_else(|| ScoreError::UnknownCategory(n.clone()))
        })
        .collect()
}

const LOCATION_TYPES: [EntityType; 4] = [
    EntityType::City,
    EntityType::Country,
    EntityType::StateOrProvince,
    EntityType::Location,
];

/// Which label names a category set uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    Original,
    Refined,
}

/// Subject/object type categories and the refinement groups, expressed in
/// either label space.
pub fn standard_categories(tax: &Taxonomy, space: LabelSpace) -> Vec<Category> {
    let in_space = |refined: BTreeSet<Label>| -> BTreeSet<Label> {
        match space {
            LabelSpace::Refined => refined,
            LabelSpace::Original => refined.iter().flat_map(|l| tax.sources_of(l)).collect(),
        }
    };
    let by_pairs = |f: &dyn Fn(&TypePair) -> bool| -> BTreeSet<Label> {
        tax.type_pairs()
            .filter(|p| f(p))
            .flat_map(|p| tax.candidates(p).into_iter().flatten().cloned())
            .collect()
    };
    let by_subject = |prefix: &str| -> BTreeSet<Label> {
        tax.refined_positive_labels()
            .into_iter()
            .filter(|l| l.subject_prefix() == Some(prefix))
            .collect()
    };
    let named = |names: &[&str]| -> BTreeSet<Label> { names.iter().map(|n| Label::new(n)).collect() };
    use EntityType::{Organization as Org, Person as Per};
    let groups: Vec<(&str, BTreeSet<Label>)> = vec![
        ("PER:*", by_subject("PERSON")),
        ("ORG:*", by_subject("ORGANIZATION")),
        ("PER:ORG", by_pairs(&|p| p.subject == Per && p.object == Org)),
        ("ORG:PER", by_pairs(&|p| p.subject == Org && p.object == Per)),
        ("PER:LOCATION", by_pairs(&|p| p.subject == Per && LOCATION_TYPES.contains(&p.object))),
        ("PER:PER", by_pairs(&|p| p.subject == Per && p.object == Per)),
        ("ORG:ORG", by_pairs(&|p| p.subject == Org && p.object == Org)),
        ("ORG:MEMBER_OF", named(&["ORGANIZATION:MEMBER_OF"])),
        ("ORG:MEMBERS", named(&["ORGANIZATION:MEMBERS"])),
        (
            "PER:RESIDENCE",
            named(&[
                "PERSON:CITIES_OF_RESIDENCE",
                "PERSON:COUNTRIES_OF_RESIDENCE",
                "PERSON:STATEORPROVINCES_OF_RESIDENCE",
            ]),
        ),
        (
            "PER:BIRTH",
            named(&["PERSON:CITY_OF_BIRTH", "PERSON:COUNTRY_OF_BIRTH", "PERSON:STATEORPROVINCE_OF_BIRTH"]),
        ),
        (
            "PER:DEATH",
            named(&["PERSON:CITY_OF_DEATH", "PERSON:COUNTRY_OF_DEATH", "PERSON:STATEORPROVINCE_OF_DEATH"]),
        ),
        (
            "ORG:LOCATION",
            named(&[
                "ORGANIZATION:CITY_OF_BRANCH",
                "ORGANIZATION:COUNTRY_OF_BRANCH",
                "ORGANIZATION:STATEORPROVINCE_OF_BRANCH",
            ]),
        ),
        ("PER:IDENTITY", named(&["PERSON:IDENTITY"])),
    ];
    groups
        .into_iter()
        .map(|(name, refined)| Category {
            name: name.to_string(),
            labels: in_space(refined),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    #[serde(rename = "neg_to_pos")]
    NegToPos,
    #[serde(rename = "pos_to_neg")]
    PosToNeg,
    #[serde(rename = "pos_to_pos")]
    PosToPos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTaxonomy<T> {
    pub corrected: u64,
    pub counts: BTreeMap<ErrorClass, u64>,
    pub fractions: BTreeMap<ErrorClass, T>,
    pub ids: BTreeMap<ErrorClass, Vec<String>>,
}

/// Ids that `pred_a` gets wrong and `pred_b` gets right, classed by the
/// polarity of `pred_a`'s mistake.
pub fn error_taxonomy<T: Scalar>(
    gold: &Labels,
    pred_a: &Labels,
    pred_b: &Labels,
    negative: &Label,
) -> Result<ErrorTaxonomy<T>, ScoreError> {
    same_ids(gold, pred_a)?;
    same_ids(gold, pred_b)?;
    let classes = [ErrorClass::NegToPos, ErrorClass::PosToNeg, ErrorClass::PosToPos];
    let mut ids: BTreeMap<ErrorClass, Vec<String>> = classes.iter().map(|c| (*c, Vec::new())).collect();
    for (id, g) in gold {
        let (a, b) = (&pred_a[id], &pred_b[id]);
        if a == g || b != g {
            continue;
        }
        let class = match (a != negative, g != negative) {
            (false, _) => ErrorClass::NegToPos,
            (true, false) => ErrorClass::PosToNeg,
            (true, true) => ErrorClass::PosToPos,
        };
        ids.get_mut(&class).expect("all classes present").push(id.clone());
    }
    let corrected = ids.values().map(|v| v.len() as u64).sum();
    let counts: BTreeMap<ErrorClass, u64> = ids.iter().map(|(c, v)| (*c, v.len() as u64)).collect();
    let fractions = counts.iter().map(|(c, n)| (*c, T::ratio_or_zero(*n, corrected))).collect();
    Ok(ErrorTaxonomy {
        corrected,
        counts,
        fractions,
        ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<T> {
    pub model: String,
    pub train: String,
    pub test: String,
    pub overall: Prf<T>,
    pub per_category: BTreeMap<String, Prf<T>>,
    /// gold label → predicted label → count.
    pub confusion: BTreeMap<Label, BTreeMap<Label, u64>>,
    pub warnings: Vec<String>,
}

pub fn confusion(gold: &Labels, pred: &Labels) -> BTreeMap<Label, BTreeMap<Label, u64>> {
    let mut m: BTreeMap<Label, BTreeMap<Label, u64>> = BTreeMap::new();
    for (id, g) in gold {
        if let Some(p) = pred.get(id) {
            *m.entry(g.clone()).or_default().entry(p.clone()).or_default() += 1;
        }
    }
    m
}

pub struct ScoreRequest<'a> {
    pub model: &'a str,
    pub train: &'a str,
    pub test: &'a str,
    pub negative: &'a Label,
    pub categories: &'a [Category],
}

pub fn score<T: Scalar>(gold: &Labels, pred: &Labels, req: &ScoreRequest<'_>) -> Result<ScoreReport<T>, ScoreError> {
    let overall = micro_prf::<T>(gold, pred, req.negative)?;
    let mut warnings = overall.warnings("overall");
    let per_category = category_scores::<T>(gold, pred, req.categories)?;
    for (name, p) in &per_category {
        if p.predicted == 0 && p.gold == 0 {
            warnings.push(format!("category {name}: no members, scores set to 0"));
        }
    }
    Ok(ScoreReport {
        model: req.model.to_string(),
        train: req.train.to_string(),
        test: req.test.to_string(),
        overall,
        per_category,
        confusion: confusion(gold, pred),
        warnings,
    })
}

/// Index of the candidate with the median F1 (lower median for even counts;
/// ties broken by input order).
pub fn select_median<T: Scalar>(candidates: &[Prf<T>]) -> Result<usize, ScoreError> {
    if candidates.is_empty() {
        return Err(ScoreError::NoCandidates);
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[a]
            .f1
            .partial_cmp(&candidates[b].f1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order[(candidates.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    label: Label,
}

/// Prediction file: one `{"id": ..., "label": ...}` object per line.
pub fn parse_predictions(text: &str) -> Result<Labels, ScoreError> {
    let mut out = Labels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| ScoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.id.clone(), p.label).is_some() {
            return Err(ScoreError::DuplicateId(p.id));
        }
    }
    Ok(out)
}

pub fn predictions_to_jsonl(labels: &Labels) -> String {
    labels
        .iter()
        .map(|(id, label)| {
            serde_json::to_string(&PredictionLine {
                id: id.clone(),
                label: label.clone(),
            })
            .expect("line serializes")
                + "\n"
        })
        .collect()
}

/// Rejects labels outside the taxonomy (original or refined names).
pub fn check_labels(labels: &Labels, tax: &Taxonomy) -> Result<(), ScoreError> {
    match labels.values().find(|l| !tax.is_known(l)) {
        Some(l) => Err(ScoreError::UnknownLabel(l.clone())),
        None => Ok(()),
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn signed_pct(v: f64) -> String {
    format!("{:+.1}", v * 100.0)
}

/// Tab-separated rows: scope, precision, recall, F1, TP, predicted, gold.
pub fn report_tsv<T: Scalar>(r: &ScoreReport<T>) -> String {
    let mut s = String::from("scope\tprecision\trecall\tf1\ttp\tpredicted\tgold\n");
    let rows = std::iter::once(("overall", &r.overall)).chain(r.per_category.iter().map(|(k, v)| (k.as_str(), v)));
    for (scope, p) in rows {
        let _ = writeln!(
            s,
            "{scope}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            p.precision.to_f64(),
            p.recall.to_f64(),
            p.f1.to_f64(),
            p.true_positives,
            p.predicted,
            p.gold
        );
    }
    s
}

/// Fixed-width table in percent.
pub fn report_table<T: Scalar>(r: &ScoreReport<T>) -> String {
    let mut s = format!("model {} (train {}, test {})\n", r.model, r.train, r.test);
    if !r.per_category.is_empty() {
        let _ = writeln!(s, "categories: {CATEGORY_RULE}");
    }
    let _ = writeln!(s, "{:<16} {:>9} {:>9} {:>9}", "scope", "P", "R", "F1");
    let rows = std::iter::once(("overall", &r.overall)).chain(r.per_category.iter().map(|(k, v)| (k.as_str(), v)));
    for (scope, p) in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>9} {:>9}",
            scope,
            pct(p.precision.to_f64()),
            pct(p.recall.to_f64()),
            pct(p.f1.to_f64())
        );
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Train-by-test F1 grid per model with "Difference" row and column
/// (last minus first) when there are two or more of either.
pub fn cross_matrix<T: Scalar>(reports: &[ScoreReport<T>]) -> String {
    let mut by_model: BTreeMap<&str, Vec<&ScoreReport<T>>> = BTreeMap::new();
    for r in reports {
        by_model.entry(r.model.as_str()).or_default().push(r);
    }
    let mut out = String::new();
    for (model, rs) in by_model {
        let trains: Vec<&str> = rs.iter().map(|r| r.train.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        let tests: Vec<&str> = rs.iter().map(|r| r.test.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        let f1 = |tr: &str, te: &str| -> Option<f64> {
            rs.iter().find(|r| r.train == tr && r.test == te).map(|r| r.overall.f1.to_f64())
        };
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), pct);
        let delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => signed_pct(b - a),
            _ => "-".to_string(),
        };
        let width = trains.iter().chain(tests.iter()).map(|s| s.len()).max().unwrap_or(0).max(10) + 2;
        let _ = writeln!(out, "model {model} (F1, train \\ test)");
        let mut header = format!("{:<width$}", "");
        for te in &tests {
            header.push_str(&format!("{te:>width$}"));
        }
        if tests.len() > 1 {
            header.push_str(&format!("{:>width$}", "Difference"));
        }
        let _ = writeln!(out, "{}", header.trim_end());
        for tr in &trains {
            let mut row = format!("{tr:<width$}");
            for te in &tests {
                row.push_str(&format!("{:>width$}", cell(f1(tr, te))));
            }
            if tests.len() > 1 {
                row.push_str(&format!("{:>width$}", delta(f1(tr, tests[0]), f1(tr, tests[tests.len() - 1]))));
            }
            let _ = writeln!(out, "{row}");
        }
        if trains.len() > 1 {
            let mut row = format!("{:<width$}", "Difference");
            for te in &tests {
                row.push_str(&format!("{:>width$}", delta(f1(trains[0], te), f1(trains[trains.len() - 1], te))));
            }
            let _ = writeln!(out, "{}", row.trim_end());
        }
        out.push('\n');
    }
    out
}
