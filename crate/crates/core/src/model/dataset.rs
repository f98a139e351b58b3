use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::types::{EntityType, Label, Span, Split, TypePair};

/// One sentence with its subject and object mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_span: Span,
    pub obj_span: Span,
    pub subj_type: EntityType,
    pub obj_type: EntityType,
    pub label: Option<Label>,
    pub split: Split,
}

impl Instance {
    pub fn type_pair(&self) -> TypePair {
        TypePair::new(self.subj_type, self.obj_type)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Checks the span and type invariants.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let fail = |rule, detail: String| {
            Err(ValidationError {
                id: self.id.clone(),
                rule,
                detail,
            })
        };
        if self.tokens.is_empty() {
            return fail(Rule::EmptyTokens, "token list is empty".into());
        }
        for (name, span) in [("subject", self.subj_span), ("object", self.obj_span)] {
            if span.is_empty() {
                return fail(
                    Rule::EmptySpan,
                    format!("{name} span [{}, {}) is empty", span.start, span.end),
                );
            }
            if span.end > self.tokens.len() {
                return fail(
                    Rule::SpanOutOfBounds,
                    format!(
                        "{name} span [{}, {}) exceeds {} tokens",
                        span.start,
                        span.end,
                        self.tokens.len()
                    ),
                );
            }
        }
        if self.subj_span.overlaps(&self.obj_span) {
            return fail(
                Rule::SpansOverlap,
                format!(
                    "subject [{}, {}) overlaps object [{}, {})",
                    self.subj_span.start, self.subj_span.end, self.obj_span.start, self.obj_span.end
                ),
            );
        }
        if !self.subj_type.is_subject_type() {
            return fail(
                Rule::SubjectType,
                format!("subject type {} is not PERSON or ORGANIZATION", self.subj_type),
            );
        }
        if let Some(label) = &self.label {
            if label.is_wrong_type() {
                return fail(
                    Rule::WrongTypeLabel,
                    "WRONG_TYPE is an annotation choice, not a dataset label".into(),
                );
            }
        }
        Ok(())
    }
}

/// The individually checkable validation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyTokens,
    EmptySpan,
    SpanOutOfBounds,
    SpansOverlap,
    SubjectType,
    UnknownEntityType,
    UnknownSplit,
    WrongTypeLabel,
    DuplicateId,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("rule serialises");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("instance `{id}` violates {rule}: {detail}")]
pub struct ValidationError {
    pub id: String,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A removed instance and why.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub exclusions: Vec<Exclusion>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Result<Self, ValidationError> {
        let ds = Dataset {
            instances,
            exclusions: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut seen = HashSet::new();
        for inst in &self.instances {
            inst.validate()?;
            if !seen.insert(inst.id.as_str()) {
                return Err(ValidationError {
                    id: inst.id.clone(),
                    rule: Rule::DuplicateId,
                    detail: "id appears more than once".into(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Moves every instance matching `pred` into the exclusion list.
    pub(crate) fn exclude_where(
        mut self,
        mut pred: impl FnMut(&Instance) -> bool,
        reason: &str,
    ) -> (Self, usize) {
        let mut kept = Vec::with_capacity(self.instances.len());
        let mut removed = 0;
        for inst in self.instances {
            if pred(&inst) {
                self.exclusions.push(Exclusion {
                    id: inst.id,
                    reason: reason.to_string(),
                });
                removed += 1;
            } else {
                kept.push(inst);
            }
        }
        self.instances = kept;
        (self, removed)
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// One JSON record per line, half-open spans, explicit `split` field.
    #[default]
    JsonLines,
    /// The public TACRED JSON array: inclusive span ends, split taken from
    /// the record or the file name.
    Tacred,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "json-lines" => Ok(DatasetFormat::JsonLines),
            "tacred" => Ok(DatasetFormat::Tacred),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

/// Record layout shared by dataset, control-pool and qualification files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub token: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    pub subj_type: String,
    pub obj_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Known answer, used by control-pool and qualification files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<String>,
}

impl Record {
    pub fn from_instance(inst: &Instance) -> Self {
        Record {
            id: inst.id.clone(),
            token: inst.tokens.clone(),
            subj_start: inst.subj_span.start,
            subj_end: inst.subj_span.end,
            obj_start: inst.obj_span.start,
            obj_end: inst.obj_span.end,
            subj_type: inst.subj_type.to_string(),
            obj_type: inst.obj_type.to_string(),
            relation: inst.label.as_ref().map(|l| l.to_string()),
            split: Some(inst.split.to_string()),
            true_label: None,
        }
    }

    /// Converts to a validated instance. `default_split` fills a missing split.
    pub fn into_instance(self, default_split: Option<Split>) -> Result<Instance, ValidationError> {
        let id = self.id.clone();
        let bad = |rule, detail: String| ValidationError {
            id: id.clone(),
            rule,
            detail,
        };
        let subj_type: EntityType = self
            .subj_type
            .parse()
            .map_err(|e: super::types::UnknownEntityType| bad(Rule::UnknownEntityType, e.to_string()))?;
        let obj_type: EntityType = self
            .obj_type
            .parse()
            .map_err(|e: super::types::UnknownEntityType| bad(Rule::UnknownEntityType, e.to_string()))?;
        let split = match self.split.as_deref() {
            Some(s) => s.parse().map_err(|e: String| bad(Rule::UnknownSplit, e))?,
            None => default_split.ok_or_else(|| bad(Rule::UnknownSplit, "missing split".into()))?,
        };
        let inst = Instance {
            id: self.id,
            tokens: self.token,
            subj_span: Span::new(self.subj_start, self.subj_end),
            obj_span: Span::new(self.obj_start, self.obj_end),
            subj_type,
            obj_type,
            label: self.relation.as_deref().map(Label::new),
            split,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Parses JSON-lines records, reporting 1-based line numbers on failure.
pub fn parse_records(text: &str) -> Result<Vec<Record>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_dataset(text: &str, format: DatasetFormat, default_split: Option<Split>) -> Result<Dataset, DatasetError> {
    let records = match format {
        DatasetFormat::JsonLines => parse_records(text)?,
        DatasetFormat::Tacred => {
            let mut recs: Vec<Record> = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            // Inclusive ends in the public release.
            for r in &mut recs {
                r.subj_end += 1;
                r.obj_end += 1;
            }
            recs
        }
    };
    let instances = records
        .into_iter()
        .map(|r| r.into_instance(default_split))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(instances)?)
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let default_split = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<Split>().ok());
    parse_dataset(&text, format, default_split)
}

/// Serialises instances as JSON lines (exclusions are written separately).
pub fn dataset_to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for inst in &ds.instances {
        out.push_str(&serde_json::to_string(&Record::from_instance(inst)).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Exclusion report lines: `{"id":..,"reason":..}` per line.
pub fn exclusions_to_jsonl(exclusions: &[Exclusion]) -> String {
    let mut out = String::new();
    for ex in exclusions {
        out.push_str(&serde_json::to_string(ex).expect("exclusion serialises"));
        out.push('\n');
    }
    out
}

/// Outcome of an id-list exclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionOutcome {
    pub dataset: Dataset,
    pub removed: usize,
    /// Listed ids that were not present; reported, not fatal.
    pub unknown_ids: Vec<String>,
}

pub fn apply_exclusion_list(d: Dataset, ids: &[String], reason: &str) -> ExclusionOutcome {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let present: BTreeSet<&str> = d.instances.iter().map(|i| i.id.as_str()).collect();
    let unknown_ids = wanted
        .iter()
        .filter(|id| !present.contains(*id))
        .map(|s| s.to_string())
        .collect();
    let wanted: BTreeSet<String> = wanted.into_iter().map(str::to_string).collect();
    let (dataset, removed) = d.exclude_where(|i| wanted.contains(&i.id), reason);
    ExclusionOutcome {
        dataset,
        removed,
        unknown_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn line(id: &str, tokens: &[&str], subj: (usize, usize), obj: (usize, usize), types: (&str, &str)) -> String {
        serde_json::json!({
            "id": id, "token": tokens,
            "subj_start": subj.0, "subj_end": subj.1,
            "obj_start": obj.0, "obj_end": obj.1,
            "subj_type": types.0, "obj_type": types.1,
            "relation": "per:cities_of_residence", "split": "train"
        })
        .to_string()
    }

    fn parse(text: &str) -> Result<Dataset, DatasetError> {
        parse_dataset(text, DatasetFormat::JsonLines, None)
    }

    #[test]
    fn minimal_record_is_accepted() {
        let text = line("a", &["John", "lives", "in", "Miami"], (0, 1), (3, 4), ("PERSON", "CITY"));
        let ds = parse(&text).unwrap();
        assert_eq!(ds.len(), 1);
        let inst = &ds.instances[0];
        assert_eq!(inst.type_pair(), TypePair::new(EntityType::Person, EntityType::City));
        assert_eq!(inst.label.as_ref().unwrap().as_str(), "PERSON:CITIES_OF_RESIDENCE");
    }

    fn rule_of(text: &str) -> Rule {
        match parse(text) {
            Err(DatasetError::Validation(v)) => v.rule,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn every_rule_is_triggerable() {
        let toks = ["a", "b", "c", "d"];
        assert_eq!(rule_of(&line("x", &toks, (0, 2), (1, 3), ("PERSON", "CITY"))), Rule::SpansOverlap);
        assert_eq!(rule_of(&line("x", &toks, (0, 1), (3, 4), ("PERSON", "PLANET"))), Rule::UnknownEntityType);
        assert_eq!(rule_of(&line("x", &toks, (1, 1), (3, 4), ("PERSON", "CITY"))), Rule::EmptySpan);
        assert_eq!(rule_of(&line("x", &toks, (0, 1), (3, 5), ("PERSON", "CITY"))), Rule::SpanOutOfBounds);
        assert_eq!(rule_of(&line("x", &toks, (0, 1), (3, 4), ("CITY", "CITY"))), Rule::SubjectType);
        assert_eq!(rule_of(&line("x", &[], (0, 1), (3, 4), ("PERSON", "CITY"))), Rule::EmptyTokens);
        let dup = format!(
            "{}\n{}",
            line("x", &toks, (0, 1), (3, 4), ("PERSON", "CITY")),
            line("x", &toks, (0, 1), (3, 4), ("PERSON", "CITY"))
        );
        assert_eq!(rule_of(&dup), Rule::DuplicateId);
        let wrong = line("x", &toks, (0, 1), (3, 4), ("PERSON", "CITY")).replace("per:cities_of_residence", "WRONG_TYPE");
        assert_eq!(rule_of(&wrong), Rule::WrongTypeLabel);
        let nosplit = line("x", &toks, (0, 1), (3, 4), ("PERSON", "CITY")).replace(",\"split\":\"train\"", "");
        assert_eq!(rule_of(&nosplit), Rule::UnknownSplit);
    }

    #[test]
    fn parse_error_reports_line_number() {
        let good = line("a", &["x", "y"], (0, 1), (1, 2), ("PERSON", "CITY"));
        let text = format!("{good}\n{{not json\n");
        match parse(&text) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tacred_format_converts_inclusive_ends() {
        let text = r#"[{"id":"t1","token":["John","lives","in","Miami"],"subj_start":0,"subj_end":0,
            "obj_start":3,"obj_end":3,"subj_type":"PERSON","obj_type":"CITY","relation":"no_relation"}]"#;
        let ds = parse_dataset(text, DatasetFormat::Tacred, Some(Split::Dev)).unwrap();
        assert_eq!(ds.instances[0].obj_span, Span::new(3, 4));
        assert_eq!(ds.instances[0].split, Split::Dev);
    }

    #[test]
    fn exclusion_list_moves_instances_and_reports_unknown() {
        let text: Vec<String> = (0..5)
            .map(|i| line(&format!("s{i}"), &["a", "b"], (0, 1), (1, 2), ("PERSON", "CITY")))
            .collect();
        let ds = parse(&text.join("\n")).unwrap();
        let out = apply_exclusion_list(ds.clone(), &["s1".into(), "s3".into(), "zz".into()], "partial_span");
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(out.removed, 2);
        assert_eq!(out.unknown_ids, vec!["zz".to_string()]);
        assert_eq!(out.dataset.exclusions.len(), 2);

        let same = apply_exclusion_list(ds.clone(), &[], "noop");
        assert_eq!(same.dataset, ds);
    }
}
