use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Named-entity type attached to a subject or object span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityType {
    Person,
    Organization,
    City,
    Country,
    StateOrProvince,
    Location,
    Nationality,
    Title,
    Date,
    Number,
    Duration,
    Url,
    Religion,
    Ideology,
    CriminalCharge,
    CauseOfDeath,
    Misc,
}

impl EntityType {
    pub const ALL: [EntityType; 17] = [
        EntityType::Person,
        EntityType::Organization,
        EntityType::City,
        EntityType::Country,
        EntityType::StateOrProvince,
        EntityType::Location,
        EntityType::Nationality,
        EntityType::Title,
        EntityType::Date,
        EntityType::Number,
        EntityType::Duration,
        EntityType::Url,
        EntityType::Religion,
        EntityType::Ideology,
        EntityType::CriminalCharge,
        EntityType::CauseOfDeath,
        EntityType::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Organization => "ORGANIZATION",
            EntityType::City => "CITY",
            EntityType::Country => "COUNTRY",
            EntityType::StateOrProvince => "STATE_OR_PROVINCE",
            EntityType::Location => "LOCATION",
            EntityType::Nationality => "NATIONALITY",
            EntityType::Title => "TITLE",
            EntityType::Date => "DATE",
            EntityType::Number => "NUMBER",
            EntityType::Duration => "DURATION",
            EntityType::Url => "URL",
            EntityType::Religion => "RELIGION",
            EntityType::Ideology => "IDEOLOGY",
            EntityType::CriminalCharge => "CRIMINAL_CHARGE",
            EntityType::CauseOfDeath => "CAUSE_OF_DEATH",
            EntityType::Misc => "MISC",
        }
    }

    /// Subjects are always people or organizations.
    pub fn is_subject_type(self) -> bool {
        matches!(self, EntityType::Person | EntityType::Organization)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown entity type `{0}`")]
pub struct UnknownEntityType(pub String);

impl FromStr for EntityType {
    type Err = UnknownEntityType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        EntityType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == upper)
            .ok_or_else(|| UnknownEntityType(s.to_string()))
    }
}

/// A (subject type, object type) sentence group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypePair {
    pub subject: EntityType,
    pub object: EntityType,
}

impl TypePair {
    pub fn new(subject: EntityType, object: EntityType) -> Self {
        TypePair { subject, object }
    }
}

impl fmt::Display for TypePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.subject, self.object)
    }
}

/// Relation label name, stored in canonical spelling.
///
/// Canonical spelling uses upper case with the long subject prefix
/// (`PERSON:TITLE`, `ORGANIZATION:MEMBERS`). The public dataset's lower-case
/// short forms (`per:title`, `org:members`, `no_relation`) are accepted and
/// converted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Label(String);

pub const NO_RELATION: &str = "NO_RELATION";
pub const WRONG_TYPE: &str = "WRONG_TYPE";

impl Label {
    pub fn new(name: &str) -> Self {
        Label(canonical_label_name(name))
    }

    pub fn no_relation() -> Self {
        Label(NO_RELATION.to_string())
    }

    pub fn wrong_type() -> Self {
        Label(WRONG_TYPE.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_no_relation(&self) -> bool {
        self.0 == NO_RELATION
    }

    pub fn is_wrong_type(&self) -> bool {
        self.0 == WRONG_TYPE
    }

    /// A positive relation: neither the negative label nor the wrong-type marker.
    pub fn is_positive(&self) -> bool {
        !self.is_no_relation() && !self.is_wrong_type()
    }

    /// Subject prefix (`PERSON` / `ORGANIZATION`) for positive labels.
    pub fn subject_prefix(&self) -> Option<&str> {
        self.0.split_once(':').map(|(head, _)| head)
    }
}

fn canonical_label_name(name: &str) -> String {
    let trimmed = name.trim();
    let upper = trimmed.to_ascii_uppercase();
    match upper.as_str() {
        "NO_RELATION" => return NO_RELATION.to_string(),
        "WRONG_TYPE" | "WRONG_TYPES" => return WRONG_TYPE.to_string(),
        _ => {}
    }
    match upper.split_once(':') {
        Some(("PER", rest)) => format!("PERSON:{rest}"),
        Some(("ORG", rest)) => format!("ORGANIZATION:{rest}"),
        _ => upper,
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::new(&s)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> Self {
        l.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Half-open `[start, end)` token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "development" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}
