//! Dataset data model, file ingestion and the filtering hooks.

mod dataset;
mod language;
mod types;

pub use dataset::{
    apply_exclusion_list, dataset_to_jsonl, exclusions_to_jsonl, load_dataset, parse_dataset, parse_records,
    Dataset, DatasetError, DatasetFormat, Exclusion, ExclusionOutcome, Instance, Record, Rule, ValidationError,
};
pub use language::{language_filter, HeuristicDetector, HeuristicScores, LanguageDetector, LanguageReport, NON_ENGLISH};
pub use types::{EntityType, Label, Span, Split, TypePair, UnknownEntityType, NO_RELATION, WRONG_TYPE};
