//! Report payloads shared by the admin endpoints and the CLI, so both print
//! the same numbers for the same log.

use crowdre_core::analytics::{agreement_report, difficulty_report, emit_patch, AgreementReport, AnalyticsError, RaterSelection};
use crowdre_core::model::Dataset;
use crowdre_core::orchestrator::{emit_final_labels, State};
use crowdre_core::quality::Status;
use crowdre_core::{ClusterName, Taxonomy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRow {
    pub id: String,
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsView {
    pub agreement: AgreementReport,
    /// Hardest sentences first.
    pub difficulty: Vec<DifficultyRow>,
}

pub fn stats_view(state: &State, selection: RaterSelection, top: usize) -> StatsView {
    let sentences: Vec<_> = state.sentences.values().collect();
    StatsView {
        agreement: agreement_report(state, selection),
        difficulty: difficulty_report::<f64>(&sentences)
            .into_iter()
            .take(top)
            .map(|(id, difficulty)| DifficultyRow { id, difficulty })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionView {
    pub annotator: String,
    pub cluster: ClusterName,
    pub correct: u64,
    pub seen: u64,
}

impl SuspensionView {
    pub fn collect(state: &State) -> Vec<SuspensionView> {
        state
            .annotators
            .values()
            .flat_map(|p| {
                p.status
                    .iter()
                    .filter(|(_, s)| **s == Status::Suspended)
                    .map(|(c, _)| {
                        let stats = p.stats(c);
                        SuspensionView {
                            annotator: p.id.clone(),
                            cluster: c.clone(),
                            correct: stats.correct,
                            seen: stats.seen,
                        }
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostView {
    pub hits_issued: u64,
    pub billable_hits: u64,
    pub cost_cents: u64,
    pub cost: String,
}

impl CostView {
    pub fn new(state: &State) -> Self {
        let cents = state.cost_cents();
        CostView {
            hits_issued: state.hits_issued,
            billable_hits: state.billable_hits(),
            cost_cents: cents,
            cost: format!("${}.{:02}", cents / 100, cents % 100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestView {
    pub last_seq: u64,
    pub sha256: String,
}

impl DigestView {
    pub fn new(state: &State) -> Self {
        DigestView {
            last_seq: state.last_seq,
            sha256: state.digest(),
        }
    }
}

/// The revision patch for the current final labels, as JSON lines.
pub fn patch_jsonl(state: &State, base: &Dataset, tax: &Taxonomy) -> Result<String, AnalyticsError> {
    let finals = emit_final_labels(state.sentences.values());
    Ok(emit_patch(base, &finals.assignments, &finals.exclusions, tax)?.to_jsonl())
}
