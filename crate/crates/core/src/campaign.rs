//! On-disk layout of a campaign directory.
//!
//! ```text
//! campaign.toml        optional: max_subset, gate, price_cents
//! plan.json            optional: explicit annotation plan
//! taxonomy.toml        optional: taxonomy replacing the built-in one
//! dataset.jsonl        sentences to annotate
//! controls.jsonl       control pool (records with true_label)
//! qualification.jsonl  qualification questions (records with true_label)
//! events.jsonl         event log, written by the service
//! snapshot.json        latest state snapshot, written by the service
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{dataset_to_jsonl, load_dataset, Dataset, DatasetFormat, Instance, Record};
use crate::orchestrator::Campaign;
use crate::quality::{load_control_pool, load_qualification_tests, ControlPool, GateParams, QualificationTest};
use crate::taxonomy::{AnnotationPlan, RelationInfo, SuperCluster, Taxonomy, DEFAULT_MAX_SUBSET};
use crate::Label;

pub const SETTINGS: &str = "campaign.toml";
pub const PLAN: &str = "plan.json";
pub const TAXONOMY: &str = "taxonomy.toml";
pub const DATASET: &str = "dataset.jsonl";
pub const CONTROLS: &str = "controls.jsonl";
pub const QUALIFICATION: &str = "qualification.jsonl";
pub const LOG: &str = "events.jsonl";
pub const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub max_subset: usize,
    pub gate: GateParams,
    pub price_cents: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_subset: DEFAULT_MAX_SUBSET,
            gate: GateParams::default(),
            price_cents: crate::orchestrator::DEFAULT_PRICE_CENTS,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

fn file_err(path: &Path, message: impl ToString) -> CampaignError {
    CampaignError::File {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// `plan.json`: the routing map is rebuilt from the clusters.
#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    clusters: Vec<SuperCluster>,
    definitions: BTreeMap<Label, RelationInfo>,
}

pub struct LoadedCampaign {
    pub campaign: Campaign,
    pub dataset: Dataset,
    pub settings: Settings,
    pub warnings: Vec<String>,
}

pub fn load(dir: &Path) -> Result<LoadedCampaign, CampaignError> {
    let settings_path = dir.join(SETTINGS);
    let settings: Settings = if settings_path.exists() {
        let text = std::fs::read_to_string(&settings_path).map_err(|e| file_err(&settings_path, e))?;
        toml::from_str(&text).map_err(|e| file_err(&settings_path, e))?
    } else {
        Settings::default()
    };
    let plan_path = dir.join(PLAN);
    let tax_path = dir.join(TAXONOMY);
    let plan = if plan_path.exists() {
        let text = std::fs::read_to_string(&plan_path).map_err(|e| file_err(&plan_path, e))?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|e| file_err(&plan_path, e))?;
        AnnotationPlan::from_clusters(file.clusters, file.definitions)
    } else if tax_path.exists() {
        let tax = Taxonomy::load(&tax_path).map_err(|e| file_err(&tax_path, e))?;
        AnnotationPlan::from_taxonomy(&tax, settings.max_subset)
    } else {
        AnnotationPlan::from_taxonomy(&Taxonomy::canonical(), settings.max_subset)
    };
    let data_path = dir.join(DATASET);
    let dataset = load_dataset(&data_path, DatasetFormat::JsonLines).map_err(|e| file_err(&data_path, e))?;
    let controls_path = dir.join(CONTROLS);
    let controls = load_control_pool(&controls_path, &plan).map_err(|e| file_err(&controls_path, e))?;
    let qual_path = dir.join(QUALIFICATION);
    let tests = load_qualification_tests(&qual_path, &plan).map_err(|e| file_err(&qual_path, e))?;
    let warnings = controls.warnings(&plan);
    Ok(LoadedCampaign {
        campaign: Campaign { plan, controls, tests },
        dataset,
        settings,
        warnings,
    })
}

/// Records carrying a known answer, one per line.
pub fn labelled_to_jsonl<'a>(items: impl IntoIterator<Item = (&'a Instance, &'a Label)>) -> String {
    let mut out = String::new();
    for (inst, label) in items {
        let mut rec = Record::from_instance(inst);
        rec.true_label = Some(label.to_string());
        out.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn controls_to_jsonl(pool: &ControlPool) -> String {
    labelled_to_jsonl(pool.entries.values().flatten().map(|c| (&c.instance, &c.label)))
}

pub fn qualification_to_jsonl(tests: &BTreeMap<crate::ClusterName, QualificationTest>) -> String {
    labelled_to_jsonl(tests.values().flat_map(|t| t.questions.iter().map(|q| (&q.instance, &q.correct))))
}

/// Writes every input file of a campaign into `dir`, which is created.
pub fn write(dir: &Path, campaign: &Campaign, dataset: &Dataset, settings: &Settings) -> Result<(), CampaignError> {
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| file_err(&p, e))
    };
    put(SETTINGS, toml::to_string(settings).expect("settings serialise"))?;
    let file = PlanFile {
        clusters: campaign.plan.clusters.values().cloned().collect(),
        definitions: campaign.plan.definitions.clone(),
    };
    put(PLAN, serde_json::to_string_pretty(&file).expect("plan serialises"))?;
    put(DATASET, dataset_to_jsonl(dataset))?;
    put(CONTROLS, controls_to_jsonl(&campaign.controls))?;
    put(QUALIFICATION, qualification_to_jsonl(&campaign.tests))?;
    Ok(())
}
