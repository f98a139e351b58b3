//! Command-line verbs. Each returns its stdout text; failures become one JSON
//! error line per problem on stderr and a nonzero exit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crowdre_core::analytics::{apply_patch, diff, RaterSelection, RevisionPatch};
use crowdre_core::campaign::{self, Settings};
use crowdre_core::model::{dataset_to_jsonl, exclusions_to_jsonl, load_dataset, parse_records, Dataset, DatasetFormat};
use crowdre_core::orchestrator::persist::{read_log, read_snapshot};
use crowdre_core::orchestrator::{Orchestrator, OrchestratorConfig, State};
use crowdre_core::scorer::{
    check_labels, cross_matrix, parse_predictions, report_table, report_tsv, score, select_categories, select_median,
    standard_categories, LabelSpace, Labels, ScoreRequest,
};
use crowdre_core::simulator::{self, naive_vs_clustered_cost, CostConfig, SimulationConfig, Truth};
use crowdre_core::taxonomy::{cost_report, DEFAULT_MAX_SUBSET};
use crowdre_core::{AnnotationPlan, Label, ScoreReport, Taxonomy};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::reports::{patch_jsonl, stats_view, DigestView};
use crate::server::ServeConfig;

#[derive(Debug, Parser)]
#[command(name = "crowdre", version, about = "Crowdsourced relation re-labeling: plan, run, analyse")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Check a dataset (and optionally control and qualification files).
    Validate(ValidateArgs),
    /// Print the super-cluster plan and worst-case cost factor.
    Plan(PlanArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run a simulated campaign, export one, or compare task costs.
    Simulate(SimulateArgs),
    /// Agreement and difficulty statistics from an event log.
    Stats(StatsArgs),
    /// Score predictions against gold labels.
    Score(ScoreArgs),
    /// Compare two label assignments.
    Diff(DiffArgs),
    /// Emit or apply a revision patch.
    #[command(subcommand)]
    Patch(PatchVerb),
    /// Rebuild state from a log and check it against the snapshot.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Jsonl,
    Tacred,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => DatasetFormat::JsonLines,
            Format::Tacred => DatasetFormat::Tacred,
        }
    }
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    /// Taxonomy file; the built-in taxonomy when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

impl TaxonomyArgs {
    fn load(&self) -> Result<Taxonomy, CliError> {
        match &self.taxonomy {
            Some(p) => Taxonomy::load(p).map_err(|e| CliError::new("taxonomy", e)),
            None => Ok(Taxonomy::canonical()),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: Format,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub controls: Option<PathBuf>,
    #[arg(long)]
    pub qualification: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_SUBSET)]
    pub max_subset: usize,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_SUBSET)]
    pub max_subset: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CROWDRE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CROWDRE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "CROWDRE_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Fixed at the first start of a data directory.
    #[arg(long, env = "CROWDRE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "CROWDRE_ADMIN_TOKEN", hide_env_values = true)]
    pub admin_token: String,
    #[arg(long, env = "CROWDRE_TOKEN_SECRET", hide_env_values = true)]
    pub token_secret: String,
    #[arg(long, env = "CROWDRE_TOKEN_TTL", default_value_t = 8 * 3600)]
    pub token_ttl: u64,
    /// Event timestamps equal sequence numbers, making logs reproducible.
    #[arg(long, env = "CROWDRE_LOGICAL_CLOCK", default_value_t = false, action = clap::ArgAction::Set)]
    pub logical_clock: bool,
    /// fsync the log after every command.
    #[arg(long, env = "CROWDRE_SYNC", default_value_t = true, action = clap::ArgAction::Set)]
    pub sync: bool,
    #[arg(long, env = "CROWDRE_SNAPSHOT_EVERY", default_value_t = 500)]
    pub snapshot_every: u64,
}

impl ServeArgs {
    pub fn config(&self) -> ServeConfig {
        ServeConfig {
            host: self.host.clone(),
            port: self.port,
            data_dir: self.data_dir.clone(),
            seed: self.seed,
            admin_token: self.admin_token.clone(),
            token_secret: self.token_secret.clone(),
            token_ttl_secs: self.token_ttl,
            logical_clock: self.logical_clock,
            sync: self.sync,
            snapshot_every: self.snapshot_every,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation config; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Turn the control-accuracy gate off.
    #[arg(long)]
    pub no_gate: bool,
    /// Write the generated campaign (plus truth.jsonl) here instead of running.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Write the run's event log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Compare naive and clustered task counts instead of running.
    #[arg(long)]
    pub cost: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct LogSource {
    /// Campaign directory holding events.jsonl.
    #[arg(long, conflicts_with = "log")]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl LogSource {
    fn log_path(&self) -> Result<PathBuf, CliError> {
        match (&self.data_dir, &self.log) {
            (Some(d), _) => Ok(d.join(campaign::LOG)),
            (None, Some(l)) => Ok(l.clone()),
            (None, None) => Err(CliError::new("usage", "one of --data-dir or --log is required")),
        }
    }

    fn state(&self) -> Result<(State, u64), CliError> {
        let path = self.log_path()?;
        let loaded = read_log(&path).map_err(|e| CliError::new("log", e))?;
        let mut state = State::default();
        for e in &loaded.events {
            if e.seq != state.last_seq + 1 {
                return Err(CliError::new("log", format!("sequence gap at {}", e.seq)));
            }
            state.apply(e).map_err(|e| CliError::new("log", e))?;
        }
        Ok((state, loaded.discarded_bytes))
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub source: LogSource,
    /// Use every accepted response instead of the first two per sentence.
    #[arg(long)]
    pub all_raters: bool,
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutFormat {
    Table,
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Space {
    Original,
    Refined,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Gold labels: a dataset file or `{"id","label"}` lines.
    #[arg(long, required_unless_present = "matrix")]
    pub gold: Option<PathBuf>,
    /// Prediction files; with several, the run with the median F1 is reported.
    #[arg(long = "pred", required_unless_present = "matrix")]
    pub preds: Vec<PathBuf>,
    #[arg(long, default_value = "model")]
    pub model: String,
    #[arg(long, default_value = "train")]
    pub train: String,
    #[arg(long, default_value = "test")]
    pub test: String,
    #[arg(long, default_value = "NO_RELATION")]
    pub negative: String,
    #[arg(long, value_enum, default_value = "refined")]
    pub space: Space,
    /// Comma-separated category names; all standard categories by default.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutFormat,
    /// TOML manifest of runs; prints the train-by-test F1 matrix.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    /// Compare labels verbatim instead of mapping `before` into the refined taxonomy.
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum PatchVerb {
    /// Patch turning the base dataset into its revision under the final labels.
    Emit(PatchEmitArgs),
    /// Apply a patch to a base dataset.
    Apply(PatchApplyArgs),
}

#[derive(Debug, Args)]
pub struct PatchEmitArgs {
    #[command(flatten)]
    pub source: LogSource,
    /// Base dataset; the data directory's dataset.jsonl by default.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchApplyArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub patch: PathBuf,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the exclusion report here.
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub source: LogSource,
    /// Snapshot to check; the data directory's snapshot.json by default.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl CliError {
    pub fn new(error: &'static str, message: impl ToString) -> Self {
        CliError {
            error,
            message: message.to_string(),
            id: None,
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("error serialises")
    }
}

pub type CliResult = Result<String, Vec<CliError>>;

fn one<T>(r: Result<T, CliError>) -> Result<T, Vec<CliError>> {
    r.map_err(|e| vec![e])
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write_or_return(out: Option<&Path>, text: String) -> Result<String, CliError> {
    match out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

pub fn validate(args: &ValidateArgs) -> CliResult {
    let tax = one(args.taxonomy.load())?;
    let text = one(read(&args.dataset))?;
    let records = match DatasetFormat::from(args.format) {
        DatasetFormat::JsonLines => parse_records(&text).map_err(|e| vec![CliError::new("parse", e)])?,
        DatasetFormat::Tacred => {
            // Let the loader do the inclusive-span conversion, then re-check.
            let ds = load_dataset(&args.dataset, DatasetFormat::Tacred).map_err(|e| vec![CliError::new("validation", e)])?;
            ds.instances.iter().map(crowdre_core::model::Record::from_instance).collect()
        }
    };
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    let mut splits: BTreeMap<String, usize> = BTreeMap::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut instances = Vec::new();
    for rec in records {
        let id = rec.id.clone();
        match rec.into_instance(None) {
            Err(e) => errors.push(CliError {
                error: "validation",
                message: format!("{}: {}", e.rule, e.detail),
                id: Some(e.id),
            }),
            Ok(inst) => {
                if !seen.insert(id.clone()) {
                    errors.push(CliError {
                        error: "validation",
                        message: "duplicate_id: id appears more than once".into(),
                        id: Some(id),
                    });
                    continue;
                }
                if let Some(l) = &inst.label {
                    if !tax.is_known(l) {
                        errors.push(CliError {
                            error: "validation",
                            message: format!("unknown_label: {l}"),
                            id: Some(id.clone()),
                        });
                    }
                    *labels.entry(l.to_string()).or_default() += 1;
                }
                if tax.candidates(&inst.type_pair()).is_err() {
                    errors.push(CliError {
                        error: "validation",
                        message: format!("unroutable: type pair {} has no candidate set", inst.type_pair()),
                        id: Some(id.clone()),
                    });
                }
                *splits.entry(inst.split.to_string()).or_default() += 1;
                instances.push(inst);
            }
        }
    }
    let plan = AnnotationPlan::from_taxonomy(&tax, args.max_subset);
    let mut warnings = Vec::new();
    if let Some(p) = &args.controls {
        match crowdre_core::quality::load_control_pool(p, &plan) {
            Ok(pool) => warnings.extend(pool.warnings(&plan)),
            Err(e) => errors.push(CliError::new("controls", e)),
        }
    }
    if let Some(p) = &args.qualification {
        if let Err(e) = crowdre_core::quality::load_qualification_tests(p, &plan) {
            errors.push(CliError::new("qualification", e));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(to_json(&json!({
        "instances": instances.len(),
        "splits": splits,
        "labels": labels,
        "warnings": warnings,
    })))
}

#[derive(Debug, Serialize)]
struct PlanCluster {
    name: String,
    pairs: Vec<String>,
    labels: usize,
    stages: usize,
    subsets: Vec<Vec<Label>>,
}

pub fn plan(args: &PlanArgs) -> CliResult {
    let tax = one(args.taxonomy.load())?;
    let violations = tax.violations();
    if !violations.is_empty() {
        return Err(violations.into_iter().map(|v| CliError::new("taxonomy", v)).collect());
    }
    let clusters = tax.super_clusters(args.max_subset);
    let cost = cost_report(&clusters);
    let rows: Vec<PlanCluster> = clusters
        .iter()
        .map(|c| PlanCluster {
            name: c.name.to_string(),
            pairs: c.member_pairs.iter().map(|p| p.to_string()).collect(),
            labels: c.positives.len(),
            stages: c.stage_count(),
            subsets: c.subsets.clone(),
        })
        .collect();
    let original = tax.original_labels().len();
    let refined = tax.refined_labels().count();
    let pairs = tax.type_pairs().count();
    if args.json {
        return Ok(to_json(&json!({
            "original_labels": original,
            "refined_labels": refined,
            "type_pairs": pairs,
            "max_subset": args.max_subset,
            "clusters": rows,
            "cost": cost,
        })));
    }
    let mut out = format!(
        "taxonomy {}: {original} original labels, {refined} refined labels, {pairs} type pairs\n{} super-clusters (max subset {})\n\n",
        tax.version,
        rows.len(),
        args.max_subset
    );
    out.push_str(&format!("{:<16} {:>5} {:>6} {:>6}\n", "cluster", "pairs", "labels", "stages"));
    for r in &rows {
        out.push_str(&format!("{:<16} {:>5} {:>6} {:>6}\n", r.name, r.pairs.len(), r.labels, r.stages));
    }
    out.push_str(&format!(
        "\nworst case per wrong-typed sentence: naive {} tasks, clustered {} tasks, factor {:.3}\n",
        cost.naive_worst_case_tasks, cost.clustered_worst_case_tasks, cost.reduction_factor
    ));
    Ok(out)
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let mut cfg: SimulationConfig = match &args.config {
        Some(p) => one(toml::from_str(&one(read(p))?).map_err(|e| CliError::new("config", e)))?,
        None => SimulationConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.sentences {
        cfg.sentences = n;
    }
    if args.no_gate {
        cfg.gate.enabled = false;
    }
    if args.cost {
        let c = naive_vs_clustered_cost(
            &Taxonomy::canonical(),
            &CostConfig {
                sentences: args.sentences.unwrap_or(CostConfig::default().sentences),
                wrong_type_fraction: cfg.wrong_type_fraction,
                seed: cfg.seed,
            },
        );
        if args.json {
            return Ok(to_json(&c));
        }
        return Ok(format!(
            "sentences {} (wrong-typed {})\nworst case per sentence: naive {} / clustered {} = {:.3}\n\
             worst-case totals: naive {} (+{:.1}%), clustered {} (+{:.1}%)\n\
             early-stop totals: naive {}, clustered {}\n",
            c.sentences,
            c.wrong_typed,
            c.naive_worst_case_per_sentence,
            c.clustered_worst_case_per_sentence,
            c.worst_case_ratio,
            c.naive_worst_case_tasks,
            c.naive_worst_case_overhead * 100.0,
            c.clustered_worst_case_tasks,
            c.clustered_worst_case_overhead * 100.0,
            c.naive_early_stop_tasks,
            c.clustered_early_stop_tasks,
        ));
    }
    if let Some(dir) = &args.export {
        let synthetic = simulator::generate(&cfg).map_err(|e| vec![CliError::new("config", e)])?;
        let settings = Settings {
            max_subset: cfg.max_subset,
            gate: cfg.gate.clone(),
            price_cents: cfg.price_cents,
        };
        one(campaign::write(dir, &synthetic.campaign(), &synthetic.dataset, &settings).map_err(|e| CliError::new("io", e)))?;
        one(write_or_return(Some(&dir.join(simulator::TRUTH_FILE)), simulator::truth_to_jsonl(&synthetic.truth)))?;
        return Ok(format!("exported {} sentences to {}\n", synthetic.dataset.len(), dir.display()));
    }
    let out = simulator::run(&cfg).map_err(|e| vec![CliError::new("simulation", e)])?;
    if let Some(p) = &args.log {
        let text = crowdre_core::orchestrator::persist::events_to_jsonl(&out.log);
        one(write_or_return(Some(p), text))?;
    }
    if args.json {
        Ok(to_json(&out.report))
    } else {
        Ok(out.report.to_table())
    }
}

pub fn stats(args: &StatsArgs) -> CliResult {
    let (state, _) = one(args.source.state())?;
    let selection = if args.all_raters { RaterSelection::All } else { RaterSelection::FirstTwo };
    let view = stats_view(&state, selection, args.top);
    if args.json {
        return Ok(to_json(&view));
    }
    let a = &view.agreement;
    let mut out = format!(
        "items            {}\nagreement rate   {:.4}\nkappa            {}\n({})\n",
        a.items,
        a.agreement_rate,
        a.kappa.map_or_else(|| "undefined".into(), |k| format!("{k:.4}")),
        a.agreement_definition
    );
    if !view.difficulty.is_empty() {
        out.push_str("\nhardest sentences\n");
        for r in &view.difficulty {
            out.push_str(&format!("  {:<20} {:.3}\n", r.id, r.difficulty));
        }
    }
    Ok(out)
}

/// Gold or predicted labels from `{"id","label"}` lines or dataset records.
fn read_labels(path: &Path) -> Result<Labels, CliError> {
    let text = read(path)?;
    if let Ok(labels) = parse_predictions(&text) {
        return Ok(labels);
    }
    let ds = load_dataset(path, DatasetFormat::JsonLines).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))?;
    ds.instances
        .into_iter()
        .map(|i| match i.label {
            Some(l) => Ok((i.id, l)),
            None => Err(CliError {
                error: "parse",
                message: format!("{}: instance has no label", path.display()),
                id: Some(i.id),
            }),
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default = "default_negative")]
    negative: String,
    #[serde(rename = "run")]
    runs: Vec<ManifestRun>,
}

fn default_negative() -> String {
    "NO_RELATION".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRun {
    model: String,
    train: String,
    test: String,
    gold: PathBuf,
    predictions: Vec<PathBuf>,
}

fn median_report(
    gold: &Labels,
    preds: &[Labels],
    req: &ScoreRequest<'_>,
) -> Result<(ScoreReport, Vec<f64>), CliError> {
    let reports = preds
        .iter()
        .map(|p| score::<f64>(gold, p, req))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::new("score", e))?;
    let overall: Vec<_> = reports.iter().map(|r| r.overall.clone()).collect();
    let i = select_median(&overall).map_err(|e| CliError::new("score", e))?;
    let f1s = overall.iter().map(|p| p.f1).collect();
    Ok((reports[i].clone(), f1s))
}

pub fn score_cmd(args: &ScoreArgs) -> CliResult {
    let tax = one(args.taxonomy.load())?;
    let space = match args.space {
        Space::Original => LabelSpace::Original,
        Space::Refined => LabelSpace::Refined,
    };
    let all = standard_categories(&tax, space);
    let categories = if args.categories.is_empty() {
        all
    } else {
        one(select_categories(&all, &args.categories).map_err(|e| CliError::new("score", e)))?
    };
    if let Some(m) = &args.matrix {
        let manifest: Manifest = one(toml::from_str(&one(read(m))?).map_err(|e| CliError::new("manifest", e)))?;
        let base = m.parent().unwrap_or(Path::new("."));
        let negative = Label::new(&manifest.negative);
        let mut reports = Vec::new();
        for run in &manifest.runs {
            let gold = one(read_labels(&base.join(&run.gold)))?;
            let preds = one(run.predictions.iter().map(|p| read_labels(&base.join(p))).collect::<Result<Vec<_>, _>>())?;
            let req = ScoreRequest {
                model: &run.model,
                train: &run.train,
                test: &run.test,
                negative: &negative,
                categories: &categories,
            };
            reports.push(one(median_report(&gold, &preds, &req))?.0);
        }
        return Ok(cross_matrix(&reports));
    }
    let gold = one(read_labels(args.gold.as_deref().expect("clap requires --gold")))?;
    let preds = one(args.preds.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>, _>>())?;
    for labels in std::iter::once(&gold).chain(&preds) {
        if args.categories.is_empty() && matches!(space, LabelSpace::Refined) {
            one(check_labels(labels, &tax).map_err(|e| CliError::new("score", e)))?;
        }
    }
    let negative = Label::new(&args.negative);
    let req = ScoreRequest {
        model: &args.model,
        train: &args.train,
        test: &args.test,
        negative: &negative,
        categories: &categories,
    };
    let (report, f1s) = one(median_report(&gold, &preds, &req))?;
    Ok(match args.format {
        OutFormat::Json => to_json(&json!({ "report": report, "run_f1": f1s })),
        OutFormat::Tsv => report_tsv(&report),
        OutFormat::Table => {
            let mut t = report_table(&report);
            if f1s.len() > 1 {
                t.push_str(&format!("median of {} runs\n", f1s.len()));
            }
            t
        }
    })
}

pub fn diff_cmd(args: &DiffArgs) -> CliResult {
    let tax = one(args.taxonomy.load())?;
    let before = one(read_labels(&args.before))?;
    let after = one(read_labels(&args.after))?;
    let report = one(
        diff::<f64>(&before, &after, if args.no_refine { None } else { Some(&tax) }).map_err(|e| CliError::new("diff", e)),
    )?;
    if args.json {
        return Ok(to_json(&report));
    }
    let pct = |x: f64| format!("{:.1}%", x * 100.0);
    Ok(format!(
        "shared ids     {}\nchanged        {} ({})\n  neg->pos     {} ({})\n  pos->neg     {} ({})\n  pos->pos     {} ({})\nonly before    {}\nonly after     {}\n",
        report.total,
        report.changed,
        pct(report.changed_fraction),
        report.neg_to_pos,
        pct(report.neg_to_pos_fraction),
        report.pos_to_neg,
        pct(report.pos_to_neg_fraction),
        report.pos_to_pos,
        pct(report.pos_to_pos_fraction),
        report.only_before.len(),
        report.only_after.len(),
    ))
}

pub fn patch(verb: &PatchVerb) -> CliResult {
    match verb {
        PatchVerb::Emit(a) => {
            let tax = match (&a.taxonomy.taxonomy, &a.source.data_dir) {
                (None, Some(d)) if d.join(campaign::TAXONOMY).exists() => {
                    one(Taxonomy::load(&d.join(campaign::TAXONOMY)).map_err(|e| CliError::new("taxonomy", e)))?
                }
                _ => one(a.taxonomy.load())?,
            };
            let base_path = match (&a.base, &a.source.data_dir) {
                (Some(b), _) => b.clone(),
                (None, Some(d)) => d.join(campaign::DATASET),
                (None, None) => return Err(vec![CliError::new("usage", "--base is required with --log")]),
            };
            let base = one(load_dataset(&base_path, DatasetFormat::JsonLines).map_err(|e| CliError::new("dataset", e)))?;
            let (state, _) = one(a.source.state())?;
            let text = one(patch_jsonl(&state, &base, &tax).map_err(|e| CliError::new("patch", e)))?;
            one(write_or_return(a.out.as_deref(), text))
        }
        PatchVerb::Apply(a) => {
            let tax = one(a.taxonomy.load())?;
            let base = one(load_dataset(&a.base, DatasetFormat::JsonLines).map_err(|e| CliError::new("dataset", e)))?;
            let patch = one(RevisionPatch::parse(&one(read(&a.patch))?).map_err(|e| CliError::new("patch", e)))?;
            let revised: Dataset = one(apply_patch(&base, &patch, &tax).map_err(|e| CliError::new("patch", e)))?;
            if let Some(p) = &a.exclusions {
                one(write_or_return(Some(p), exclusions_to_jsonl(&revised.exclusions)))?;
            }
            one(write_or_return(a.out.as_deref(), dataset_to_jsonl(&revised)))
        }
    }
}

pub fn replay(args: &ReplayArgs) -> CliResult {
    let (state, discarded) = one(args.source.state())?;
    let mut report = json!({
        "events": state.last_seq,
        "digest": DigestView::new(&state),
        "discarded_bytes": discarded,
    });
    if let Some(dir) = &args.source.data_dir {
        let loaded = one(campaign::load(dir).map_err(|e| CliError::new("campaign", e)))?;
        let events = one(read_log(&dir.join(campaign::LOG)).map_err(|e| CliError::new("log", e)))?.events;
        let orch = one(
            Orchestrator::replay(loaded.campaign, OrchestratorConfig::default(), &events).map_err(|e| CliError::new("replay", e)),
        )?;
        if orch.state().to_json() != state.to_json() {
            return Err(vec![CliError::new("replay", "campaign replay disagrees with plain event application")]);
        }
        report["campaign_replay"] = json!("ok");
    }
    let snap_path = args
        .snapshot
        .clone()
        .or_else(|| args.source.data_dir.as_ref().map(|d| d.join(campaign::SNAPSHOT)));
    if let Some(p) = snap_path {
        if let Some(snap) = one(read_snapshot(&p).map_err(|e| CliError::new("snapshot", e)))? {
            let seq = snap.last_seq();
            let (mut from_log, _) = one(args.source.state())?;
            // Compare against the log truncated to the snapshot's sequence.
            if seq < from_log.last_seq {
                let path = one(args.source.log_path())?;
                let events = one(read_log(&path).map_err(|e| CliError::new("log", e)))?.events;
                from_log = State::default();
                for e in events.iter().take_while(|e| e.seq <= seq) {
                    one(from_log.apply(e).map_err(|e| CliError::new("log", e)))?;
                }
            }
            if from_log.to_json() != snap.state.to_json() {
                return Err(vec![CliError::new("snapshot", format!("snapshot at seq {seq} disagrees with the log"))]);
            }
            report["snapshot"] = json!({ "seq": seq, "matches": true });
        }
    }
    Ok(to_json(&report))
}

pub fn run(cli: Cli) -> Result<String, Vec<CliError>> {
    match cli.verb {
        Verb::Validate(a) => validate(&a),
        Verb::Plan(a) => plan(&a),
        Verb::Simulate(a) => simulate(&a),
        Verb::Stats(a) => stats(&a),
        Verb::Score(a) => score_cmd(&a),
        Verb::Diff(a) => diff_cmd(&a),
        Verb::Patch(v) => patch(&v),
        Verb::Replay(a) => replay(&a),
        Verb::Serve(a) => {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| vec![CliError::new("runtime", e)])?;
            rt.block_on(crate::server::serve(a.config()))
                .map(|()| String::new())
                .map_err(|e| vec![CliError::new("serve", e)])
        }
    }
}

/// Truth labels keyed by sentence id, as exported by `simulate --export`.
pub fn read_truth(path: &Path) -> Result<BTreeMap<String, Truth>, CliError> {
    simulator::parse_truth(&read(path)?).map_err(|e| CliError::new("truth", e))
}
