//! Reference computations written independently of the library, shared by
//! the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::IndexedRandom;
use rand::Rng;

use crowdre_core::model::{Dataset, EntityType, Exclusion, Instance, Span, Split};
use crowdre_core::orchestrator::{EventKind, Orchestrator, Resolution, ResponseStatus, Slot, State};
use crowdre_core::simulator::{generate, SimulationConfig, SimulationOutcome};
use crowdre_core::{Label, Taxonomy};

// ---- Fleiss' kappa ----

/// One list of category indices per item.
pub type Ratings = Vec<Vec<usize>>;

pub fn random_ratings<R: Rng>(rng: &mut R) -> (usize, Ratings) {
    let k = rng.random_range(2..=5);
    let items = rng.random_range(1..=12);
    let uniform = rng.random_bool(0.5);
    let n_fixed = rng.random_range(2..=6);
    // Skewed category weights make degenerate and near-degenerate cases common.
    let skew = rng.random_range(0.0..1.0);
    let ratings = (0..items)
        .map(|_| {
            let n = if uniform { n_fixed } else { rng.random_range(2..=6) };
            (0..n)
                .map(|_| if rng.random_bool(skew) { 0 } else { rng.random_range(0..k) })
                .collect()
        })
        .collect();
    (k, ratings)
}

/// Kappa by enumerating ordered rater pairs, or `None` when chance agreement
/// is one.
pub fn brute_kappa(k: usize, ratings: &Ratings) -> Option<BigRational> {
    let r = |n: usize| BigRational::from_integer(BigInt::from(n));
    let mut observed = BigRational::zero();
    for item in ratings {
        let mut same = 0;
        let mut pairs = 0;
        for (a, x) in item.iter().enumerate() {
            for (b, y) in item.iter().enumerate() {
                if a != b {
                    pairs += 1;
                    same += usize::from(x == y);
                }
            }
        }
        observed += r(same) / r(pairs);
    }
    observed /= r(ratings.len());
    let all: Vec<usize> = ratings.iter().flatten().copied().collect();
    let mut chance = BigRational::zero();
    for j in 0..k {
        let p = r(all.iter().filter(|&&c| c == j).count()) / r(all.len());
        chance += p.clone() * p;
    }
    if chance.is_one() {
        return None;
    }
    Some((observed - chance.clone()) / (BigRational::one() - chance))
}

pub fn brute_kappa_f64(k: usize, ratings: &Ratings) -> Option<f64> {
    let mut observed = 0.0;
    for item in ratings {
        let n = item.len() as f64;
        let same = item
            .iter()
            .enumerate()
            .flat_map(|(a, x)| item.iter().enumerate().map(move |(b, y)| (a != b && x == y) as u32))
            .sum::<u32>();
        observed += f64::from(same) / (n * (n - 1.0));
    }
    observed /= ratings.len() as f64;
    let all: Vec<usize> = ratings.iter().flatten().copied().collect();
    let chance: f64 = (0..k)
        .map(|j| {
            let p = all.iter().filter(|&&c| c == j).count() as f64 / all.len() as f64;
            p * p
        })
        .sum();
    let exact_one = all.iter().all(|&c| c == all[0]);
    if exact_one {
        return None;
    }
    Some((observed - chance) / (1.0 - chance))
}

pub fn as_count_rows(k: usize, ratings: &Ratings) -> Vec<(String, Vec<u64>)> {
    ratings
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut row = vec![0u64; k];
            for &c in item {
                row[c] += 1;
            }
            (format!("i{i}"), row)
        })
        .collect()
}

pub fn category_labels(k: usize) -> Vec<Label> {
    (0..k).map(|j| Label::new(&format!("C{j}"))).collect()
}

// ---- Scoring ----

pub const NEG: &str = "NO_RELATION";

pub struct ScoringFixture {
    pub gold: BTreeMap<String, Label>,
    pub a: BTreeMap<String, Label>,
    pub b: BTreeMap<String, Label>,
}

pub fn random_scoring_fixture<R: Rng>(rng: &mut R) -> ScoringFixture {
    let names = [NEG, "R:A", "R:B", "R:C", "R:D"];
    let n = rng.random_range(1..=40);
    let pick = |rng: &mut R| Label::new(if rng.random_bool(0.4) { NEG } else { names[1..].choose(rng).unwrap() });
    let mut gold = BTreeMap::new();
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for i in 0..n {
        let id = format!("x{i:03}");
        let g = pick(rng);
        let pa = if rng.random_bool(0.5) { g.clone() } else { pick(rng) };
        let pb = if rng.random_bool(0.6) { g.clone() } else { pick(rng) };
        gold.insert(id.clone(), g);
        a.insert(id.clone(), pa);
        b.insert(id, pb);
    }
    ScoringFixture { gold, a, b }
}

/// (tp, predicted, gold) from a confusion table restricted to instances whose
/// gold or predicted label is in `member`.
pub fn brute_counts(
    gold: &BTreeMap<String, Label>,
    pred: &BTreeMap<String, Label>,
    member: &dyn Fn(&Label) -> bool,
) -> (u64, u64, u64) {
    let mut table: BTreeMap<(Label, Label), u64> = BTreeMap::new();
    for (id, g) in gold {
        let p = &pred[id];
        if member(g) || member(p) {
            *table.entry((g.clone(), p.clone())).or_default() += 1;
        }
    }
    let tp = table.iter().filter(|((g, p), _)| g == p && member(p)).map(|(_, n)| n).sum();
    let predicted = table.iter().filter(|((_, p), _)| member(p)).map(|(_, n)| n).sum();
    let golds = table.iter().filter(|((g, _), _)| member(g)).map(|(_, n)| n).sum();
    (tp, predicted, golds)
}

pub fn brute_prf(tp: u64, predicted: u64, gold: u64) -> (f64, f64, f64) {
    let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Ids `a` gets wrong and `b` gets right.
pub fn corrected_ids(f: &ScoringFixture) -> BTreeSet<String> {
    f.gold
        .iter()
        .filter(|(id, g)| f.a[*id] != **g && f.b[*id] == **g)
        .map(|(id, _)| id.clone())
        .collect()
}

pub fn rename(labels: &BTreeMap<String, Label>, from: &str, to: &str) -> BTreeMap<String, Label> {
    labels
        .iter()
        .map(|(id, l)| (id.clone(), if l.as_str() == from { Label::new(to) } else { l.clone() }))
        .collect()
}

// ---- Revision patches ----

pub struct PatchFixture {
    pub base: Dataset,
    pub assignments: BTreeMap<String, Label>,
    pub exclusions: Vec<Exclusion>,
}

pub fn random_patch_fixture<R: Rng>(rng: &mut R, tax: &Taxonomy) -> PatchFixture {
    let originals: Vec<Label> = tax.original_labels().iter().cloned().collect();
    let refined: Vec<Label> = tax.refined_labels().cloned().collect();
    let n = rng.random_range(1..=30);
    let mut instances = Vec::new();
    let mut assignments = BTreeMap::new();
    let mut exclusions = Vec::new();
    for i in 0..n {
        let id = format!("r{i:03}");
        let label = if rng.random_bool(0.1) { None } else { Some(originals.choose(rng).unwrap().clone()) };
        instances.push(Instance {
            id: id.clone(),
            tokens: vec![format!("A{i}"), "met".into(), format!("B{i}"), ".".into()],
            subj_span: Span::new(0, 1),
            obj_span: Span::new(2, 3),
            subj_type: EntityType::Person,
            obj_type: EntityType::Organization,
            label,
            split: [Split::Train, Split::Dev, Split::Test][i % 3],
        });
        match rng.random_range(0..4) {
            0 => exclusions.push(Exclusion {
                id,
                reason: ["wrong_type_exhausted", "unresolvable", "non_english"][i % 3].into(),
            }),
            1 | 2 => {
                assignments.insert(id, refined.choose(rng).unwrap().clone());
            }
            _ => {}
        }
    }
    PatchFixture {
        base: Dataset::new(instances).expect("valid fixture"),
        assignments,
        exclusions,
    }
}

/// The revised label of every kept id, or the exclusion reason of removed ones.
pub fn expected_revision(f: &PatchFixture, tax: &Taxonomy) -> BTreeMap<String, Result<Option<Label>, String>> {
    f.base
        .instances
        .iter()
        .map(|inst| {
            let v = if let Some(e) = f.exclusions.iter().find(|e| e.id == inst.id) {
                Err(e.reason.clone())
            } else if let Some(l) = f.assignments.get(&inst.id) {
                Ok(Some(l.clone()))
            } else {
                Ok(inst.label.as_ref().map(|l| tax.to_refined(l).unwrap()))
            };
            (inst.id.clone(), v)
        })
        .collect()
}

// ---- Orchestrator runs ----

fn agreeing(labels: &[&Label], target: &Label) -> usize {
    labels.iter().filter(|l| **l == target).count()
}

/// Checks one simulation run against the orchestration invariants.
pub fn check_run(config: &SimulationConfig, out: &SimulationOutcome) -> Result<(), String> {
    let synthetic = generate(config).map_err(|e| e.to_string())?;
    let wrong = Label::wrong_type();
    for s in out.state.sentences.values() {
        let id = s.id();
        let cluster = &synthetic.plan.clusters[&s.cluster];
        let bound = cluster.positives.len().div_ceil(9).max(1);
        if s.stages_used() > bound {
            return Err(format!("{id}: {} stages used, bound {bound}", s.stages_used()));
        }
        let mut stages: Vec<Vec<&Label>> = s
            .history
            .iter()
            .map(|h| {
                h.responses
                    .iter()
                    .filter(|r| r.status == ResponseStatus::Accepted)
                    .map(|r| &r.label)
                    .collect()
            })
            .collect();
        for (i, archived) in stages.iter().enumerate() {
            if agreeing(archived, &wrong) < 2 {
                return Err(format!("{id}: stage {i} left without two WRONG_TYPE answers"));
            }
        }
        stages.push(s.accepted().map(|r| &r.label).collect());
        if let Some(over) = stages.iter().find(|st| st.len() > 5) {
            return Err(format!("{id}: {} accepted responses in one stage", over.len()));
        }
        let current = stages.last().unwrap();
        match &s.resolution {
            Resolution::Resolved(l) => {
                if agreeing(current, l) < 2 || *l == wrong {
                    return Err(format!("{id}: resolved to {l} without two agreeing responses"));
                }
            }
            Resolution::WrongTypeExhausted => {
                if agreeing(current, &wrong) < 2 || s.stages_used() != bound {
                    return Err(format!("{id}: exhausted without agreement on the last stage"));
                }
            }
            Resolution::Unresolvable | Resolution::Unresolved => {}
        }
    }

    let replayed = Orchestrator::replay(synthetic.campaign(), config.orchestrator_config(), &out.log)
        .map_err(|e| format!("replay failed: {e}"))?;
    if replayed.state().to_json() != out.state.to_json() {
        return Err("replayed state differs from live state".into());
    }

    // Controls: responses only ever come from sentence slots, and dropping
    // every control event leaves all sentence states unchanged.
    let mut current_hit: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &out.log {
        match &e.kind {
            EventKind::HitIssued { annotator, hit } => {
                let ids = hit
                    .slots
                    .iter()
                    .filter_map(|slot| match slot {
                        Slot::Sentence(id) => Some(id.clone()),
                        Slot::Control(_) => None,
                    })
                    .collect();
                current_hit.insert(annotator.clone(), ids);
            }
            EventKind::ResponseAccepted { sentence, annotator, .. } => {
                if !current_hit.get(annotator).is_some_and(|ids| ids.contains(sentence)) {
                    return Err(format!("response on {sentence} by {annotator} outside a sentence slot"));
                }
            }
            EventKind::ControlRecorded { control, .. } if out.state.sentences.contains_key(control) => {
                return Err(format!("control {control} is also a sentence"));
            }
            _ => {}
        }
    }
    let mut without = State::default();
    let mut seq = 0;
    for e in &out.log {
        if matches!(e.kind, EventKind::ControlRecorded { .. }) {
            continue;
        }
        seq += 1;
        let mut e = e.clone();
        e.seq = seq;
        e.ts = seq;
        without.apply(&e).map_err(|err| format!("apply without controls: {err}"))?;
    }
    let sentences = |s: &State| serde_json::to_string(&s.sentences).unwrap();
    if sentences(&without) != sentences(&out.state) {
        return Err("control events changed sentence state".into());
    }
    Ok(())
}
