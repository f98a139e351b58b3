//! Acceptance suite: one PASS/FAIL line per criterion, each with a pinned
//! tolerance and a wall-clock limit. Run with `cargo test --test acceptance`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use crowdre_core::analytics::{apply_patch, emit_patch, fleiss_kappa, revise, AnalyticsError, RatingMatrix, RevisionPatch};
use crowdre_core::campaign;
use crowdre_core::model::dataset_to_jsonl;
use crowdre_core::scorer::{category_prf, error_taxonomy, micro_prf, Category, ErrorClass, Labels};
use crowdre_core::simulator::{
    naive_vs_clustered_cost, run, CostConfig, ErrorKernel, LabelSource, PopulationShare, SimulationConfig, WorkerKind,
};
use crowdre_core::taxonomy::{cost_report, DEFAULT_MAX_SUBSET};
use crowdre_core::{Exact, Label, Taxonomy};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{export, small_config, Driver, Remote};

const KAPPA_TOL: f64 = 1e-12;
const PRF_TOL: f64 = 1e-12;
const SPAMMER_CONTROL_LIMIT: u64 = 50;
const GATED_ACCURACY_FLOOR: f64 = 0.90;
const NAIVE_OVERHEAD_TARGET: f64 = 1.30;
const NAIVE_OVERHEAD_TOL: f64 = 0.10;
const KILLS: usize = 10;
const KILL_DELAY_US: u64 = 6000;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ratio(n: i64, d: i64) -> Exact {
    Exact::new(BigInt::from(n), BigInt::from(d))
}

fn structural_constants() -> Result<String, String> {
    let tax = Taxonomy::canonical();
    let original = tax.original_labels().len();
    let refined = tax.refined_labels().count();
    let pairs: BTreeSet<_> = tax.type_pairs().copied().collect();
    ensure(original == 42, || format!("{original} original labels"))?;
    ensure(refined == 40, || format!("{refined} refined labels"))?;
    ensure(pairs.len() == 27, || format!("{} type pairs", pairs.len()))?;
    let clusters = tax.super_clusters(DEFAULT_MAX_SUBSET);
    ensure(clusters.len() == 8, || format!("{} super-clusters", clusters.len()))?;
    let mut covered = BTreeSet::new();
    for c in &clusters {
        for p in &c.member_pairs {
            ensure(covered.insert(*p), || format!("pair {p} in two clusters"))?;
            ensure(tax.candidates(p).unwrap().iter().filter(|l| l.is_positive()).all(|l| c.positives.contains(l)), || {
                format!("{} misses candidates of {p}", c.name)
            })?;
        }
        let mut seen = BTreeSet::new();
        for s in &c.subsets {
            ensure(!s.is_empty() && s.len() <= DEFAULT_MAX_SUBSET, || format!("{}: subset of {}", c.name, s.len()))?;
            for l in s {
                ensure(seen.insert(l.clone()), || format!("{}: {l} in two subsets", c.name))?;
            }
        }
        ensure(seen == c.positives, || format!("{}: subsets do not cover the merged set", c.name))?;
    }
    ensure(covered == pairs, || "clusters do not cover every type pair".into())?;
    let max_subset = clusters.iter().flat_map(|c| c.subsets.iter().map(Vec::len)).max().unwrap_or(0);
    ensure(max_subset <= 9, || format!("largest subset {max_subset}"))?;
    let factor = cost_report(&clusters).exact_reduction_factor::<Exact>();
    ensure(factor == ratio(27, 8), || format!("factor {factor}"))?;
    Ok(format!("42/40 labels, 27 pairs, 8 clusters, largest subset {max_subset}, factor {factor}"))
}

fn counts(rows: &[&[u64]]) -> Vec<(String, Vec<u64>)> {
    rows.iter().enumerate().map(|(i, r)| (format!("i{i}"), r.to_vec())).collect()
}

fn kappa_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut max_err = 0.0f64;
    let mut degenerate = 0;
    for n in 0..1000 {
        let (k, ratings) = oracles::random_ratings(&mut rng);
        let m = RatingMatrix::new(oracles::category_labels(k), oracles::as_count_rows(k, &ratings)).map_err(|e| e.to_string())?;
        match (oracles::brute_kappa(k, &ratings), oracles::brute_kappa_f64(k, &ratings)) {
            (Some(exact), Some(float)) => {
                ensure(fleiss_kappa::<Exact>(&m).ok() == Some(exact.clone()), || format!("matrix {n}: exact mismatch"))?;
                let got = fleiss_kappa::<f64>(&m).map_err(|e| e.to_string())?;
                max_err = max_err.max((got - float).abs());
                ensure((got - float).abs() <= KAPPA_TOL, || format!("matrix {n}: {got} vs {float}"))?;
            }
            (None, None) => {
                degenerate += 1;
                ensure(fleiss_kappa::<f64>(&m) == Err(AnalyticsError::UndefinedKappa), || format!("matrix {n}: no error"))?;
            }
            _ => return Err(format!("matrix {n}: oracles disagree on degeneracy")),
        }
    }
    let cats = oracles::category_labels(2);
    let third = RatingMatrix::new(cats.clone(), counts(&[&[2, 0], &[0, 2], &[1, 1]])).unwrap();
    ensure(fleiss_kappa::<Exact>(&third) == Ok(ratio(1, 3)), || "hand case 1/3".into())?;
    let minus = RatingMatrix::new(cats.clone(), counts(&[&[1, 1], &[1, 1]])).unwrap();
    ensure(fleiss_kappa::<Exact>(&minus) == Ok(ratio(-1, 1)), || "hand case -1".into())?;
    let flat = RatingMatrix::new(cats, counts(&[&[3, 0], &[3, 0]])).unwrap();
    ensure(fleiss_kappa::<f64>(&flat) == Err(AnalyticsError::UndefinedKappa), || "P_e = 1 accepted".into())?;
    Ok(format!("1000 matrices ({degenerate} degenerate), max |err| {max_err:.1e}, hand cases exact"))
}

fn labels(pairs: &[(&str, &str)]) -> Labels {
    pairs.iter().map(|(id, l)| (id.to_string(), Label::new(l))).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PRF_TOL
}

fn scorer_oracle() -> Result<String, String> {
    let neg = Label::no_relation();
    // Hand fixture: one true positive, one false positive, one miss.
    let gold = labels(&[("a", "per:title"), ("b", "per:title"), ("c", "no_relation"), ("d", "no_relation")]);
    let pred = labels(&[("a", "per:title"), ("b", "no_relation"), ("c", "per:title"), ("d", "no_relation")]);
    let p = micro_prf::<Exact>(&gold, &pred, &neg).map_err(|e| e.to_string())?;
    let half = ratio(1, 2);
    ensure(p.precision == half && p.recall == half && p.f1 == half, || format!("micro {p:?}"))?;

    let gold = labels(&[("a", "R:A"), ("b", "R:B"), ("c", "R:C"), ("d", "no_relation"), ("e", "R:A"), ("f", "no_relation")]);
    let pa = labels(&[("a", "no_relation"), ("b", "no_relation"), ("c", "R:A"), ("d", "R:B"), ("e", "R:A"), ("f", "no_relation")]);
    let pb = labels(&[("a", "R:A"), ("b", "R:B"), ("c", "R:C"), ("d", "no_relation"), ("e", "R:B"), ("f", "no_relation")]);
    let cat = Category {
        name: "R:A+B".into(),
        labels: [Label::new("R:A"), Label::new("R:B")].into_iter().collect(),
    };
    // Members by gold or prediction: a, b, c, d, e. tp = e; predicted = c, d, e; gold = a, b, e.
    let c = category_prf::<Exact>(&gold, &pa, &cat).map_err(|e| e.to_string())?;
    ensure((c.true_positives, c.predicted, c.gold) == (1, 3, 3), || format!("category counts {c:?}"))?;
    ensure(c.f1 == ratio(1, 3), || format!("category f1 {}", c.f1))?;
    let t = error_taxonomy::<Exact>(&gold, &pa, &pb, &neg).map_err(|e| e.to_string())?;
    let want: BTreeMap<ErrorClass, Vec<String>> = [
        (ErrorClass::NegToPos, vec!["a".to_string(), "b".to_string()]),
        (ErrorClass::PosToNeg, vec!["d".to_string()]),
        (ErrorClass::PosToPos, vec!["c".to_string()]),
    ]
    .into_iter()
    .collect();
    ensure(t.ids == want && t.corrected == 4, || format!("error classes {:?}", t.ids))?;
    ensure(t.fractions[&ErrorClass::NegToPos] == half, || "neg_to_pos fraction".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    for n in 0..100 {
        let f = oracles::random_scoring_fixture(&mut rng);
        let got = micro_prf::<f64>(&f.gold, &f.a, &neg).map_err(|e| e.to_string())?;
        let (tp, pr, g) = oracles::brute_counts(&f.gold, &f.a, &|l: &Label| l.as_str() != oracles::NEG);
        let (bp, br, bf) = oracles::brute_prf(tp, pr, g);
        ensure(close(got.precision, bp) && close(got.recall, br) && close(got.f1, bf), || format!("fixture {n}: micro"))?;
        let t = error_taxonomy::<Exact>(&f.gold, &f.a, &f.b, &neg).map_err(|e| e.to_string())?;
        let mut union = BTreeSet::new();
        for ids in t.ids.values() {
            for id in ids {
                ensure(union.insert(id.clone()), || format!("fixture {n}: {id} in two classes"))?;
            }
        }
        ensure(union == oracles::corrected_ids(&f), || format!("fixture {n}: classes do not cover the corrected set"))?;
    }
    Ok("hand fixtures exact (0.5/0.5/0.5), 100 random partitions".into())
}

fn mixed(seed: u64) -> SimulationConfig {
    let labels = match seed % 3 {
        0 => LabelSource::Canonical,
        1 => LabelSource::Cluster {
            name: "per2locmulti".into(),
        },
        _ => LabelSource::Synthetic { labels: 14 },
    };
    let kernel = if seed.is_multiple_of(2) { ErrorKernel::Uniform } else { ErrorKernel::NegativeBiased };
    let mut cfg = SimulationConfig {
        sentences: 120,
        seed: 100 + seed,
        labels,
        wrong_type_fraction: 0.1,
        workers: 12,
        population: vec![
            PopulationShare {
                fraction: 0.5,
                worker: WorkerKind::Calibrated { accuracy: 0.85, kernel },
            },
            PopulationShare {
                fraction: 0.25,
                worker: WorkerKind::Perfectionist,
            },
            PopulationShare {
                fraction: 0.25,
                worker: WorkerKind::Spammer,
            },
        ],
        control_pool_size: 40,
        ..SimulationConfig::default()
    };
    cfg.gate.enabled = seed % 4 != 3;
    cfg
}

fn orchestrator_properties() -> Result<String, String> {
    let mut events = 0;
    let mut max_stages = 0;
    for seed in 0..20 {
        let cfg = mixed(seed);
        let out = run(&cfg).map_err(|e| e.to_string())?;
        oracles::check_run(&cfg, &out).map_err(|e| format!("seed {}: {e}", cfg.seed))?;
        events += out.log.len();
        max_stages = max_stages.max(out.report.max_stages_used);
    }
    Ok(format!("20 seeded runs, {events} events, max stages used {max_stages}"))
}

fn gate_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        sentences: 200,
        seed,
        labels: LabelSource::Cluster {
            name: "per2locmulti".into(),
        },
        ..SimulationConfig::default()
    }
}

fn gate_efficacy() -> Result<String, String> {
    let mut worst_gated = 1.0f64;
    let mut max_controls = 0;
    let mut margins = Vec::new();
    for seed in 0..10 {
        let mut cfg = gate_config(seed);
        let gated = run(&cfg).map_err(|e| e.to_string())?.report;
        cfg.gate.enabled = false;
        let open = run(&cfg).map_err(|e| e.to_string())?.report;
        ensure(gated.spammers > 0 && gated.spammers_suspended == gated.spammers, || {
            format!("seed {seed}: {}/{} spammers suspended", gated.spammers_suspended, gated.spammers)
        })?;
        for s in gated.suspensions.iter().filter(|s| s.spammer) {
            max_controls = max_controls.max(s.controls_seen);
            ensure(s.controls_seen <= SPAMMER_CONTROL_LIMIT, || format!("seed {seed}: {} after {} controls", s.worker, s.controls_seen))?;
        }
        ensure(gated.accuracy >= GATED_ACCURACY_FLOOR, || format!("seed {seed}: gated accuracy {:.4}", gated.accuracy))?;
        ensure(open.accuracy < gated.accuracy, || format!("seed {seed}: {:.4} ungated vs {:.4} gated", open.accuracy, gated.accuracy))?;
        worst_gated = worst_gated.min(gated.accuracy);
        margins.push(gated.accuracy - open.accuracy);
    }
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "10 seeds: gated accuracy >= {worst_gated:.4}, smallest gain {min_margin:.4}, spammers out within {max_controls} controls"
    ))
}

fn cost() -> Result<String, String> {
    let tax = Taxonomy::canonical();
    let cfg = CostConfig {
        sentences: 20_000,
        wrong_type_fraction: 0.05,
        seed: 7,
    };
    let c = naive_vs_clustered_cost(&tax, &cfg);
    let pairs = tax.type_pairs().count() as u64;
    let clusters = tax.super_clusters(DEFAULT_MAX_SUBSET).len() as u64;
    ensure(
        c.naive_worst_case_per_sentence == pairs && c.clustered_worst_case_per_sentence == clusters,
        || format!("per-sentence worst case {} / {}", c.naive_worst_case_per_sentence, c.clustered_worst_case_per_sentence),
    )?;
    ensure(
        Exact::new(BigInt::from(c.naive_worst_case_per_sentence), BigInt::from(c.clustered_worst_case_per_sentence)) == ratio(27, 8),
        || format!("ratio {}", c.worst_case_ratio),
    )?;
    let n = c.sentences as u64;
    let w = c.wrong_typed as u64;
    let rate = w as f64 / n as f64;
    ensure((rate - 0.05).abs() < 0.01, || format!("realized wrong-type rate {rate}"))?;
    ensure(c.naive_worst_case_tasks == n + w * (pairs - 1), || "naive task count".into())?;
    ensure(c.clustered_worst_case_tasks == n + w * (clusters - 1), || "clustered task count".into())?;
    let overhead = (c.naive_worst_case_tasks - n) as f64 / n as f64;
    ensure((overhead - c.naive_worst_case_overhead).abs() < 1e-12, || "reported overhead".into())?;
    ensure((overhead - NAIVE_OVERHEAD_TARGET).abs() <= NAIVE_OVERHEAD_TOL, || format!("naive overhead {:+.1}%", overhead * 100.0))?;
    Ok(format!(
        "factor 27/8, {w} of {n} wrong-typed, naive overhead {:+.1}%, clustered {:+.1}%",
        overhead * 100.0,
        c.clustered_worst_case_overhead * 100.0
    ))
}

fn patch_round_trip() -> Result<String, String> {
    let tax = Taxonomy::canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut entries = 0;
    for n in 0..100 {
        let f = oracles::random_patch_fixture(&mut rng, &tax);
        let patch = emit_patch(&f.base, &f.assignments, &f.exclusions, &tax).map_err(|e| e.to_string())?;
        entries += patch.entries.len();
        let reparsed = RevisionPatch::parse(&patch.to_jsonl()).map_err(|e| e.to_string())?;
        let applied = apply_patch(&f.base, &reparsed, &tax).map_err(|e| e.to_string())?;
        let direct = revise(&f.base, &f.assignments, &f.exclusions, &tax).map_err(|e| e.to_string())?;
        ensure(dataset_to_jsonl(&applied) == dataset_to_jsonl(&direct), || format!("fixture {n}: bytes differ"))?;
        ensure(applied.exclusions == direct.exclusions, || format!("fixture {n}: exclusions differ"))?;
        for (id, want) in oracles::expected_revision(&f, &tax) {
            let ok = match want {
                Err(reason) => applied.get(&id).is_none() && applied.exclusions.iter().any(|e| e.id == id && e.reason == reason),
                Ok(label) => applied.get(&id).map(|i| &i.label) == Some(&label),
            };
            ensure(ok, || format!("fixture {n}: {id} disagrees with the independent revision"))?;
        }
    }
    Ok(format!("100 fixtures, {entries} patch entries, byte-identical"))
}

fn crash_restart() -> Result<String, String> {
    let seed = 8;
    let cfg = small_config(seed, 48);
    let snapshot_every = 40;

    let reference_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    export(reference_dir.path(), &cfg);
    let mut reference = Driver::new(Remote::start(reference_dir.path(), seed, snapshot_every), &cfg);
    reference.setup();
    reference.run();
    let total = reference.transport.requests;
    drop(reference);
    let reference_log = std::fs::read(reference_dir.path().join(campaign::LOG)).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kill_at = BTreeSet::new();
    while kill_at.len() < KILLS {
        kill_at.insert(rng.random_range(1..=total));
    }
    let crash_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    export(crash_dir.path(), &cfg);
    let transport = Remote::start(crash_dir.path(), seed, snapshot_every).with_kills(kill_at, KILL_DELAY_US, reference_log.clone(), seed + 1);
    let mut crashed = Driver::new(transport, &cfg);
    crashed.setup();
    crashed.run();
    let kills = crashed.transport.kills.clone();
    ensure(crashed.transport.requests == total, || format!("{} requests vs {total}", crashed.transport.requests))?;
    drop(crashed);
    ensure(kills.len() == KILLS, || format!("{} kills", kills.len()))?;
    for k in &kills {
        ensure(k.log_is_prefix, || format!("kill at request {}: log is not a prefix of the reference", k.request))?;
        ensure(k.recovered_digest_matches, || format!("kill at request {}: recovered state differs", k.request))?;
    }
    let final_log = std::fs::read(crash_dir.path().join(campaign::LOG)).map_err(|e| e.to_string())?;
    ensure(final_log == reference_log, || "final log differs from the uninterrupted run".into())?;
    let torn = kills.iter().filter(|k| k.discarded_bytes > 0).count();
    let lost = kills.iter().filter(|k| !k.first_attempt_completed).count();
    let applied = kills.iter().filter(|k| !k.first_attempt_completed && k.committed_by_victim > 0).count();
    let events = final_log.iter().filter(|b| **b == b'\n').count();
    Ok(format!(
        "{KILLS} kills over {total} requests, {lost} replies lost ({applied} after commit), {torn} torn tails, {events} events identical"
    ))
}

fn main() {
    // Quiet the default panic message; failures are reported per line.
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [(&str, Duration, Check); 8] = [
        ("structural constants", Duration::from_secs(1), structural_constants),
        ("fleiss kappa oracle", Duration::from_secs(5), kappa_oracle),
        ("scorer oracle", Duration::from_secs(5), scorer_oracle),
        ("orchestrator properties", Duration::from_secs(60), orchestrator_properties),
        ("quality gate efficacy", Duration::from_secs(120), gate_efficacy),
        ("naive vs clustered cost", Duration::from_secs(60), cost),
        ("revision patch round trip", Duration::from_secs(5), patch_round_trip),
        ("crash-restart recovery", Duration::from_secs(120), crash_restart),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(d) if elapsed > *limit => Err(format!("{d}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!(
            "{tag} [{}] {name:<26} {:>6.2}s / {:>3}s  {detail}",
            i + 1,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
