//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scrapmem::config::{EngineConfig, Providers};
use scrapmem::corpus;
use scrapmem::embedding::EmbeddingProvider;
use scrapmem::emgraph::{EmGraph, GraphConfig, NodeId, PathId};
use scrapmem::eval::{
    self, classify_failures, exact_match, jaccard, joint_at_k, recall_at_k, FailureKind, Granularity, Judge,
    QuestionResult, QuestionType, RunOptions, RunResult,
};
use scrapmem::forgetting::{
    degrade_page, prune_graph, storage_report, CoherenceRule, DegradationState, ForgettingPolicy, PageMention, Stage,
    StorageReport,
};
use scrapmem::pagebuilder::{encode_jpeg, page_id_for, LayoutBox, PageStore, Rect, ScrapbookPage};
use scrapmem::pipeline::{self, Engine};
use scrapmem::retrieval::{retrieve, DayBudget, QueryNodes, RetrievalConfig};
use scrapmem::store::Store;
use scrapmem::synth::{self, SynthCorpus, SynthOptions};

const MIB: f64 = 1024.0 * 1024.0;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn unit(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

// ---------------------------------------------------------------- 1

fn with_thousands(int: u64) -> String {
    let s = int.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn render_amount(cents: u64, rng: &mut ChaCha8Rng) -> String {
    let int = cents / 100;
    let frac = cents % 100;
    let int_s = if rng.gen_bool(0.5) { with_thousands(int) } else { int.to_string() };
    let mut s = if frac == 0 && rng.gen_bool(0.5) {
        int_s
    } else {
        format!("{int_s}.{frac:02}")
    };
    match rng.gen_range(0..5) {
        0 => s = format!("€{s}"),
        1 => s = format!("${s}"),
        2 => s = format!("{s} EUR"),
        3 => s = format!("{s} euros"),
        _ => {}
    }
    let pad = |rng: &mut ChaCha8Rng| " ".repeat(rng.gen_range(0..3));
    format!("{}{s}{}", pad(rng), pad(rng))
}

const PHRASES: [&str; 6] = ["two nights", "blue scarf", "north gate", "oat latte", "second floor", "platform nine"];

fn render_phrase(i: usize, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<String> = PHRASES[i]
        .split(' ')
        .map(|w| match rng.gen_range(0..3) {
            0 => w.to_uppercase(),
            1 => {
                let mut c = w.chars();
                c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
            }
            _ => w.to_string(),
        })
        .collect();
    let sep = if rng.gen_bool(0.3) { "  " } else { " " };
    format!("{}{}{}", " ".repeat(rng.gen_range(0..2)), words.join(sep), "\t".repeat(rng.gen_range(0..2)))
}

const PEOPLE: [&str; 12] = [
    "alice", "bob", "carol rossi", "dan", "erin lee", "frank", "grace", "heidi", "ivan", "judy", "mallory", "oscar",
];

fn render_list(members: &[usize], rng: &mut ChaCha8Rng) -> String {
    let mut parts: Vec<String> = Vec::new();
    for &m in members {
        let copies = if rng.gen_bool(0.15) { 2 } else { 1 };
        for _ in 0..copies {
            let name = if rng.gen_bool(0.5) { PEOPLE[m].to_uppercase() } else { PEOPLE[m].to_string() };
            parts.push(format!("{}{name}{}", " ".repeat(rng.gen_range(0..2)), " ".repeat(rng.gen_range(0..2))));
        }
        if rng.gen_bool(0.1) {
            parts.push(String::new());
        }
    }
    parts.shuffle(rng);
    let sep = [", ", ",", "; ", "\n"][rng.gen_range(0..4)];
    parts.join(sep)
}

fn random_subset(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.gen_bool(0.35)).collect()
}

struct PanicJudge;

impl Judge for PanicJudge {
    fn judge(&self, _: &str, _: &str, _: &str) -> scrapmem::Result<f64> {
        panic!("only open-ended questions reach the judge")
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 4];
    for fixture in 0..1000 {
        match fixture % 4 {
            0 => {
                // Exact match: equal iff both sides denote the same value.
                let numeric = rng.gen_bool(0.7);
                let (gold, pred, expected) = if numeric {
                    let a: u64 = rng.gen_range(0..5_000_000);
                    let b = if rng.gen_bool(0.5) { a } else { rng.gen_range(0..5_000_000) };
                    (render_amount(a, &mut rng), render_amount(b, &mut rng), a == b)
                } else {
                    let a = rng.gen_range(0..PHRASES.len());
                    let b = if rng.gen_bool(0.5) { a } else { rng.gen_range(0..PHRASES.len()) };
                    (render_phrase(a, &mut rng), render_phrase(b, &mut rng), a == b)
                };
                let want = if expected { 1.0 } else { 0.0 };
                let got = eval::qs(QuestionType::Number, "q", &gold, &pred, &PanicJudge).map_err(|e| e.to_string())?;
                ensure!(got == want, "exact match `{gold}` vs `{pred}`: {got}, oracle {want}");
                ensure!(exact_match(&gold, &pred) == want, "exact_match disagrees with qs dispatch");
            }
            1 => {
                let g = random_subset(PEOPLE.len(), &mut rng);
                let p = random_subset(PEOPLE.len(), &mut rng);
                let (gold, pred) = (render_list(&g, &mut rng), render_list(&p, &mut rng));
                let mut inter = 0;
                let mut union = 0;
                for i in 0..PEOPLE.len() {
                    let (a, b) = (g.contains(&i), p.contains(&i));
                    inter += usize::from(a && b);
                    union += usize::from(a || b);
                }
                let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
                let got =
                    eval::qs(QuestionType::ListRecall, "q", &gold, &pred, &PanicJudge).map_err(|e| e.to_string())?;
                ensure!(got == want, "jaccard {gold:?} vs {pred:?}: {got}, oracle {want}");
                ensure!(jaccard(&gold, &pred) == want, "jaccard disagrees with qs dispatch");
            }
            _ => {
                let n_gold = rng.gen_range(1..6);
                let gold: Vec<String> = (0..n_gold).map(|_| format!("i{}", rng.gen_range(0..20))).collect();
                let n_ret = rng.gen_range(0..11);
                let retrieved: Vec<String> = (0..n_ret).map(|_| format!("i{}", rng.gen_range(0..20))).collect();
                let mut distinct: Vec<&String> = Vec::new();
                for g in &gold {
                    if !distinct.contains(&g) {
                        distinct.push(g);
                    }
                }
                let hits = distinct.iter().filter(|g| retrieved.iter().any(|r| r == **g)).count();
                let want = hits as f64 / distinct.len() as f64;
                let got = recall_at_k(&gold, &retrieved).map_err(|e| e.to_string())?;
                ensure!(got == want, "recall {gold:?} / {retrieved:?}: {got}, oracle {want}");
                if fixture % 4 == 3 {
                    let q = [0.0, 0.5, 1.0, 1.0 / 3.0][rng.gen_range(0..4)];
                    let joint = joint_at_k(q, got);
                    ensure!(joint == q * want, "joint {q} x {want}: {joint}");
                    ensure!(joint <= q.min(want), "joint exceeds a factor");
                }
            }
        }
        counts[fixture % 4] += 1;
    }
    ensure!(
        recall_at_k::<&str, &str>(&[], &["x"]).is_err(),
        "empty evidence set must be unscorable"
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "1000 fixtures (EM {}, Jaccard {}, R@k {}, R@k+Joint {}) exact in {:.2?}",
        counts[0], counts[1], counts[2], counts[3], elapsed
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let baseline = (4302.9 * MIB).round() as u64;
    // (config, scrapbook MiB, total MiB, printed saving %)
    let rows = [
        ("no-forget", 896.0, 923.7, 78.5),
        ("timed-gentle", 272.0, 299.5, 93.0),
        ("softer_old", 338.0, 363.0, 91.6),
        ("very_soft", 421.0, 446.0, 89.6),
        ("boundary_365", 481.0, 506.0, 88.2),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (name, scrap, total, printed) in rows {
        let scrap_bytes = (scrap * MIB).round() as u64;
        let graph_bytes = (total * MIB).round() as u64 - scrap_bytes;
        // Sparse files on disk, so the report measures real file sizes.
        let root = dir.path().join(name);
        let pages = PageStore::new(root.join("pages"));
        std::fs::create_dir_all(pages.dir()).map_err(|e| e.to_string())?;
        let id = page_id_for(d(2022, 1, 1));
        let sidecar = b"{}";
        std::fs::write(pages.sidecar_path(&id), sidecar).map_err(|e| e.to_string())?;
        let raster = std::fs::File::create(pages.raster_path(&id)).map_err(|e| e.to_string())?;
        raster.set_len(scrap_bytes - sidecar.len() as u64).map_err(|e| e.to_string())?;
        let graph = std::fs::File::create(root.join("graph.json")).map_err(|e| e.to_string())?;
        graph.set_len(graph_bytes).map_err(|e| e.to_string())?;

        let report = storage_report(&pages, &root.join("graph.json"), baseline).map_err(|e| e.to_string())?;
        ensure!(report == StorageReport::from_parts(scrap_bytes, graph_bytes, baseline), "{name}: {report:?}");
        let saving = 100.0 * report.saving_fraction.ok_or("no saving")?;
        ensure!(
            (saving - printed).abs() <= 0.05 + 1e-9,
            "{name}: saving {saving:.3}% vs printed {printed}%"
        );
        out.push(format!("{name} {saving:.1}%"));
    }
    Ok(out.join(", "))
}

// ---------------------------------------------------------------- 3

fn result(qid: &str, qtype: QuestionType, qs: f64, recall: f64) -> QuestionResult {
    QuestionResult {
        qid: qid.into(),
        qtype,
        prediction: Some(String::new()),
        retrieved: Vec::new(),
        qs: Some(qs),
        recall_at_k: Some(recall),
        joint_at_k: Some(qs * recall),
        error: None,
    }
}

fn criterion_3() -> Check {
    // Per-type (EM-Graph, forgetting, LLM) counts of the incorrect answers.
    let per_type = [
        (QuestionType::Number, [101, 15, 49]),
        (QuestionType::ListRecall, [70, 9, 24]),
        (QuestionType::OpenEnd, [162, 44, 94]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // (forgetting run, baseline run, expected label)
    let mut rows: Vec<(QuestionResult, QuestionResult, Option<FailureKind>)> = Vec::new();
    // Case 1: open_end, R@10 0 under both runs.
    rows.push((
        result("case1", QuestionType::OpenEnd, 0.0, 0.0),
        result("case1", QuestionType::OpenEnd, 0.0, 0.0),
        Some(FailureKind::EmGraph),
    ));
    // Case 4: number, retrieved in both, baseline correct.
    rows.push((
        result("case4", QuestionType::Number, 0.0, 1.0),
        result("case4", QuestionType::Number, 1.0, 1.0),
        Some(FailureKind::OpticalForgetting),
    ));
    // Case 9: open_end, retrieved in both, baseline also wrong.
    rows.push((
        result("case9", QuestionType::OpenEnd, 0.0, 1.0),
        result("case9", QuestionType::OpenEnd, 0.0, 1.0),
        Some(FailureKind::LlmReasoning),
    ));
    let mut n = 0;
    for (t, counts) in per_type {
        for (kind, &count) in FailureKind::ALL.iter().zip(&counts) {
            let already = match (t, kind) {
                (QuestionType::OpenEnd, FailureKind::EmGraph) | (QuestionType::OpenEnd, FailureKind::LlmReasoning) => 1,
                (QuestionType::Number, FailureKind::OpticalForgetting) => 1,
                _ => 0,
            };
            for _ in 0..count - already {
                n += 1;
                let qid = format!("q{n:04}");
                let wrong = if t == QuestionType::ListRecall { 0.5 } else { 0.0 };
                let (r, b) = match kind {
                    FailureKind::EmGraph => {
                        let rec = [0.0, 0.5][rng.gen_range(0..2)];
                        let bq = [0.0, 1.0][rng.gen_range(0..2)];
                        (result(&qid, t, wrong, rec), result(&qid, t, bq, 1.0))
                    }
                    FailureKind::OpticalForgetting => (result(&qid, t, wrong, 1.0), result(&qid, t, 1.0, 1.0)),
                    FailureKind::LlmReasoning => (result(&qid, t, wrong, 1.0), result(&qid, t, wrong, 1.0)),
                };
                rows.push((r, b, Some(*kind)));
            }
        }
    }
    // Correct answers make up the rest of the 1013 questions.
    while rows.len() < 1013 {
        n += 1;
        let qid = format!("q{n:04}");
        rows.push((
            result(&qid, QuestionType::Number, 1.0, 1.0),
            result(&qid, QuestionType::Number, rng.gen_range(0..2) as f64, 1.0),
            None,
        ));
    }
    let expected: BTreeMap<String, FailureKind> =
        rows.iter().filter_map(|(r, _, l)| l.map(|l| (r.qid.clone(), l))).collect();
    let (run, base): (Vec<_>, Vec<_>) = rows.into_iter().map(|(r, b, _)| (r, b)).unzip();
    let report = classify_failures(
        &RunResult::new(10, Granularity::Item, run),
        &RunResult::new(10, Granularity::Item, base),
    )
    .map_err(|e| e.to_string())?;
    ensure!(report.incorrect == 568, "incorrect {}", report.incorrect);
    for l in &report.labels {
        ensure!(expected[&l.qid] == l.label, "{} labelled {:?}, expected {:?}", l.qid, l.label, expected[&l.qid]);
    }
    ensure!(report.labels.len() == expected.len(), "label count {}", report.labels.len());
    let printed = [(FailureKind::EmGraph, 58.6), (FailureKind::OpticalForgetting, 12.0), (FailureKind::LlmReasoning, 29.4)];
    let mut shares = Vec::new();
    for (k, want) in printed {
        let got = report.shares[&k];
        ensure!((got - want).abs() <= 0.05 + 1e-9, "{} share {got:.3}% vs {want}%", k.as_str());
        shares.push(format!("{} {got:.1}%", k.as_str()));
    }
    for (t, counts) in per_type {
        for (kind, &want) in FailureKind::ALL.iter().zip(&counts) {
            let got = report.per_type.get(&t).and_then(|m| m.get(kind)).copied().unwrap_or(0);
            ensure!(got == want, "{t:?}/{}: {got} vs {want}", kind.as_str());
        }
    }
    Ok(format!("568 incorrect: {}; per-type counts and Cases 1/4/9 match", shares.join(", ")))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Check {
    let tg = ForgettingPolicy::preset("timed-gentle").map_err(|e| e.to_string())?;
    let cases = [(195, Stage::Mid, 70, 0.85), (350, Stage::Mid, 70, 0.85), (1131, Stage::Old, 40, 0.60), (19, Stage::Recent, 90, 1.0)];
    for (age, stage, q, s) in cases {
        let got = scrapmem::forgetting::stage_of(age, &tg);
        ensure!(got == stage, "age {age}: {got}");
        ensure!(tg.quality_at(got) == q && tg.scale_at(got) == s, "age {age}: q{} s{}", tg.quality_at(got), tg.scale_at(got));
    }
    let printed = [
        "no-forget  Q 100 / 100 / 100  S 1.0 / 1.0 / 1.0  T N/A",
        "very_soft  Q 95 / 82 / 70  S 1.0 / 0.95 / 0.85  T 180 / 730d",
        "softer_old  Q 90 / 75 / 60  S 1.0 / 0.90 / 0.80  T 180 / 730d",
        "timed-gentle  Q 90 / 70 / 40  S 1.0 / 0.85 / 0.60  T 180 / 730d",
        "boundary_365  Q 95 / 75 / 55  S 1.0 / 0.90 / 0.75  T 365 / 900d",
    ];
    for (name, want) in scrapmem::forgetting::PRESET_NAMES.iter().zip(printed) {
        let p = ForgettingPolicy::preset(name).map_err(|e| e.to_string())?;
        p.validate().map_err(|e| e.to_string())?;
        ensure!(p.to_string() == want, "{name} prints `{p}`");
        println!("    {p}");
    }
    Ok("195d -> mid q70/s0.85, 1131d -> old q40/s0.60; five presets printed above".into())
}

// ---------------------------------------------------------------- 5

const CLUSTER_DIM: usize = 64;

/// `c<cluster>-m<member>` maps to the cluster axis plus a small seeded offset.
struct ClusterEmbedder;

impl EmbeddingProvider for ClusterEmbedder {
    fn id(&self) -> String {
        "cluster-test".into()
    }

    fn dimension(&self) -> usize {
        CLUSTER_DIM
    }

    fn embed(&self, phrases: &[String]) -> scrapmem::Result<Vec<Vec<f32>>> {
        Ok(phrases
            .iter()
            .map(|p| {
                let (c, m) = p[1..].split_once("-m").expect("cluster phrase");
                let c: usize = c.parse().unwrap();
                let m: u64 = m.parse().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64((c as u64) << 32 | m);
                let mut v: Vec<f32> = (0..CLUSTER_DIM).map(|_| rng.gen_range(-1.0f32..1.0) * 0.02).collect();
                v[c] += 1.0;
                unit(&v)
            })
            .collect())
    }
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let tau = 0.90;
    let margin = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clusters = 12;
    let mut phrases = Vec::new();
    for c in 0..clusters {
        for m in 0..rng.gen_range(1..9) {
            phrases.push((c, format!("c{c}-m{m}")));
        }
    }
    let texts: Vec<String> = phrases.iter().map(|(_, p)| p.clone()).collect();
    let vecs = ClusterEmbedder.embed(&texts).map_err(|e| e.to_string())?;
    // The fixture must really be tau-separated with the margin.
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let s = cos(&vecs[i], &vecs[j]);
            if phrases[i].0 == phrases[j].0 {
                ensure!(s >= tau + margin, "within-cluster cosine {s:.3}");
            } else {
                ensure!(s <= tau - margin, "cross-cluster cosine {s:.3}");
            }
        }
    }
    let config = GraphConfig {
        tau_merge: tau,
        embedder: ClusterEmbedder.id(),
        dimension: CLUSTER_DIM,
    };
    let mut order: Vec<usize> = (0..phrases.len()).collect();
    for trial in 0..100 {
        order.shuffle(&mut rng);
        let mut g = EmGraph::new(config.clone());
        let mut node_of: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
        for &i in &order {
            let id = g
                .merge_or_insert(&phrases[i].1, &vecs[i], "page-2022-01-01", 0.5, tau)
                .map_err(|e| e.to_string())?;
            node_of.entry(phrases[i].0).or_default().insert(id);
        }
        ensure!(g.node_count() == clusters, "trial {trial}: {} nodes for {clusters} clusters", g.node_count());
        let all: BTreeSet<NodeId> = node_of.values().flatten().copied().collect();
        ensure!(
            all.len() == clusters && node_of.values().all(|s| s.len() == 1),
            "trial {trial}: clusters split or shared nodes"
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{clusters} clusters, {} mentions, 100 orders in {elapsed:.2?}", phrases.len()))
}

// ---------------------------------------------------------------- 6

struct RefPath {
    page: String,
    nodes: Vec<NodeId>,
    original_len: usize,
}

/// Straight transcription of the pruning procedure over plain collections.
fn reference_prune(
    nodes: &BTreeSet<NodeId>,
    paths: &BTreeMap<PathId, RefPath>,
    lost: &[(String, NodeId)],
) -> (BTreeSet<NodeId>, BTreeMap<PathId, Vec<NodeId>>, BTreeSet<PathId>) {
    let mut nodes = nodes.clone();
    let mut rows: BTreeMap<PathId, Vec<NodeId>> = paths.iter().map(|(id, p)| (*id, p.nodes.clone())).collect();
    let mut pruned = BTreeSet::new();
    for (page, j) in lost {
        let ids: Vec<PathId> = rows.keys().copied().collect();
        for i in ids {
            if paths[&i].page != *page || !rows[&i].contains(j) {
                continue;
            }
            let row = rows.get_mut(&i).unwrap();
            row.retain(|n| n != j);
            let survivors = row.len();
            if survivors < 2 || (survivors as f64) < 0.5 * paths[&i].original_len as f64 {
                rows.remove(&i);
                pruned.insert(i);
            }
        }
    }
    nodes.retain(|n| rows.values().any(|r| r.contains(n)));
    (nodes, rows, pruned)
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dim = 50;
    let config = GraphConfig {
        tau_merge: 0.9,
        embedder: "one-hot".into(),
        dimension: dim,
    };
    let (mut total_pruned, mut total_removed) = (0, 0);
    for trial in 0..200 {
        let mut g = EmGraph::new(config.clone());
        let n_nodes = rng.gen_range(2..=50);
        let n_pages = rng.gen_range(1..=6);
        let pages: Vec<String> = (0..n_pages).map(|p| page_id_for(d(2022, 1, 1 + p))).collect();
        let mut mentioned: Vec<Vec<NodeId>> = vec![Vec::new(); n_pages as usize];
        for k in 0..n_nodes {
            let mut e = vec![0.0f32; dim];
            e[k] = 1.0;
            let mut id = None;
            for (pi, page) in pages.iter().enumerate() {
                if rng.gen_bool(0.4) || (pi == 0 && id.is_none() && rng.gen_bool(0.5)) {
                    let got = g.merge_or_insert(&format!("n{k}"), &e, page, 0.5, 0.9).map_err(|e| e.to_string())?;
                    ensure!(id.is_none_or(|i| i == got), "one-hot mention did not merge");
                    id = Some(got);
                    mentioned[pi].push(got);
                }
            }
        }
        let mut ref_paths = BTreeMap::new();
        for _ in 0..rng.gen_range(0..=30) {
            let pi = rng.gen_range(0..pages.len());
            if mentioned[pi].is_empty() {
                continue;
            }
            let len = rng.gen_range(1..=mentioned[pi].len().min(8));
            let chosen: Vec<NodeId> = mentioned[pi].choose_multiple(&mut rng, len).copied().collect();
            let pid = g
                .add_path(&pages[pi], d(2022, 1, 1 + pi as u32), &chosen, "p")
                .map_err(|e| e.to_string())?;
            ref_paths.insert(
                pid,
                RefPath {
                    page: pages[pi].clone(),
                    nodes: chosen,
                    original_len: len,
                },
            );
        }
        let mut lost = Vec::new();
        for (pi, page) in pages.iter().enumerate() {
            for &n in &mentioned[pi] {
                if rng.gen_bool(0.25) {
                    lost.push(PageMention {
                        page_id: page.clone(),
                        node_id: n,
                    });
                }
            }
        }
        let ref_nodes: BTreeSet<NodeId> = g.nodes().map(|n| n.node_id).collect();
        let ref_lost: Vec<(String, NodeId)> = lost.iter().map(|m| (m.page_id.clone(), m.node_id)).collect();
        let (want_nodes, want_rows, want_pruned) = reference_prune(&ref_nodes, &ref_paths, &ref_lost);

        let report = prune_graph(&mut g, &lost, &CoherenceRule::default()).map_err(|e| e.to_string())?;
        total_pruned += report.pruned_paths.len();
        total_removed += report.removed_nodes.len();

        let got_nodes: BTreeSet<NodeId> = g.nodes().map(|n| n.node_id).collect();
        ensure!(got_nodes == want_nodes, "trial {trial}: surviving nodes differ from the reference");
        let got_pruned: BTreeSet<PathId> = report.pruned_paths.iter().copied().collect();
        ensure!(got_pruned == want_pruned, "trial {trial}: pruned paths differ from the reference");
        let got_rows: BTreeMap<PathId, Vec<NodeId>> = g.paths().map(|p| (p.path_id, p.node_ids.clone())).collect();
        ensure!(got_rows == want_rows, "trial {trial}: surviving paths differ from the reference");
        let removed: BTreeSet<NodeId> = ref_nodes.difference(&want_nodes).copied().collect();
        ensure!(
            report.removed_nodes.iter().copied().collect::<BTreeSet<_>>() == removed,
            "trial {trial}: removed-node report differs"
        );

        // Invariants.
        g.verify().map_err(|e| format!("trial {trial}: {e}"))?;
        for n in g.nodes() {
            ensure!(g.q().column_sum(n.node_id) >= 1, "trial {trial}: node {} has zero support", n.node_id);
        }
        let rule = CoherenceRule::default();
        for p in g.paths() {
            if p.node_ids.len() < p.original_len {
                ensure!(rule.holds(p.node_ids.len(), p.original_len), "trial {trial}: incoherent path {}", p.path_id);
            }
            ensure!(!got_pruned.contains(&p.path_id), "trial {trial}: pruned path survives");
        }
        let (rows, cols, dense) = g.q_dense();
        ensure!(
            rows.len() == g.path_count() && cols.len() == g.node_count() && dense.iter().all(|r| r.len() == cols.len()),
            "trial {trial}: Q is {}x{}, graph has {} paths and {} nodes",
            rows.len(),
            cols.len(),
            g.path_count(),
            g.node_count()
        );
    }
    Ok(format!(
        "200 graphs match the reference executor ({total_pruned} paths pruned, {total_removed} nodes removed)"
    ))
}

// ---------------------------------------------------------------- 7

/// Returns the exhaustive top-k path ids with the same score and tie-break rules.
fn exhaustive_top_k(qn: &QueryNodes, g: &EmGraph, k: usize, tau_q: f64) -> Vec<PathId> {
    let mut scored: Vec<(f64, NaiveDate, PathId)> = g
        .paths()
        .map(|p| {
            let mut ids = p.node_ids.clone();
            ids.sort();
            let mut score = 0.0;
            for n in ids {
                let centroid = &g.node(n).unwrap().centroid;
                let best = qn
                    .embeddings
                    .iter()
                    .map(|e| cos(e, centroid).min(1.0))
                    .filter(|w| *w >= tau_q)
                    .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))));
                if let Some(w) = best {
                    score += w;
                }
            }
            (score, p.date, p.path_id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored.into_iter().take(k).map(|s| s.2).collect()
}

struct SeedEmbedder;

impl EmbeddingProvider for SeedEmbedder {
    fn id(&self) -> String {
        "seeded".into()
    }

    fn dimension(&self) -> usize {
        8
    }

    fn embed(&self, phrases: &[String]) -> scrapmem::Result<Vec<Vec<f32>>> {
        Ok(phrases
            .iter()
            .map(|p| {
                let seed: u64 = p.trim_start_matches('v').parse().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // Non-negative coordinates keep plenty of pairs above the query threshold.
                unit(&(0..8).map(|_| rng.gen_range(0.0f32..1.0)).collect::<Vec<_>>())
            })
            .collect())
    }
}

fn criterion_7(ctx: &SynthContext) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = GraphConfig {
        tau_merge: 0.995,
        embedder: SeedEmbedder.id(),
        dimension: 8,
    };
    let tau_q = 0.9;
    let mut nonempty = 0;
    for store in 0..100 {
        let mut g = EmGraph::new(config.clone());
        let n_pages = rng.gen_range(1..=60u32);
        let n_paths = rng.gen_range(1..=500usize);
        let vocab = rng.gen_range(5..=80u64);
        for _ in 0..n_paths {
            let day = rng.gen_range(0..n_pages);
            let page = page_id_for(d(2021, 1, 1) + chrono::Duration::days(day as i64));
            let mut ids = Vec::new();
            for _ in 0..rng.gen_range(1..=6) {
                let phrase = format!("v{}", rng.gen_range(0..vocab) + 1000 * store);
                let e = SeedEmbedder.embed_one(&phrase).map_err(|e| e.to_string())?;
                let id = g.merge_or_insert(&phrase, &e, &page, 0.5, 0.995).map_err(|e| e.to_string())?;
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            g.add_path(&page, d(2021, 1, 1) + chrono::Duration::days(day as i64), &ids, "")
                .map_err(|e| e.to_string())?;
        }
        let phrases: Vec<String> = (0..rng.gen_range(1..4)).map(|_| format!("v{}", rng.gen_range(0..100_000))).collect();
        let qn = QueryNodes::new("q", phrases, &SeedEmbedder).map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..=20);
        let cfg = RetrievalConfig {
            tau_q,
            day_budget: DayBudget::Unbounded,
            visual_weight: 0.0,
        };
        let got: Vec<PathId> = retrieve(&qn, &g, &BTreeMap::new(), k, &cfg)
            .map_err(|e| e.to_string())?
            .paths
            .iter()
            .map(|p| p.path_id)
            .collect();
        let want = exhaustive_top_k(&qn, &g, k, tau_q);
        ensure!(got == want, "store {store}: retrieved {got:?}, exhaustive {want:?}");
        nonempty += usize::from(g.path_count() > 0);
    }

    // Default two-stage budget against the exhaustive ranking on the synthetic benchmark.
    let recall = |budget: DayBudget| -> std::result::Result<f64, String> {
        let config = EngineConfig {
            day_budget: budget,
            ..EngineConfig::default()
        };
        let engine = Engine::open(&ctx.base_store, &config, Providers::mock()).map_err(|e| e.to_string())?;
        let run = run_eval(&engine, ctx)?;
        run.aggregates.recall_at_k.ok_or_else(|| "no recall".to_string())
    };
    let auto = recall(DayBudget::Auto)?;
    let exhaustive = recall(DayBudget::Unbounded)?;
    ensure!(
        (exhaustive - auto) * 100.0 <= 5.0,
        "R@10 with D=2k {:.1}% vs exhaustive {:.1}%",
        100.0 * auto,
        100.0 * exhaustive
    );
    Ok(format!(
        "D=inf equals exhaustive on 100 stores ({nonempty} non-empty); synthetic R@10 D=2k {:.1}% vs exhaustive {:.1}%",
        100.0 * auto,
        100.0 * exhaustive
    ))
}

// ---------------------------------------------------------------- 8

struct SynthContext {
    _dir: tempfile::TempDir,
    synth: SynthCorpus,
    questions: Vec<eval::BenchmarkQuestion>,
    base_store: Store,
    setup: Duration,
    stores_dir: PathBuf,
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

fn synth_context() -> std::result::Result<SynthContext, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = synth::generate(&dir.path().join("corpus"), &SynthOptions::default()).map_err(|e| e.to_string())?;
    let corpus = corpus::ingest(&synth.manifest).map_err(|e| e.to_string())?;
    let stores_dir = dir.path().join("stores");
    let base_store = Store::init(&stores_dir.join("no-forget"), &corpus).map_err(|e| e.to_string())?;
    pipeline::build(&base_store, &EngineConfig::default(), &Providers::mock()).map_err(|e| e.to_string())?;
    let questions = eval::load_questions(&synth.questions).map_err(|e| e.to_string())?;
    Ok(SynthContext {
        _dir: dir,
        synth,
        questions,
        base_store,
        setup: start.elapsed(),
        stores_dir,
    })
}

fn run_eval(engine: &Engine, ctx: &SynthContext) -> std::result::Result<RunResult, String> {
    let p = engine.providers();
    eval::run_benchmark(engine, &ctx.questions, p.answerer.as_ref(), p.judge.as_ref(), &RunOptions::default())
        .map_err(|e| e.to_string())
}

fn criterion_8(ctx: &SynthContext) -> Check {
    let start = Instant::now();
    let config = EngineConfig::default();
    let providers = Providers::mock();
    let now = ctx.synth.now;

    let base_bytes = ctx.base_store.storage(0).map_err(|e| e.to_string())?.total_bytes;
    let base_engine = Engine::open(&ctx.base_store, &config, providers.clone()).map_err(|e| e.to_string())?;
    let base_recall = run_eval(&base_engine, ctx)?.aggregates.recall_at_k.ok_or("no recall")?;
    let raw = ctx
        .base_store
        .load_corpus()
        .and_then(|c| c.raw_bytes())
        .map_err(|e| e.to_string())?;

    let mut lines = vec![format!(
        "no-forget R@10 {:.1}% {} B ({:+.1}% vs raw {raw} B)",
        100.0 * base_recall,
        base_bytes,
        100.0 * (1.0 - base_bytes as f64 / raw as f64)
    )];
    let mut failures = Vec::new();
    for name in ["very_soft", "softer_old", "timed-gentle", "boundary_365"] {
        let root = ctx.stores_dir.join(name);
        copy_dir(ctx.base_store.root(), &root).map_err(|e| e.to_string())?;
        let store = Store::open(&root).map_err(|e| e.to_string())?;
        let policy = ForgettingPolicy::preset(name).map_err(|e| e.to_string())?;
        let report = pipeline::forget(&store, &config, &providers, &policy, now).map_err(|e| e.to_string())?;
        let engine = Engine::open(&store, &config, providers.clone()).map_err(|e| e.to_string())?;
        let recall = run_eval(&engine, ctx)?.aggregates.recall_at_k.ok_or("no recall")?;
        let bytes = report.storage.total_bytes;
        let drop = 1.0 - bytes as f64 / base_bytes as f64;
        let gap = 100.0 * (base_recall - recall);
        lines.push(format!(
            "{name} R@10 {:.1}% (gap {gap:.1} pp) {bytes} B (drop {:.1}%, {} nodes lost, {} paths pruned)",
            100.0 * recall,
            100.0 * drop,
            report.removed_nodes,
            report.pruned_paths
        ));
        if gap > 10.0 {
            failures.push(format!("{name}: recall gap {gap:.1} pp"));
        }
        if drop < 0.60 {
            failures.push(format!("{name}: bytes drop {:.1}%", 100.0 * drop));
        }
    }
    let elapsed = start.elapsed() + ctx.setup;
    for l in &lines {
        println!("    {l}");
    }
    if elapsed > Duration::from_secs(120) {
        failures.push(format!("took {elapsed:?}"));
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(format!(
        "{} days, {} questions, four presets within 10 pp and >= 60% smaller in {elapsed:.1?}",
        ctx.synth.days,
        ctx.questions.len()
    ))
}

// ---------------------------------------------------------------- 9

fn random_page(rng: &mut ChaCha8Rng, date: NaiveDate) -> std::result::Result<ScrapbookPage, String> {
    let (w, h) = (rng.gen_range(48..400), rng.gen_range(48..400));
    let mut img = RgbImage::from_pixel(w, h, Rgb([250, 248, 240]));
    for _ in 0..rng.gen_range(3..20) {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (rw, rh) = (rng.gen_range(1..=w - x0), rng.gen_range(1..=h - y0));
        let c: Rgb<u8> = Rgb([rng.gen(), rng.gen(), rng.gen()]);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let n: u8 = rng.gen_range(0..24);
                img.put_pixel(x, y, Rgb([c[0].saturating_add(n), c[1].saturating_sub(n), c[2] ^ n]));
            }
        }
    }
    let raster = encode_jpeg(&img, 100).map_err(|e| e.to_string())?;
    Ok(ScrapbookPage {
        page_id: page_id_for(date),
        date,
        source_ids: vec!["item".into()],
        raster,
        width: w,
        height: h,
        base_width: w,
        base_height: h,
        fidelity: DegradationState::fresh(),
        layout: vec![LayoutBox {
            item_id: "item".into(),
            rect: Rect { x: 0, y: 0, w, h },
        }],
        fused_text: None,
    })
}

fn criterion_9(ctx: &SynthContext) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let presets = ["very_soft", "softer_old", "timed-gentle", "boundary_365"];
    for i in 0..100 {
        let policy = ForgettingPolicy::preset(presets[i % presets.len()]).map_err(|e| e.to_string())?;
        let (t1, t2) = policy.boundaries.unwrap();
        let date = d(2020, 1, 1) + chrono::Duration::days(rng.gen_range(0..365));
        let fresh = random_page(&mut rng, date)?;
        let at = |age: u32| date + chrono::Duration::days(age as i64);
        let recent = degrade_page(&fresh, &policy, at(rng.gen_range(0..=t1))).map_err(|e| e.to_string())?;
        ensure!(!recent.changed && recent.page == fresh, "page {i}: recent pass changed the page");
        let mut prev = fresh.raster.len();
        let mut page = fresh;
        for (stage, age) in [(Stage::Mid, rng.gen_range(t1 + 1..=t2)), (Stage::Old, t2 + 1 + rng.gen_range(0..400))] {
            let out = degrade_page(&page, &policy, at(age)).map_err(|e| e.to_string())?;
            ensure!(out.changed && out.to == stage, "page {i}: age {age} went to {}", out.to);
            let s = policy.scale_at(stage);
            let want = (
                ((out.page.base_width as f64 * s).round() as u32).max(1),
                ((out.page.base_height as f64 * s).round() as u32).max(1),
            );
            ensure!((out.page.width, out.page.height) == want, "page {i} {stage}: {}x{} vs {want:?}", out.page.width, out.page.height);
            out.page.check_invariants().map_err(|e| e.to_string())?;
            let bytes = out.page.raster.len();
            ensure!(bytes <= prev, "page {i} {stage}: {bytes} B after {prev} B");
            prev = bytes;
            // Same stage again: no change, whether at the same or a later date.
            for later in [age, age + 30] {
                let again = degrade_page(&out.page, &policy, at(later)).map_err(|e| e.to_string())?;
                if again.to == stage {
                    ensure!(!again.changed && again.page == out.page, "page {i}: second {stage} pass changed the page");
                }
            }
            page = out.page;
        }
    }

    // Whole-store passes.
    let root = ctx.stores_dir.join("idempotence");
    copy_dir(ctx.base_store.root(), &root).map_err(|e| e.to_string())?;
    let store = Store::open(&root).map_err(|e| e.to_string())?;
    let policy = ForgettingPolicy::preset("timed-gentle").map_err(|e| e.to_string())?;
    let config = EngineConfig::default();
    let providers = Providers::mock();
    let first = pipeline::forget(&store, &config, &providers, &policy, ctx.synth.now).map_err(|e| e.to_string())?;
    let second = pipeline::forget(&store, &config, &providers, &policy, ctx.synth.now).map_err(|e| e.to_string())?;
    ensure!(first.pages_changed == first.pages, "first pass changed {} of {}", first.pages_changed, first.pages);
    ensure!(
        second.pages_changed == 0 && second.lost_mentions == 0 && second.storage.total_bytes == first.storage.total_bytes,
        "second pass changed {} pages, lost {} mentions",
        second.pages_changed,
        second.lost_mentions
    );
    Ok(format!(
        "100 random pages monotone and round(width*S); store pass repeated at the same stage changes nothing ({} pages)",
        first.pages
    ))
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS criterion {id} ({name}) [{secs:.1}s]: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL criterion {id} ({name}) [{secs:.1}s]: {why}");
            false
        }
    }
}

fn main() {
    // `cargo test` passes harness flags; listing asks for the test names only.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;
    ok &= run(1, "metric exactness", criterion_1);
    ok &= run(2, "storage arithmetic", criterion_2);
    ok &= run(3, "failure taxonomy", criterion_3);
    ok &= run(4, "stage mapping and presets", criterion_4);
    ok &= run(5, "node merging clusters", criterion_5);
    ok &= run(6, "graph pruning", criterion_6);
    match synth_context() {
        Ok(ctx) => {
            ok &= run(7, "retrieval exactness", || criterion_7(&ctx));
            ok &= run(8, "forgetting robustness", || criterion_8(&ctx));
            ok &= run(9, "degradation physics", || criterion_9(&ctx));
        }
        Err(e) => {
            for (id, name) in [(7, "retrieval exactness"), (8, "forgetting robustness"), (9, "degradation physics")] {
                println!("FAIL criterion {id} ({name}): synthetic store setup failed: {e}");
            }
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
