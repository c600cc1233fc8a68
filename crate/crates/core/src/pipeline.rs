//! End-to-end operations over a [`Store`]: build, forget, and the read-only query
//! engine.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, FadeStrategy, Providers};
use crate::corpus::{Corpus, MediaKind};
use crate::emgraph::{EmGraph, NodeId};
use crate::error::{Error, Result};
use crate::eval::Retriever;
use crate::forgetting::{
    degrade_page, fade_nodes, Degraded, prune_graph, stage_counts, FadeMode, ForgettingPolicy, PageMention, Stage,
    StorageReport,
};
use crate::pagebuilder::{consolidate, load_page_items, page_id_for, text_header, Rect, ScrapbookPage};
use crate::perception::{fuse_text, rank_salience, NodeContext, PageView};
use crate::retrieval::{retrieve, EvidenceSet, PageTexts, QueryNodes};
use crate::store::{item_pages, Store};
use crate::util::append_line;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub pages_processed: usize,
    pub pages_skipped: usize,
    pub paths_added: usize,
    pub nodes: usize,
    pub paths: usize,
    pub visual_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Mention {
    phrase: String,
    salience: f64,
}

/// Everything a day contributes, computed without touching the graph.
struct DayWork {
    date: NaiveDate,
    page: ScrapbookPage,
    summary: String,
    mentions: Vec<Mention>,
    embeddings: Vec<Vec<f32>>,
    visuals: Vec<(Rect, Vec<f32>)>,
}

#[derive(Serialize, Deserialize)]
struct BuildEntry {
    page_id: String,
    paths: usize,
    mentions: usize,
}

fn push_mention(mentions: &mut Vec<Mention>, phrase: &str, salience: f64) {
    match mentions.iter_mut().find(|m| m.phrase == phrase) {
        Some(m) => m.salience = m.salience.max(salience),
        None => mentions.push(Mention {
            phrase: phrase.to_string(),
            salience,
        }),
    }
}

fn prepare_day(corpus: &Corpus, date: NaiveDate, config: &EngineConfig, providers: &Providers) -> Result<DayWork> {
    let items = corpus.day_items(date);
    let mut page = {
        let page_items = load_page_items(corpus, &items, config.keyframes)?;
        consolidate(date, &page_items, &config.layout)?
    };
    let perception = providers.perception.perceive_page(&PageView::of(&page, &items))?;
    perception.validate()?;
    let summary = providers.perception.summarize_path(&perception, date)?;

    let mut mentions = Vec::new();
    let n = summary.semantic_nodes.len();
    for (rank, phrase) in summary.semantic_nodes.iter().enumerate() {
        let s = perception.salience_of(phrase).unwrap_or_else(|| rank_salience(rank, n));
        push_mention(&mut mentions, phrase, s);
    }
    for item in items.iter().filter(|i| i.kind == MediaKind::Text) {
        let fused = fuse_text(&format!("{}\n{}", text_header(item), item.payload), "");
        let nodes = providers.perception.extract_nodes(&fused, &NodeContext::for_item(item))?;
        let n = nodes.len();
        for (rank, phrase) in nodes.iter().enumerate() {
            let s = perception.salience_of(phrase).unwrap_or_else(|| rank_salience(rank, n));
            push_mention(&mut mentions, phrase, s);
        }
    }
    let phrases: Vec<String> = mentions.iter().map(|m| m.phrase.clone()).collect();
    let embeddings = if phrases.is_empty() { Vec::new() } else { providers.embedder.embed(&phrases)? };

    let captions: Vec<(Rect, String)> = items
        .iter()
        .filter(|i| i.kind != MediaKind::Text)
        .filter_map(|i| {
            let caption = i.meta.get("caption")?.trim();
            let rect = page.layout.iter().find(|b| b.item_id == i.id)?.rect;
            (!caption.is_empty()).then(|| (rect, caption.to_lowercase()))
        })
        .collect();
    let visuals = if captions.is_empty() {
        Vec::new()
    } else {
        let texts: Vec<String> = captions.iter().map(|(_, c)| c.clone()).collect();
        let vectors = providers.embedder.embed(&texts)?;
        captions.into_iter().map(|(r, _)| r).zip(vectors).collect()
    };

    page.fused_text = Some(perception.fused().text);
    Ok(DayWork {
        date,
        page,
        summary: summary.em_path,
        mentions,
        embeddings,
        visuals,
    })
}

fn merge_day(graph: &mut EmGraph, work: &DayWork, tau_merge: f64) -> Result<usize> {
    let page_id = work.page.page_id.as_str();
    let mut ids: Vec<NodeId> = Vec::new();
    for (m, e) in work.mentions.iter().zip(&work.embeddings) {
        let id = graph.merge_or_insert(&m.phrase, e, page_id, m.salience, tau_merge)?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    for (rect, e) in &work.visuals {
        graph.add_visual_node(page_id, *rect, e)?;
    }
    if ids.is_empty() {
        log::warn!("{page_id}: no nodes extracted; page kept without a path");
        return Ok(0);
    }
    graph.add_path(page_id, work.date, &ids, &work.summary)?;
    Ok(1)
}

fn thread_pool(max_inflight: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(max_inflight.max(1))
        .build()
        .map_err(|e| Error::Store(format!("thread pool: {e}")))
}

fn journaled_pages(path: &std::path::Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<BuildEntry>(line) {
            Ok(e) => out.push(e.page_id),
            // A torn last line from an interrupted run; that page is redone.
            Err(e) => log::warn!("{}: skipping unreadable journal line: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Consolidates, perceives and indexes every day not yet in the graph. Days are
/// prepared concurrently and merged in date order, so the graph is the same for
/// any `max_inflight`. Progress is journaled per page; an interrupted build
/// resumes where it stopped.
pub fn build(store: &Store, config: &EngineConfig, providers: &Providers) -> Result<BuildReport> {
    config.validate()?;
    let _lock = store.lock()?;
    let corpus = store.load_corpus()?;
    let graph_config = config.graph_config(providers.embedder.as_ref());
    let mut graph = store.load_graph(&graph_config)?;
    let pages = store.pages();

    let journaled = journaled_pages(&store.build_journal())?;
    let done = |date: &NaiveDate| {
        let id = page_id_for(*date);
        journaled.contains(&id) || graph.paths_on_page(&id).next().is_some()
    };
    let pending: Vec<NaiveDate> = corpus.days().filter(|d| !done(d)).collect();
    let mut report = BuildReport {
        pages_skipped: corpus.by_day.len() - pending.len(),
        ..BuildReport::default()
    };

    let pool = thread_pool(config.max_inflight)?;
    let chunk = (config.max_inflight * 2).max(8);
    for dates in pending.chunks(chunk) {
        let prepared: Vec<Result<DayWork>> =
            pool.install(|| dates.par_iter().map(|d| prepare_day(&corpus, *d, config, providers)).collect());
        for work in prepared {
            let work = work?;
            let paths = merge_day(&mut graph, &work, config.tau_merge)?;
            pages.save(&work.page)?;
            graph.persist(&store.graph_path())?;
            let entry = BuildEntry {
                page_id: work.page.page_id.clone(),
                paths,
                mentions: work.mentions.len(),
            };
            append_line(&store.build_journal(), &serde_json::to_string(&entry)?)?;
            report.pages_processed += 1;
            report.paths_added += paths;
            log::info!("built {} ({} mentions)", work.page.page_id, work.mentions.len());
        }
    }
    if !store.graph_path().is_file() {
        graph.persist(&store.graph_path())?;
    }
    report.nodes = graph.node_count();
    report.paths = graph.path_count();
    report.visual_nodes = graph.visual_nodes().count();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetReport {
    pub policy: ForgettingPolicy,
    pub now: NaiveDate,
    pub pages: usize,
    pub pages_changed: usize,
    pub stage_counts: BTreeMap<Stage, usize>,
    pub lost_mentions: usize,
    pub pruned_paths: usize,
    pub removed_nodes: usize,
    pub storage: StorageReport,
}

#[derive(Serialize)]
struct ForgetEntry<'a> {
    page_id: &'a str,
    policy: &'a str,
    now: NaiveDate,
    from: Stage,
    to: Stage,
    quality: u8,
    scale: f64,
    lost_mentions: usize,
    pruned_paths: usize,
    removed_nodes: usize,
}

/// Degrades every page to the stage `policy` assigns at `now`, fades the mentions
/// the degraded pages can no longer support, and prunes the graph. Each changed
/// page is committed as graph, then page, then journal line.
pub fn forget(
    store: &Store,
    config: &EngineConfig,
    providers: &Providers,
    policy: &ForgettingPolicy,
    now: NaiveDate,
) -> Result<ForgetReport> {
    config.validate()?;
    policy.validate()?;
    let _lock = store.lock()?;
    let corpus = store.load_corpus()?;
    let graph_config = config.graph_config(providers.embedder.as_ref());
    let mut graph = store.load_graph(&graph_config)?;
    let pages = store.pages();
    let ids = pages.page_ids()?;

    let mode = match config.fade {
        FadeStrategy::Legibility => FadeMode::Legibility,
        FadeStrategy::Reperceive => FadeMode::Reperceive {
            perception: providers.perception.as_ref(),
            embedder: providers.embedder.as_ref(),
            tau_q: config.tau_q,
        },
    };

    let mut report = ForgetReport {
        policy: policy.clone(),
        now,
        pages: ids.len(),
        pages_changed: 0,
        stage_counts: BTreeMap::new(),
        lost_mentions: 0,
        pruned_paths: 0,
        removed_nodes: 0,
        storage: StorageReport::from_parts(0, 0, 0),
    };
    let mut finals: Vec<ScrapbookPage> = Vec::with_capacity(ids.len());

    let pool = thread_pool(config.max_inflight)?;
    let chunk = (config.max_inflight * 2).max(8);
    for batch in ids.chunks(chunk) {
        let degraded: Vec<Result<Degraded>> = pool.install(|| {
            batch
                .par_iter()
                .map(|id| {
                    let page = pages.load(id)?;
                    let mut d = degrade_page(&page, policy, now)?;
                    if d.changed && d.page.raster != page.raster {
                        let items = corpus.day_items(d.page.date);
                        let seen = providers.perception.perceive_page(&PageView::of(&d.page, &items))?;
                        d.page.fused_text = Some(seen.fused().text);
                    }
                    Ok(d)
                })
                .collect()
        });
        for result in degraded {
            let mut d = result?;
            if !d.changed {
                d.page.raster = Vec::new();
                finals.push(d.page);
                continue;
            }
            let items = corpus.day_items(d.page.date);
            let lost: Vec<PageMention> = fade_nodes(&d.page, &graph, &mode, &items)?;
            let pruned = prune_graph(&mut graph, &lost, &config.coherence)?;
            graph.persist(&store.graph_path())?;
            pages.save(&d.page)?;
            let entry = ForgetEntry {
                page_id: &d.page.page_id,
                policy: &policy.name,
                now,
                from: d.from,
                to: d.to,
                quality: d.page.fidelity.applied_quality,
                scale: d.page.fidelity.applied_scale,
                lost_mentions: pruned.lost_mentions.len(),
                pruned_paths: pruned.pruned_paths.len(),
                removed_nodes: pruned.removed_nodes.len(),
            };
            append_line(&store.forget_journal(), &serde_json::to_string(&entry)?)?;
            report.pages_changed += 1;
            report.lost_mentions += pruned.lost_mentions.len();
            report.pruned_paths += pruned.pruned_paths.len();
            report.removed_nodes += pruned.removed_nodes.len();
            log::info!(
                "{}: {} -> {} (q{} s{}), {} mentions lost",
                d.page.page_id,
                d.from,
                d.to,
                d.page.fidelity.applied_quality,
                d.page.fidelity.applied_scale,
                pruned.lost_mentions.len()
            );
            d.page.raster = Vec::new();
            finals.push(d.page);
        }
    }
    report.stage_counts = stage_counts(finals.iter());
    report.storage = store.storage(corpus.raw_bytes()?)?;
    Ok(report)
}

/// Read-only snapshot of a built store that answers queries.
pub struct Engine {
    pub corpus: Corpus,
    pub graph: EmGraph,
    page_sources: BTreeMap<String, Vec<String>>,
    page_texts: BTreeMap<String, String>,
    item_pages: HashMap<String, String>,
    config: EngineConfig,
    providers: Providers,
}

impl Engine {
    pub fn open(store: &Store, config: &EngineConfig, providers: Providers) -> Result<Engine> {
        config.validate()?;
        let corpus = store.load_corpus()?;
        let graph = store.load_graph(&config.graph_config(providers.embedder.as_ref()))?;
        let pages = store.pages();
        let mut page_sources = BTreeMap::new();
        let mut page_texts = BTreeMap::new();
        for id in pages.page_ids()? {
            let page = pages.load_sidecar(&id)?;
            if let Some(t) = page.fused_text {
                page_texts.insert(id.clone(), t);
            }
            page_sources.insert(id, page.source_ids);
        }
        Ok(Engine {
            item_pages: item_pages(&corpus),
            corpus,
            graph,
            page_sources,
            page_texts,
            config: config.clone(),
            providers,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    /// Retrieval for `question`. A question with no extractable nodes gets empty
    /// evidence.
    pub fn query(&self, question: &str, k: usize) -> Result<EvidenceSet> {
        let qn = match QueryNodes::extract(question, self.providers.perception.as_ref(), self.providers.embedder.as_ref()) {
            Ok(qn) => qn,
            Err(Error::NoExtractableNodes) => {
                log::warn!("no query nodes in `{question}`");
                return Ok(EvidenceSet {
                    question: question.to_string(),
                    k,
                    paths: Vec::new(),
                    item_ids: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        };
        retrieve(&qn, &self.graph, &self.page_sources, k, &self.config.retrieval())
    }

    pub fn texts_for(&self, evidence: &EvidenceSet) -> PageTexts {
        evidence
            .page_ids()
            .into_iter()
            .filter_map(|id| self.page_texts.get(&id).map(|t| (id, t.clone())))
            .collect()
    }
}

impl Retriever for Engine {
    fn retrieve(&self, question: &str, k: usize) -> Result<EvidenceSet> {
        self.query(question, k)
    }

    fn page_texts(&self, evidence: &EvidenceSet) -> PageTexts {
        self.texts_for(evidence)
    }

    fn page_of(&self, item_id: &str) -> Option<String> {
        self.item_pages.get(item_id).cloned()
    }
}
