//! Query-to-path retrieval over the Q matrix, and the answerer.
//!
//! Every query phrase matches the canonical nodes within `tau_q` cosine; a path
//! scores the sum of its matched nodes' best weights. Retrieval first ranks days
//! by their best path and keeps a day budget, then ranks the surviving paths.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatMessage, ChatRequest};
use crate::embedding::EmbeddingProvider;
use crate::emgraph::{EmGraph, NodeId, PathId};
use crate::error::{Error, Result};
use crate::perception::tokenizer::{extract_phrases, Mode};
use crate::perception::{PerceptionProvider, ProviderMode};
use crate::util::cosine;

pub const DEFAULT_TAU_Q: f64 = 0.60;
pub const DEFAULT_K: usize = 10;
pub const INSUFFICIENT_EVIDENCE: &str = "insufficient evidence";

#[derive(Debug, Clone, PartialEq)]
pub struct QueryNodes {
    pub question: String,
    pub phrases: Vec<String>,
    pub embeddings: Vec<Vec<f32>>,
}

impl QueryNodes {
    pub fn new(question: &str, phrases: Vec<String>, embedder: &dyn EmbeddingProvider) -> Result<Self> {
        if phrases.is_empty() {
            return Err(Error::NoExtractableNodes);
        }
        let embeddings = embedder.embed(&phrases)?;
        Ok(QueryNodes {
            question: question.to_string(),
            phrases,
            embeddings,
        })
    }

    /// Extracts and embeds the question's nodes.
    pub fn extract(
        question: &str,
        perception: &dyn PerceptionProvider,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        Self::new(question, perception.extract_query_nodes(question)?, embedder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMatch {
    pub node_id: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseMatches {
    pub phrase: String,
    /// Strongest first, then by node id.
    pub matches: Vec<NodeMatch>,
}

pub fn match_query_nodes(qn: &QueryNodes, graph: &EmGraph, tau_q: f64) -> Vec<PhraseMatches> {
    qn.phrases
        .iter()
        .zip(&qn.embeddings)
        .map(|(phrase, e)| {
            let mut matches: Vec<NodeMatch> = graph
                .nodes()
                .filter_map(|n| {
                    let w = cosine(e, &n.centroid).min(1.0);
                    (w >= tau_q).then_some(NodeMatch {
                        node_id: n.node_id,
                        weight: w,
                    })
                })
                .collect();
            matches.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.node_id.cmp(&b.node_id)));
            PhraseMatches {
                phrase: phrase.clone(),
                matches,
            }
        })
        .collect()
}

/// Best weight per matched node over all query phrases.
pub fn node_weights(matches: &[PhraseMatches]) -> BTreeMap<NodeId, f64> {
    let mut w: BTreeMap<NodeId, f64> = BTreeMap::new();
    for m in matches.iter().flat_map(|p| &p.matches) {
        let e = w.entry(m.node_id).or_insert(m.weight);
        *e = e.max(m.weight);
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path_id: PathId,
    pub score: f64,
    pub page_id: String,
    pub date: NaiveDate,
    pub summary: String,
}

/// Higher score first, then newer date, then lower path id.
pub fn rank_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.date.cmp(&a.date))
        .then(a.path_id.cmp(&b.path_id))
}

/// Scores every path and returns them in rank order.
pub fn score_paths(matches: &[PhraseMatches], graph: &EmGraph) -> Vec<ScoredPath> {
    let weights = node_weights(matches);
    let mut scores: BTreeMap<PathId, f64> = BTreeMap::new();
    for (&node, &w) in &weights {
        for p in graph.q().paths_of(node) {
            *scores.entry(p).or_default() += w;
        }
    }
    let mut ranked: Vec<ScoredPath> = graph
        .paths()
        .map(|p| ScoredPath {
            path_id: p.path_id,
            score: scores.get(&p.path_id).copied().unwrap_or(0.0),
            page_id: p.page_id.clone(),
            date: p.date,
            summary: p.summary.clone(),
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked
}

/// How many days survive the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DayBudget {
    /// Twice the number of requested paths.
    #[default]
    Auto,
    Fixed(usize),
    Unbounded,
}

impl DayBudget {
    pub fn days_for(self, k: usize) -> Option<usize> {
        match self {
            DayBudget::Auto => Some(2 * k),
            DayBudget::Fixed(d) => Some(d),
            DayBudget::Unbounded => None,
        }
    }
}

impl Serialize for DayBudget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DayBudget::Auto => s.serialize_str("auto"),
            DayBudget::Unbounded => s.serialize_str("unbounded"),
            DayBudget::Fixed(d) => s.serialize_u64(*d as u64),
        }
    }
}

impl<'de> Deserialize<'de> for DayBudget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(DayBudget::Fixed(n)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for DayBudget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(DayBudget::Auto),
            "unbounded" | "inf" | "infinity" => Ok(DayBudget::Unbounded),
            n => n
                .parse()
                .map(DayBudget::Fixed)
                .map_err(|_| format!("day budget must be auto, unbounded or a count, got `{n}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub tau_q: f64,
    pub day_budget: DayBudget,
    /// Weight of visual-node similarity in path scores. Zero disables it.
    pub visual_weight: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            tau_q: DEFAULT_TAU_Q,
            day_budget: DayBudget::Auto,
            visual_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub question: String,
    pub k: usize,
    pub paths: Vec<ScoredPath>,
    /// Source items of the selected pages in rank order, at most `k`.
    pub item_ids: Vec<String>,
}

impl EvidenceSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn page_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.paths
            .iter()
            .filter(|p| seen.insert(p.page_id.clone()))
            .map(|p| p.page_id.clone())
            .collect()
    }
}

fn add_visual_scores(ranked: &mut [ScoredPath], qn: &QueryNodes, graph: &EmGraph, config: &RetrievalConfig) {
    if config.visual_weight <= 0.0 {
        return;
    }
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for v in graph.visual_nodes() {
        for e in &qn.embeddings {
            let s = cosine(e, &v.embedding);
            if s >= config.tau_q {
                let b = best.entry(v.page_id.as_str()).or_insert(0.0);
                *b = b.max(s);
            }
        }
    }
    for p in ranked.iter_mut() {
        if let Some(s) = best.get(p.page_id.as_str()) {
            p.score += config.visual_weight * s;
        }
    }
    ranked.sort_by(rank_order);
}

/// Two-stage retrieval of the top `k` paths.
pub fn retrieve(
    qn: &QueryNodes,
    graph: &EmGraph,
    page_sources: &BTreeMap<String, Vec<String>>,
    k: usize,
    config: &RetrievalConfig,
) -> Result<EvidenceSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let matches = match_query_nodes(qn, graph, config.tau_q);
    let mut ranked = score_paths(&matches, graph);
    add_visual_scores(&mut ranked, qn, graph, config);

    if let Some(d) = config.day_budget.days_for(k) {
        // `ranked` is in rank order, so a day's first appearance carries its max score.
        let mut days: Vec<NaiveDate> = Vec::new();
        for p in &ranked {
            if days.len() == d {
                break;
            }
            if !days.contains(&p.date) {
                days.push(p.date);
            }
        }
        let keep: BTreeSet<NaiveDate> = days.into_iter().collect();
        ranked.retain(|p| keep.contains(&p.date));
    }
    ranked.truncate(k);

    let mut item_ids: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    'pages: for p in &ranked {
        for id in page_sources.get(&p.page_id).into_iter().flatten() {
            if item_ids.len() == k {
                break 'pages;
            }
            if seen.insert(id.as_str()) {
                item_ids.push(id.clone());
            }
        }
    }
    Ok(EvidenceSet {
        question: qn.question.clone(),
        k,
        paths: ranked,
        item_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: String,
    pub answer: String,
    pub evidence_path_ids: Vec<PathId>,
    pub provider: ProviderMode,
}

/// Text available to the answerer besides path summaries: perceived page text by page id.
pub type PageTexts = BTreeMap<String, String>;

pub trait AnswerProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    fn answer(&self, question: &str, evidence: &EvidenceSet, pages: &PageTexts) -> Result<String>;
}

/// Answer failure that keeps the evidence it was given.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct AnswerFailure {
    pub error: Error,
    pub evidence: EvidenceSet,
}

pub fn answer(
    provider: &dyn AnswerProvider,
    question: &str,
    evidence: &EvidenceSet,
    pages: &PageTexts,
) -> std::result::Result<AnswerRecord, AnswerFailure> {
    match provider.answer(question, evidence, pages) {
        Ok(text) => Ok(AnswerRecord {
            question: question.to_string(),
            answer: text,
            evidence_path_ids: evidence.paths.iter().map(|p| p.path_id).collect(),
            provider: provider.mode(),
        }),
        Err(error) => Err(AnswerFailure {
            error,
            evidence: evidence.clone(),
        }),
    }
}

const CURRENCY_CUES: &[&str] = &["cost", "costs", "price", "pay", "paid", "spend", "spent", "total", "much", "amount", "bill", "fare", "fee"];
const CURRENCY_UNITS: &[&str] = &["eur", "euro", "euros", "usd", "dollars", "gbp", "pounds", "chf", "jpy", "yen", "cny", "rmb"];
const NUMBER_CUES: &[&str] = &["how many", "how much", "how long", "how far", "number of", "total", "cost", "price"];

/// Whether a question asks for a quantity.
pub fn is_number_question(question: &str) -> bool {
    let q = question.to_lowercase();
    NUMBER_CUES.iter().any(|c| q.contains(c))
}

/// Extractive offline answerer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAnswerer;

impl MockAnswerer {
    fn quantity(question: &str, evidence: &EvidenceSet, pages: &PageTexts) -> Option<String> {
        let words: Vec<String> = question
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let wants_currency = words.iter().any(|w| CURRENCY_CUES.contains(&w.as_str()));
        let mut texts: Vec<&str> = evidence.paths.iter().map(|p| p.summary.as_str()).collect();
        for page in evidence.page_ids() {
            if let Some(t) = pages.get(&page) {
                texts.push(t);
            }
        }
        let mut fallback = None;
        for text in texts {
            for phrase in extract_phrases(text, Mode::Document) {
                let Some((num, unit)) = phrase.split_once(' ') else { continue };
                if !num.starts_with(|c: char| c.is_ascii_digit()) {
                    continue;
                }
                let unit_asked = words.iter().any(|w| w == unit || w.trim_end_matches('s') == unit.trim_end_matches('s'));
                if unit_asked || (wants_currency && CURRENCY_UNITS.contains(&unit)) {
                    return Some(phrase);
                }
                fallback.get_or_insert(phrase);
            }
        }
        fallback
    }
}

impl AnswerProvider for MockAnswerer {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Mock
    }

    fn answer(&self, question: &str, evidence: &EvidenceSet, pages: &PageTexts) -> Result<String> {
        let Some(top) = evidence.paths.first() else {
            return Ok(INSUFFICIENT_EVIDENCE.to_string());
        };
        if is_number_question(question) {
            if let Some(q) = Self::quantity(question, evidence, pages) {
                return Ok(q);
            }
        }
        Ok(top.summary.clone())
    }
}

const ANSWER_SYSTEM: &str = "You answer questions about a person's past using only the memory evidence provided. Each evidence entry is one day: a short path summary and the text read from that day's scrapbook page. Reply with the answer only. If the evidence is insufficient, reply \"insufficient evidence\".";

pub struct RemoteAnswerer {
    client: ChatClient,
}

impl RemoteAnswerer {
    pub fn new(client: ChatClient) -> Self {
        RemoteAnswerer { client }
    }
}

pub fn answer_prompt(question: &str, evidence: &EvidenceSet, pages: &PageTexts) -> String {
    let mut out = String::new();
    for (i, p) in evidence.paths.iter().enumerate() {
        out.push_str(&format!("[{}] {} ({})\nPath: {}\n", i + 1, p.date, p.page_id, p.summary));
        if let Some(t) = pages.get(&p.page_id) {
            out.push_str(&format!("Page text:\n{t}\n"));
        }
        out.push('\n');
    }
    out.push_str(&format!("Question: {question}\nAnswer:"));
    out
}

impl AnswerProvider for RemoteAnswerer {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }

    fn answer(&self, question: &str, evidence: &EvidenceSet, pages: &PageTexts) -> Result<String> {
        self.client.complete(&ChatRequest {
            messages: vec![
                ChatMessage::system(ANSWER_SYSTEM),
                ChatMessage::user(answer_prompt(question, evidence, pages)),
            ],
            max_tokens: Some(256),
            temperature: Some(0.0),
            timeout: None,
        })
    }
}
