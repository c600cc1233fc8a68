//! Benchmark metrics, the benchmark runner, and the failure taxonomy.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chat::{extract_json_object, ChatClient, ChatMessage, ChatRequest};
use crate::error::{Error, Result};
use crate::perception::ProviderMode;
use crate::retrieval::{AnswerProvider, EvidenceSet, PageTexts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Number,
    ListRecall,
    OpenEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub qid: String,
    pub question: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub answer: String,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked_date: Option<NaiveDate>,
}

pub fn load_questions(path: &Path) -> Result<Vec<BenchmarkQuestion>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    parse_questions(&text)
}

pub fn parse_questions(text: &str) -> Result<Vec<BenchmarkQuestion>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: BenchmarkQuestion = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: format!("invalid benchmark question: {e}"),
        })?;
        if !seen.insert(q.qid.clone()) {
            return Err(Error::Manifest {
                line: i + 1,
                message: format!("duplicate qid `{}`", q.qid),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions(path: &Path, questions: &[BenchmarkQuestion]) -> Result<()> {
    let mut text = String::new();
    for q in questions {
        text.push_str(&serde_json::to_string(q)?);
        text.push('\n');
    }
    crate::util::write_atomic(path, text.as_bytes())
}

const CURRENCY_SYMBOLS: &[char] = &['€', '$', '£', '¥'];
const CURRENCY_WORDS: &[&str] = &["eur", "euro", "euros", "usd", "dollar", "dollars", "gbp", "pounds", "chf", "jpy", "yen", "cny", "rmb"];

/// Normalized form for exact-match comparison.
pub fn normalize_value(s: &str) -> String {
    let lower = s.trim().to_lowercase();
    let stripped: String = lower
        .chars()
        .filter(|c| !CURRENCY_SYMBOLS.contains(c))
        .collect();
    let words: Vec<&str> = stripped
        .split_whitespace()
        .filter(|w| !CURRENCY_WORDS.contains(w))
        .collect();
    let joined = words.join(" ");
    // Thousands separators: commas between digit groups.
    let mut out = String::with_capacity(joined.len());
    let chars: Vec<char> = joined.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let between_digits = i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit();
        if c == ',' && between_digits {
            continue;
        }
        out.push(c);
    }
    out
}

/// 1 when the normalized values agree, numerically when both parse.
pub fn exact_match(gold: &str, predicted: &str) -> f64 {
    let (a, b) = (normalize_value(gold), normalize_value(predicted));
    let equal = match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    };
    if equal {
        1.0
    } else {
        0.0
    }
}

pub fn to_list(s: &str) -> BTreeSet<String> {
    s.split([',', ';', '\n'])
        .map(|p| p.trim().to_lowercase())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Jaccard overlap of the two answers as lists; both empty counts as 1.
pub fn jaccard(gold: &str, predicted: &str) -> f64 {
    let (a, b) = (to_list(gold), to_list(predicted));
    let union = a.union(&b).count();
    if union == 0 {
        log::warn!("jaccard of two empty lists scored as 1");
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn recall_at_k<S: AsRef<str>, T: AsRef<str>>(gold: &[S], retrieved: &[T]) -> Result<f64> {
    let e: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    if e.is_empty() {
        return Err(Error::Eval("unscorable question: empty evidence set".into()));
    }
    let r: BTreeSet<&str> = retrieved.iter().map(AsRef::as_ref).collect();
    Ok(e.intersection(&r).count() as f64 / e.len() as f64)
}

pub fn joint_at_k(qs: f64, recall: f64) -> f64 {
    qs * recall
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn token_f1(gold: &str, predicted: &str) -> f64 {
    let g = tokens(gold);
    let p = tokens(predicted);
    if g.is_empty() || p.is_empty() {
        return if g.is_empty() && p.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores open-ended answers.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, gold: &str, predicted: &str) -> Result<f64>;
}

/// Token F1 of at least 0.5 counts as correct.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineJudge;

impl Judge for OfflineJudge {
    fn judge(&self, _question: &str, gold: &str, predicted: &str) -> Result<f64> {
        Ok(if token_f1(gold, predicted) >= 0.5 { 1.0 } else { 0.0 })
    }
}

const JUDGE_SYSTEM: &str = "You grade answers to questions about a person's memories. Given the question, the ground-truth answer and a predicted answer, decide whether the prediction is correct. Return only a JSON object with key \"correct\" (true or false).";

pub struct RemoteJudge {
    client: ChatClient,
}

impl RemoteJudge {
    pub fn new(client: ChatClient) -> Self {
        RemoteJudge { client }
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, question: &str, gold: &str, predicted: &str) -> Result<f64> {
        let reply = self.client.complete(&ChatRequest {
            messages: vec![
                ChatMessage::system(JUDGE_SYSTEM),
                ChatMessage::user(format!(
                    "Question: {question}\nGround truth: {gold}\nPrediction: {predicted}"
                )),
            ],
            max_tokens: Some(32),
            temperature: Some(0.0),
            timeout: None,
        })?;
        match extract_json_object(&reply)?.get("correct") {
            Some(serde_json::Value::Bool(b)) => Ok(if *b { 1.0 } else { 0.0 }),
            _ => Err(Error::Reply("judge reply lacks a boolean `correct`".into())),
        }
    }
}

/// Per-question score dispatched on question type. Only open-ended questions reach the judge.
pub fn qs(qtype: QuestionType, question: &str, gold: &str, predicted: &str, judge: &dyn Judge) -> Result<f64> {
    match qtype {
        QuestionType::Number => Ok(exact_match(gold, predicted)),
        QuestionType::ListRecall => Ok(jaccard(gold, predicted)),
        QuestionType::OpenEnd => judge.judge(question, gold, predicted),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Item,
    Page,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item" => Ok(Granularity::Item),
            "page" => Ok(Granularity::Page),
            other => Err(Error::Config(format!("unknown granularity `{other}` (item|page)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub qtype: QuestionType,
    pub prediction: Option<String>,
    pub retrieved: Vec<String>,
    pub qs: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub joint_at_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QuestionResult {
    /// Strictly incorrect: scored below 1.
    pub fn incorrect(&self) -> bool {
        self.qs.is_some_and(|q| q < 1.0)
    }

    pub fn correct(&self) -> bool {
        self.qs.is_some_and(|q| q >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    pub scored: usize,
    pub qs: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub joint_at_k: Option<f64>,
    pub number: Option<f64>,
    pub list_recall: Option<f64>,
    pub open_end: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(results: &[QuestionResult]) -> Aggregates {
    let by_type = |t: QuestionType| mean(results.iter().filter(|r| r.qtype == t).filter_map(|r| r.qs));
    Aggregates {
        questions: results.len(),
        scored: results.iter().filter(|r| r.qs.is_some()).count(),
        qs: mean(results.iter().filter_map(|r| r.qs)),
        recall_at_k: mean(results.iter().filter_map(|r| r.recall_at_k)),
        joint_at_k: mean(results.iter().filter_map(|r| r.joint_at_k)),
        number: by_type(QuestionType::Number),
        list_recall: by_type(QuestionType::ListRecall),
        open_end: by_type(QuestionType::OpenEnd),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub k: usize,
    pub granularity: Granularity,
    pub results: Vec<QuestionResult>,
    pub aggregates: Aggregates,
}

impl RunResult {
    pub fn new(k: usize, granularity: Granularity, results: Vec<QuestionResult>) -> Self {
        RunResult {
            k,
            granularity,
            aggregates: aggregate(&results),
            results,
        }
    }

    pub fn load(path: &Path) -> Result<RunResult> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// What the runner needs from a memory store.
pub trait Retriever: Sync {
    fn retrieve(&self, question: &str, k: usize) -> Result<EvidenceSet>;

    fn page_texts(&self, evidence: &EvidenceSet) -> PageTexts;

    /// Page holding `item_id`, for page-granularity recall.
    fn page_of(&self, item_id: &str) -> Option<String>;
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub k: usize,
    pub granularity: Granularity,
    pub max_inflight: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k: crate::retrieval::DEFAULT_K,
            granularity: Granularity::Item,
            max_inflight: 4,
        }
    }
}

fn evaluate_one(
    q: &BenchmarkQuestion,
    store: &dyn Retriever,
    answerer: &dyn AnswerProvider,
    judge: &dyn Judge,
    opts: &RunOptions,
) -> QuestionResult {
    let mut r = QuestionResult {
        qid: q.qid.clone(),
        qtype: q.qtype,
        prediction: None,
        retrieved: Vec::new(),
        qs: None,
        recall_at_k: None,
        joint_at_k: None,
        error: None,
    };
    let evidence = match store.retrieve(&q.question, opts.k) {
        Ok(e) => e,
        Err(e) => {
            log::warn!("question {}: retrieval failed: {e}", q.qid);
            r.error = Some(format!("retrieval: {e}"));
            return r;
        }
    };
    let (gold, retrieved): (Vec<String>, Vec<String>) = match opts.granularity {
        Granularity::Item => (q.evidence.clone(), evidence.item_ids.clone()),
        Granularity::Page => {
            let gold: BTreeSet<String> = q.evidence.iter().filter_map(|i| store.page_of(i)).collect();
            let mut pages = evidence.page_ids();
            pages.truncate(opts.k);
            (gold.into_iter().collect(), pages)
        }
    };
    r.retrieved = retrieved;
    match recall_at_k(&gold, &r.retrieved) {
        Ok(v) => r.recall_at_k = Some(v),
        Err(e) => log::warn!("question {}: {e}", q.qid),
    }
    let texts = store.page_texts(&evidence);
    let prediction = match crate::retrieval::answer(answerer, &q.question, &evidence, &texts) {
        Ok(rec) => rec.answer,
        Err(f) => {
            log::warn!("question {}: answer failed: {}", q.qid, f.error);
            r.error = Some(format!("answer: {}", f.error));
            return r;
        }
    };
    match qs(q.qtype, &q.question, &q.answer, &prediction, judge) {
        Ok(v) => {
            r.qs = Some(v);
            r.joint_at_k = r.recall_at_k.map(|rec| joint_at_k(v, rec));
        }
        Err(e) => {
            log::warn!("question {}: unscored, judge failed: {e}", q.qid);
            r.error = Some(format!("judge: {e}"));
        }
    }
    r.prediction = Some(prediction);
    r
}

/// retrieve, answer, and score every question. Questions run concurrently up to
/// `max_inflight`; results keep the input order.
pub fn run_benchmark(
    store: &dyn Retriever,
    questions: &[BenchmarkQuestion],
    answerer: &dyn AnswerProvider,
    judge: &dyn Judge,
    opts: &RunOptions,
) -> Result<RunResult> {
    if opts.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_inflight.max(1))
        .build()
        .map_err(|e| Error::Eval(format!("thread pool: {e}")))?;
    let results: Vec<QuestionResult> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| evaluate_one(q, store, answerer, judge, opts))
            .collect()
    });
    Ok(RunResult::new(opts.k, opts.granularity, results))
}

/// Answers every question with its ground truth; the ceiling for QS.
pub struct OracleAnswerer {
    answers: BTreeMap<String, String>,
}

impl OracleAnswerer {
    pub fn new(questions: &[BenchmarkQuestion]) -> Self {
        OracleAnswerer {
            answers: questions.iter().map(|q| (q.question.clone(), q.answer.clone())).collect(),
        }
    }
}

impl AnswerProvider for OracleAnswerer {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Mock
    }

    fn answer(&self, question: &str, _evidence: &EvidenceSet, _pages: &PageTexts) -> Result<String> {
        Ok(self.answers.get(question).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    EmGraph,
    OpticalForgetting,
    LlmReasoning,
}

impl FailureKind {
    pub const ALL: [FailureKind; 3] = [FailureKind::EmGraph, FailureKind::OpticalForgetting, FailureKind::LlmReasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::EmGraph => "em_graph",
            FailureKind::OpticalForgetting => "optical_forgetting",
            FailureKind::LlmReasoning => "llm_reasoning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLabel {
    pub qid: String,
    pub label: FailureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub labels: Vec<FailureLabel>,
    pub incorrect: usize,
    pub counts: BTreeMap<FailureKind, usize>,
    /// Percentages of `incorrect`.
    pub shares: BTreeMap<FailureKind, f64>,
    pub per_type: BTreeMap<QuestionType, BTreeMap<FailureKind, usize>>,
}

impl FailureReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("qid,label\n");
        for l in &self.labels {
            out.push_str(&format!("{},{}\n", csv_field(&l.qid), l.label.as_str()));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Labels each strictly incorrect answer of `run`: missing evidence is a graph
/// failure; full recall with a correct baseline blames forgetting; otherwise the
/// reasoning step.
pub fn classify_failures(run: &RunResult, baseline: &RunResult) -> Result<FailureReport> {
    let base: BTreeMap<&str, &QuestionResult> = baseline.results.iter().map(|r| (r.qid.as_str(), r)).collect();
    let ours: BTreeSet<&str> = run.results.iter().map(|r| r.qid.as_str()).collect();
    let theirs: BTreeSet<&str> = base.keys().copied().collect();
    if ours != theirs {
        let only: Vec<&str> = ours.symmetric_difference(&theirs).copied().take(5).collect();
        return Err(Error::Eval(format!("runs cover different questions (e.g. {})", only.join(", "))));
    }
    let mut labels = Vec::new();
    let mut per_type: BTreeMap<QuestionType, BTreeMap<FailureKind, usize>> = BTreeMap::new();
    for r in run.results.iter().filter(|r| r.incorrect()) {
        let label = match r.recall_at_k {
            Some(rec) if rec < 1.0 => FailureKind::EmGraph,
            _ if base[r.qid.as_str()].correct() => FailureKind::OpticalForgetting,
            _ => FailureKind::LlmReasoning,
        };
        *per_type.entry(r.qtype).or_default().entry(label).or_default() += 1;
        labels.push(FailureLabel {
            qid: r.qid.clone(),
            label,
        });
    }
    let incorrect = labels.len();
    let counts: BTreeMap<FailureKind, usize> = FailureKind::ALL
        .iter()
        .map(|k| (*k, labels.iter().filter(|l| l.label == *k).count()))
        .collect();
    let shares = counts
        .iter()
        .map(|(k, &c)| (*k, if incorrect == 0 { 0.0 } else { 100.0 * c as f64 / incorrect as f64 }))
        .collect();
    Ok(FailureReport {
        labels,
        incorrect,
        counts,
        shares,
        per_type,
    })
}
