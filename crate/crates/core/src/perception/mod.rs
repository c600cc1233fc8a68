//! Optical perception and semantic extraction behind a provider boundary.
//!
//! [`MockPerception`] is deterministic and offline. [`RemotePerception`] talks to
//! an OpenAI-compatible chat endpoint using the prompt templates in `prompts/`.

mod mock;
mod remote;
pub mod tokenizer;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::MediaItem;
use crate::error::{Error, Result};
use crate::pagebuilder::ScrapbookPage;

pub use mock::MockPerception;
pub use remote::RemotePerception;

pub const NODE_EXTRACTION_SYSTEM: &str = include_str!("../../prompts/node_extraction.system.txt");
pub const NODE_EXTRACTION_USER: &str = include_str!("../../prompts/node_extraction.user.txt");
pub const QUERY_NODES_SYSTEM: &str = include_str!("../../prompts/query_nodes.system.txt");
pub const QUERY_NODES_USER: &str = include_str!("../../prompts/query_nodes.user.txt");
pub const PAGE_PERCEPTION_SYSTEM: &str = include_str!("../../prompts/page_perception.system.txt");
pub const PATH_SUMMARY_SYSTEM: &str = include_str!("../../prompts/path_summary.system.txt");
pub const PATH_SUMMARY_USER: &str = include_str!("../../prompts/path_summary.user.txt");

pub const MAX_DOCUMENT_NODES: usize = 8;
pub const MAX_QUERY_NODES: usize = 10;
pub const MAX_PATH_NODES: usize = 10;
pub const VISUAL_MARKER: &str = "\n[VISUAL] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Remote,
    #[default]
    Mock,
}

impl std::str::FromStr for ProviderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(ProviderMode::Remote),
            "mock" => Ok(ProviderMode::Mock),
            other => Err(Error::Config(format!("unknown provider mode `{other}` (remote|mock)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientItem {
    pub phrase: String,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub ocr_text: String,
    pub visual_summary: String,
    pub salient_items: Vec<SalientItem>,
}

impl PerceptionResult {
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        for item in &self.salient_items {
            if item.phrase.trim().is_empty() || item.phrase != item.phrase.to_lowercase() {
                return Err(Error::Reply(format!("salient phrase `{}` must be nonempty lowercase", item.phrase)));
            }
            if !(0.0..=1.0).contains(&item.salience) {
                return Err(Error::Reply(format!("salience {} outside [0, 1]", item.salience)));
            }
            if item.salience > prev {
                return Err(Error::Reply("salient items not sorted by salience".into()));
            }
            prev = item.salience;
        }
        Ok(())
    }

    pub fn salience_of(&self, phrase: &str) -> Option<f64> {
        self.salient_items.iter().find(|s| s.phrase == phrase).map(|s| s.salience)
    }

    pub fn fused(&self) -> FusedText {
        fuse_text(&self.ocr_text, &self.visual_summary)
    }
}

/// OCR text with the visual description appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedText {
    pub text: String,
}

pub fn fuse_text(ocr: &str, visual_summary: &str) -> FusedText {
    let text = if visual_summary.is_empty() {
        ocr.to_string()
    } else {
        format!("{ocr}{VISUAL_MARKER}{visual_summary}")
    };
    FusedText { text }
}

/// Context slots of the node-extraction prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeContext {
    pub date: Option<NaiveDate>,
    pub timestamp: Option<String>,
    pub subject: Option<String>,
    pub summary: Option<String>,
}

impl NodeContext {
    pub fn for_item(item: &MediaItem) -> Self {
        NodeContext {
            date: Some(item.day()),
            timestamp: Some(item.timestamp.format("%Y-%m-%dT%H:%M").to_string()),
            subject: item.meta.get("subject").cloned(),
            summary: item.meta.get("summary").cloned(),
        }
    }

    pub fn for_date(date: NaiveDate) -> Self {
        NodeContext {
            date: Some(date),
            ..NodeContext::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub semantic_nodes: Vec<String>,
    pub em_path: String,
}

/// What a provider gets to see of a page.
#[derive(Debug, Clone, Copy)]
pub struct PageView<'a> {
    pub page_id: &'a str,
    pub raster: &'a [u8],
    pub sidecar: Option<&'a ScrapbookPage>,
    pub sources: &'a [&'a MediaItem],
}

impl<'a> PageView<'a> {
    pub fn of(page: &'a ScrapbookPage, sources: &'a [&'a MediaItem]) -> Self {
        PageView {
            page_id: &page.page_id,
            raster: &page.raster,
            sidecar: Some(page),
            sources,
        }
    }
}

pub trait PerceptionProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    fn perceive_page(&self, page: &PageView<'_>) -> Result<PerceptionResult>;

    fn extract_nodes(&self, fused: &FusedText, context: &NodeContext) -> Result<Vec<String>>;

    fn extract_query_nodes(&self, question: &str) -> Result<Vec<String>>;

    fn summarize_path(&self, perception: &PerceptionResult, date: NaiveDate) -> Result<PathSummary>;
}

/// Rank-based salience for the `rank`-th (0-based) of `count` phrases.
pub fn rank_salience(rank: usize, count: usize) -> f64 {
    1.0 - (rank + 1) as f64 / (count + 1) as f64
}

/// Lowercases, trims, drops empties and duplicates, keeping first occurrences.
pub(crate) fn clean_phrases<I: IntoIterator<Item = String>>(phrases: I) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in phrases {
        let p = p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if !p.is_empty() && !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_cases() {
        assert_eq!(fuse_text("abc", "").text, "abc");
        assert_eq!(fuse_text("", "two dogs").text, "\n[VISUAL] two dogs");
        assert_eq!(
            fuse_text("receipt 240 eur", "hotel facade").text,
            "receipt 240 eur\n[VISUAL] hotel facade"
        );
    }

    #[test]
    fn rank_salience_values() {
        let s: Vec<f64> = (0..3).map(|r| rank_salience(r, 3)).collect();
        assert_eq!(s, vec![0.75, 0.5, 0.25]);
    }

    #[test]
    fn validation() {
        let mut r = PerceptionResult {
            ocr_text: String::new(),
            visual_summary: String::new(),
            salient_items: vec![
                SalientItem { phrase: "a".into(), salience: 0.5 },
                SalientItem { phrase: "b".into(), salience: 0.7 },
            ],
        };
        assert!(r.validate().is_err());
        r.salient_items.reverse();
        r.validate().unwrap();
        r.salient_items[0].phrase = "B".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn prompts_are_bundled() {
        assert!(PAGE_PERCEPTION_SYSTEM.starts_with("You analyze a rendered daily scrapbook page."));
        assert!(QUERY_NODES_USER.contains("{question}"));
        assert!(PATH_SUMMARY_USER.contains("{perception_text}"));
        assert!(NODE_EXTRACTION_USER.contains("{detail}"));
    }
}
