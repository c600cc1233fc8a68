use std::collections::HashSet;

use chrono::NaiveDate;

use super::tokenizer::{extract_phrases, Mode};
use super::{
    clean_phrases, rank_salience, FusedText, NodeContext, PageView, PathSummary, PerceptionProvider,
    PerceptionResult, ProviderMode, SalientItem, MAX_DOCUMENT_NODES, MAX_PATH_NODES, MAX_QUERY_NODES,
};
use crate::corpus::MediaKind;
use crate::error::{Error, Result};
use crate::forgetting::survives;
use crate::pagebuilder::text_header;

/// Offline provider. Perception reads the page's source items instead of pixels
/// and simulates fading with the legibility threshold of the page's fidelity.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockPerception;

impl MockPerception {
    /// Perception of the sources at full legibility.
    pub fn read_sources(page: &PageView<'_>) -> PerceptionResult {
        let mut ocr = Vec::new();
        let mut visual = Vec::new();
        for item in page.sources {
            match item.kind {
                MediaKind::Text => ocr.push(format!("{}\n{}", text_header(item), item.payload)),
                MediaKind::Image | MediaKind::Video => {
                    if let Some(c) = item.meta.get("caption").filter(|c| !c.trim().is_empty()) {
                        visual.push(c.trim().to_string());
                    }
                }
            }
        }
        let ocr_text = ocr.join("\n");
        let visual_summary = visual.join("\n");
        let fused = super::fuse_text(&ocr_text, &visual_summary);
        let phrases = extract_phrases(&fused.text, Mode::Document);
        let n = phrases.len();
        let salient_items = phrases
            .into_iter()
            .enumerate()
            .map(|(rank, phrase)| SalientItem {
                phrase,
                salience: rank_salience(rank, n),
            })
            .collect();
        PerceptionResult {
            ocr_text,
            visual_summary,
            salient_items,
        }
    }
}

fn words(phrase: &str) -> Vec<String> {
    phrase
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Replaces every word of `text` found in `blur` with `#`s of the same length,
/// standing in for text that is no longer readable.
fn mask_words(text: &str, blur: &HashSet<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if blur.contains(&word.to_lowercase()) {
            out.extend(std::iter::repeat('#').take(word.chars().count()));
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

impl PerceptionProvider for MockPerception {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Mock
    }

    fn perceive_page(&self, page: &PageView<'_>) -> Result<PerceptionResult> {
        let sidecar = page
            .sidecar
            .ok_or_else(|| Error::MissingSidecar(page.page_id.to_string()))?;
        let mut result = Self::read_sources(page);
        let legibility = sidecar.fidelity.legibility;
        let (kept, lost): (Vec<SalientItem>, Vec<SalientItem>) =
            result.salient_items.into_iter().partition(|s| survives(s.salience, legibility));
        if !lost.is_empty() {
            let keep: HashSet<String> = kept.iter().flat_map(|s| words(&s.phrase)).collect();
            let blur: HashSet<String> = lost
                .iter()
                .flat_map(|s| words(&s.phrase))
                .filter(|w| !keep.contains(w))
                .collect();
            result.ocr_text = mask_words(&result.ocr_text, &blur);
            result.visual_summary = mask_words(&result.visual_summary, &blur);
        }
        result.salient_items = kept;
        Ok(result)
    }

    fn extract_nodes(&self, fused: &FusedText, _context: &NodeContext) -> Result<Vec<String>> {
        let mut phrases = extract_phrases(&fused.text, Mode::Document);
        phrases.truncate(MAX_DOCUMENT_NODES);
        Ok(phrases)
    }

    fn extract_query_nodes(&self, question: &str) -> Result<Vec<String>> {
        let mut phrases = extract_phrases(question, Mode::Query);
        if phrases.is_empty() {
            return Err(Error::NoExtractableNodes);
        }
        phrases.truncate(MAX_QUERY_NODES);
        Ok(phrases)
    }

    fn summarize_path(&self, perception: &PerceptionResult, date: NaiveDate) -> Result<PathSummary> {
        let semantic_nodes: Vec<String> =
            clean_phrases(perception.salient_items.iter().map(|s| s.phrase.clone()))
                .into_iter()
                .take(MAX_PATH_NODES)
                .collect();
        let body = if semantic_nodes.is_empty() {
            "(empty)".to_string()
        } else {
            semantic_nodes.join(" -> ")
        };
        Ok(PathSummary {
            em_path: format!("{} : {body}", date.format("%Y-%m-%d")),
            semantic_nodes,
        })
    }
}
