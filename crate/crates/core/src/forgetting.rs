//! Optical forgetting: staged lossy degradation of page rasters, the node
//! fading it induces, and pruning of the memory graph afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use crate::corpus::MediaItem;
use crate::embedding::EmbeddingProvider;
use crate::emgraph::{EmGraph, NodeId, PathId};
use crate::error::{Error, Result};
use crate::pagebuilder::{encode_jpeg, PageStore, ScrapbookPage};
use crate::perception::{NodeContext, PageView, PerceptionProvider};
use crate::util::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Recent,
    Mid,
    Old,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Recent, Stage::Mid, Stage::Old];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Recent => "recent",
            Stage::Mid => "mid",
            Stage::Old => "old",
        })
    }
}

/// Current fidelity of a page raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationState {
    pub stage: Stage,
    pub applied_quality: u8,
    pub applied_scale: f64,
    /// `applied_quality / 100 * applied_scale`
    pub legibility: f64,
}

impl DegradationState {
    pub fn fresh() -> Self {
        Self::with(Stage::Recent, crate::pagebuilder::FRESH_QUALITY, 1.0)
    }

    pub fn with(stage: Stage, quality: u8, scale: f64) -> Self {
        DegradationState {
            stage,
            applied_quality: quality,
            applied_scale: scale,
            legibility: legibility(quality, scale),
        }
    }
}

pub fn legibility(quality: u8, scale: f64) -> f64 {
    quality as f64 / 100.0 * scale
}

/// A mention with salience `salience` is still readable at legibility `legibility`.
pub fn survives(salience: f64, legibility: f64) -> bool {
    // Tolerance absorbs products like 0.4 * 0.6 landing a hair off 0.24.
    salience + 1e-9 >= 1.0 - legibility
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingPolicy {
    pub name: String,
    /// `(t1, t2)` in days; `None` keeps every page recent.
    pub boundaries: Option<(u32, u32)>,
    pub quality: [u8; 3],
    pub scale: [f64; 3],
}

pub const PRESET_NAMES: [&str; 5] = ["no-forget", "very_soft", "softer_old", "timed-gentle", "boundary_365"];

impl ForgettingPolicy {
    pub fn presets() -> Vec<ForgettingPolicy> {
        let p = |name: &str, boundaries, quality, scale| ForgettingPolicy {
            name: name.to_string(),
            boundaries,
            quality,
            scale,
        };
        vec![
            p("no-forget", None, [100, 100, 100], [1.0, 1.0, 1.0]),
            p("very_soft", Some((180, 730)), [95, 82, 70], [1.0, 0.95, 0.85]),
            p("softer_old", Some((180, 730)), [90, 75, 60], [1.0, 0.90, 0.80]),
            p("timed-gentle", Some((180, 730)), [90, 70, 40], [1.0, 0.85, 0.60]),
            p("boundary_365", Some((365, 900)), [95, 75, 55], [1.0, 0.90, 0.75]),
        ]
    }

    pub fn preset(name: &str) -> Result<ForgettingPolicy> {
        Self::presets()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPreset {
                name: name.to_string(),
                known: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            })
    }

    pub fn from_json(bytes: &[u8]) -> Result<ForgettingPolicy> {
        let policy: ForgettingPolicy =
            serde_json::from_slice(bytes).map_err(|e| Error::Policy(format!("invalid policy file: {e}")))?;
        policy.validate()?;
        Ok(policy)
    }

    /// A preset name, or a path to a policy JSON file.
    pub fn resolve(name_or_path: &str) -> Result<ForgettingPolicy> {
        let path = Path::new(name_or_path);
        if PRESET_NAMES.contains(&name_or_path) || !path.is_file() {
            return Self::preset(name_or_path);
        }
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_json(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Policy(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return fail("empty name".into());
        }
        if let Some((t1, t2)) = self.boundaries {
            if !(0 < t1 && t1 < t2) {
                return fail(format!("boundaries must satisfy 0 < t1 < t2, got {t1}/{t2}"));
            }
        }
        if self.quality.iter().any(|q| !(1..=100).contains(q)) {
            return fail(format!("quality {:?} outside 1..=100", self.quality));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return fail(format!("scale {:?} outside (0, 1]", self.scale));
        }
        if self.quality.windows(2).any(|w| w[1] > w[0]) || self.scale.windows(2).any(|w| w[1] > w[0]) {
            return fail("quality and scale must not increase with stage".into());
        }
        Ok(())
    }

    pub fn quality_at(&self, stage: Stage) -> u8 {
        self.quality[stage.index()]
    }

    pub fn scale_at(&self, stage: Stage) -> f64 {
        self.scale[stage.index()]
    }

    pub fn state_at(&self, stage: Stage) -> DegradationState {
        DegradationState::with(stage, self.quality_at(stage), self.scale_at(stage))
    }
}

fn fmt_scale(s: f64) -> String {
    if s == 1.0 {
        "1.0".into()
    } else {
        format!("{s:.2}")
    }
}

/// One table row: `timed-gentle  Q 90 / 70 / 40  S 1.0 / 0.85 / 0.60  T 180 / 730d`.
impl fmt::Display for ForgettingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q: Vec<String> = self.quality.iter().map(|q| q.to_string()).collect();
        let s: Vec<String> = self.scale.iter().map(|s| fmt_scale(*s)).collect();
        let t = match self.boundaries {
            Some((t1, t2)) => format!("{t1} / {t2}d"),
            None => "N/A".into(),
        };
        write!(f, "{}  Q {}  S {}  T {t}", self.name, q.join(" / "), s.join(" / "))
    }
}

pub fn stage_of(age_days: i64, policy: &ForgettingPolicy) -> Stage {
    match policy.boundaries {
        None => Stage::Recent,
        Some((t1, t2)) => {
            if age_days <= t1 as i64 {
                Stage::Recent
            } else if age_days <= t2 as i64 {
                Stage::Mid
            } else {
                Stage::Old
            }
        }
    }
}

pub fn age_days(date: NaiveDate, now: NaiveDate) -> i64 {
    (now - date).num_days().max(0)
}

pub fn scaled_dimension(base: u32, scale: f64) -> u32 {
    ((base as f64 * scale).round() as u32).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub page: ScrapbookPage,
    pub from: Stage,
    pub to: Stage,
    pub changed: bool,
}

/// Moves `page` to a deeper stage when its age calls for one and applies that
/// stage's quality and scale. Within a stage this is a no-op, and stages never move
/// back. Parameters are clamped to those already applied, so a gentler policy never
/// restores fidelity. The raster is resized from its current pixels, so detail lost
/// earlier stays lost.
pub fn degrade_page(page: &ScrapbookPage, policy: &ForgettingPolicy, now: NaiveDate) -> Result<Degraded> {
    let from = page.fidelity.stage;
    let target = stage_of(age_days(page.date, now), policy).max(from);
    if target == from {
        return Ok(Degraded {
            page: page.clone(),
            from,
            to: from,
            changed: false,
        });
    }
    let quality = policy.quality_at(target).min(page.fidelity.applied_quality);
    let scale = policy.scale_at(target).min(page.fidelity.applied_scale);
    let same_params =
        quality == page.fidelity.applied_quality && (scale - page.fidelity.applied_scale).abs() < 1e-12;
    let state = DegradationState::with(target, quality, scale);
    let mut out = page.clone();
    out.fidelity = state;
    if !same_params {
        let img = page.decode()?;
        let w = scaled_dimension(page.base_width, state.applied_scale);
        let h = scaled_dimension(page.base_height, state.applied_scale);
        let img = if (w, h) == img.dimensions() {
            img
        } else {
            imageops::resize(&img, w, h, FilterType::Triangle)
        };
        out.raster = encode_jpeg(&img, state.applied_quality)?;
        out.layout = page.rescaled_layout(w, h);
        out.width = w;
        out.height = h;
    }
    Ok(Degraded {
        page: out,
        from,
        to: target,
        changed: true,
    })
}

/// A node's mention on a page.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageMention {
    pub page_id: String,
    pub node_id: NodeId,
}

pub enum FadeMode<'a> {
    /// A mention survives iff its salience reaches `1 - legibility`.
    Legibility,
    /// Re-run perception and extraction on the degraded raster; a mention survives
    /// iff some re-extracted phrase is within `tau_q` of its node.
    Reperceive {
        perception: &'a dyn PerceptionProvider,
        embedder: &'a dyn EmbeddingProvider,
        tau_q: f64,
    },
}

fn page_nodes<'g>(page_id: &'g str, graph: &'g EmGraph) -> impl Iterator<Item = &'g crate::emgraph::SemanticNode> + 'g {
    graph.nodes().filter(move |n| n.source_pages.contains(page_id))
}

/// Mentions on `page` lost at its current fidelity. Nothing is mutated.
pub fn fade_nodes(
    page: &ScrapbookPage,
    graph: &EmGraph,
    mode: &FadeMode<'_>,
    sources: &[&MediaItem],
) -> Result<Vec<PageMention>> {
    let lost = match mode {
        FadeMode::Legibility => {
            let l = page.fidelity.legibility;
            page_nodes(&page.page_id, graph)
                .filter(|n| {
                    let s = n.mention_salience.get(&page.page_id).copied().unwrap_or(n.salience);
                    !survives(s, l)
                })
                .map(|n| n.node_id)
                .collect::<Vec<_>>()
        }
        FadeMode::Reperceive {
            perception,
            embedder,
            tau_q,
        } => {
            let seen = perception.perceive_page(&PageView::of(page, sources))?;
            let fused = seen.fused();
            let mut phrases = perception.extract_nodes(&fused, &NodeContext::for_date(page.date))?;
            for s in &seen.salient_items {
                if !phrases.contains(&s.phrase) {
                    phrases.push(s.phrase.clone());
                }
            }
            let vectors = if phrases.is_empty() { Vec::new() } else { embedder.embed(&phrases)? };
            page_nodes(&page.page_id, graph)
                .filter(|n| !vectors.iter().any(|v| cosine(v, &n.centroid) >= *tau_q))
                .map(|n| n.node_id)
                .collect()
        }
    };
    Ok(lost
        .into_iter()
        .map(|node_id| PageMention {
            page_id: page.page_id.clone(),
            node_id,
        })
        .collect())
}

/// When a path that lost nodes is still an event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRule {
    pub min_survivors: usize,
    pub min_fraction: f64,
}

impl Default for CoherenceRule {
    fn default() -> Self {
        CoherenceRule {
            min_survivors: 2,
            min_fraction: 0.5,
        }
    }
}

impl CoherenceRule {
    pub fn holds(&self, survivors: usize, original_len: usize) -> bool {
        survivors >= self.min_survivors && survivors as f64 >= self.min_fraction * original_len as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub lost_mentions: Vec<PageMention>,
    pub pruned_paths: Vec<PathId>,
    pub removed_nodes: Vec<NodeId>,
}

/// Drops the lost mentions from their page's paths, removes paths that are no
/// longer coherent and then every node left on no path. Validates all mentions
/// before touching the graph.
pub fn prune_graph(graph: &mut EmGraph, lost: &[PageMention], rule: &CoherenceRule) -> Result<PruneReport> {
    for m in lost {
        let node = graph
            .node(m.node_id)
            .ok_or_else(|| Error::Graph(format!("lost mention of unknown node {}", m.node_id)))?;
        if !node.source_pages.contains(&m.page_id) {
            return Err(Error::Graph(format!(
                "node {} has no mention on {}",
                m.node_id, m.page_id
            )));
        }
    }
    let lost_set: BTreeSet<&PageMention> = lost.iter().collect();
    let mut touched_paths = BTreeSet::new();
    let mut touched_nodes = BTreeSet::new();
    for m in &lost_set {
        let paths: Vec<PathId> = graph
            .q()
            .paths_of(m.node_id)
            .filter(|p| graph.path(*p).is_some_and(|p| p.page_id == m.page_id))
            .collect();
        for p in paths {
            graph.drop_incidence(p, m.node_id);
            touched_paths.insert(p);
        }
        touched_nodes.insert(m.node_id);
    }
    let mut pruned_paths = Vec::new();
    for p in touched_paths {
        let path = graph.path(p).expect("touched path exists");
        if !rule.holds(path.node_ids.len(), path.original_len) {
            for n in path.node_ids.clone() {
                touched_nodes.insert(n);
            }
            graph.remove_path(p);
            pruned_paths.push(p);
        }
    }
    for &n in &touched_nodes {
        graph.refresh_mentions(n);
    }
    let orphans: Vec<NodeId> = graph
        .nodes()
        .filter(|n| graph.q().column_sum(n.node_id) == 0)
        .map(|n| n.node_id)
        .collect();
    for &n in &orphans {
        graph.remove_node(n);
    }
    Ok(PruneReport {
        lost_mentions: lost_set.into_iter().cloned().collect(),
        pruned_paths,
        removed_nodes: orphans,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub scrapbook_bytes: u64,
    pub graph_bytes: u64,
    pub total_bytes: u64,
    pub baseline_bytes: u64,
    /// `1 - total / baseline`; absent without a baseline.
    pub saving_fraction: Option<f64>,
}

impl StorageReport {
    pub fn from_parts(scrapbook_bytes: u64, graph_bytes: u64, baseline_bytes: u64) -> Self {
        let total_bytes = scrapbook_bytes + graph_bytes;
        StorageReport {
            scrapbook_bytes,
            graph_bytes,
            total_bytes,
            baseline_bytes,
            saving_fraction: (baseline_bytes > 0).then(|| 1.0 - total_bytes as f64 / baseline_bytes as f64),
        }
    }
}

/// Sums page rasters, page sidecars and the graph file on disk.
pub fn storage_report(pages: &PageStore, graph_file: &Path, baseline_bytes: u64) -> Result<StorageReport> {
    let mut missing: Vec<PathBuf> = Vec::new();
    let mut size = |p: PathBuf| -> u64 {
        match fs::metadata(&p) {
            Ok(m) if m.is_file() => m.len(),
            _ => {
                missing.push(p);
                0
            }
        }
    };
    let mut scrapbook = 0;
    for id in pages.page_ids()? {
        scrapbook += size(pages.raster_path(&id));
        scrapbook += size(pages.sidecar_path(&id));
    }
    let graph = size(graph_file.to_path_buf());
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(StorageReport::from_parts(scrapbook, graph, baseline_bytes))
}

/// Pages per stage, for reports.
pub fn stage_counts<'a>(pages: impl IntoIterator<Item = &'a ScrapbookPage>) -> BTreeMap<Stage, usize> {
    let mut counts: BTreeMap<Stage, usize> = Stage::ALL.iter().map(|s| (*s, 0)).collect();
    for p in pages {
        *counts.entry(p.fidelity.stage).or_default() += 1;
    }
    counts
}
