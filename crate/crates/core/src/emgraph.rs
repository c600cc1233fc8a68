//! Episodic memory graph: canonical semantic nodes, visual nodes, per-page
//! event paths and the binary path x node incidence (Q) matrix.
//!
//! Node and path ids are never reused. The Q matrix is stored sparsely as
//! sorted `(path_id, node_id)` pairs; its dense form orders rows and columns
//! by ascending id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pagebuilder::Rect;
use crate::util::{cosine, fnv1a, norm, normalized};

pub type NodeId = u64;
pub type PathId = u64;

pub const DEFAULT_TAU_MERGE: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticNode {
    pub node_id: NodeId,
    pub phrase: String,
    pub centroid: Vec<f32>,
    pub support: u32,
    pub source_pages: BTreeSet<String>,
    /// Max salience over all mentions.
    pub salience: f64,
    /// Salience of the strongest mention on each source page.
    #[serde(default)]
    pub mention_salience: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualNode {
    pub node_id: NodeId,
    pub page_id: String,
    pub bbox: Rect,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmPath {
    pub path_id: PathId,
    pub page_id: String,
    pub date: NaiveDate,
    pub node_ids: Vec<NodeId>,
    pub summary: String,
    /// Length at creation; coherence after fading is judged against it.
    pub original_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QMatrix {
    entries: BTreeSet<(PathId, NodeId)>,
}

impl QMatrix {
    pub fn get(&self, path: PathId, node: NodeId) -> bool {
        self.entries.contains(&(path, node))
    }

    pub fn set(&mut self, path: PathId, node: NodeId) {
        self.entries.insert((path, node));
    }

    pub fn clear(&mut self, path: PathId, node: NodeId) -> bool {
        self.entries.remove(&(path, node))
    }

    pub fn row(&self, path: PathId) -> impl Iterator<Item = NodeId> + '_ {
        self.entries
            .range((path, NodeId::MIN)..=(path, NodeId::MAX))
            .map(|&(_, n)| n)
    }

    pub fn paths_of(&self, node: NodeId) -> impl Iterator<Item = PathId> + '_ {
        self.entries.iter().filter(move |&&(_, n)| n == node).map(|&(p, _)| p)
    }

    pub fn column_sum(&self, node: NodeId) -> usize {
        self.paths_of(node).count()
    }

    pub fn clear_row(&mut self, path: PathId) {
        let row: Vec<NodeId> = self.row(path).collect();
        for n in row {
            self.entries.remove(&(path, n));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (PathId, NodeId)> + '_ {
        self.entries.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub tau_merge: f64,
    pub embedder: String,
    pub dimension: usize,
}

impl GraphConfig {
    pub fn hash(&self) -> String {
        format!(
            "{:016x}",
            fnv1a(format!("tau={:.6};embedder={};dim={}", self.tau_merge, self.embedder, self.dimension).as_bytes())
        )
    }
}

/// One merge decision, kept when audit mode is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub phrase: String,
    pub node_id: NodeId,
    pub similarity: f64,
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub node_ids: Vec<NodeId>,
    pub matrix: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmGraph {
    pub config: GraphConfig,
    nodes: BTreeMap<NodeId, SemanticNode>,
    visual_nodes: BTreeMap<NodeId, VisualNode>,
    paths: BTreeMap<PathId, EmPath>,
    q: QMatrix,
    next_node_id: NodeId,
    next_path_id: PathId,
    audit: Option<Vec<MergeRecord>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    config_hash: String,
    config: GraphConfig,
    next_node_id: NodeId,
    next_path_id: PathId,
    nodes: Vec<SemanticNode>,
    visual_nodes: Vec<VisualNode>,
    paths: Vec<EmPath>,
    q: Vec<[u64; 2]>,
}

/// Result of [`EmGraph::load`]; `config_mismatch` is set when the stored config hash
/// differs from the expected one.
pub struct LoadedGraph {
    pub graph: EmGraph,
    pub config_mismatch: bool,
}

fn checked_embedding(embedding: &[f32], dimension: usize) -> Result<Vec<f32>> {
    if embedding.len() != dimension {
        return Err(Error::Graph(format!(
            "embedding has dimension {}, graph expects {dimension}",
            embedding.len()
        )));
    }
    let wide: Vec<f64> = embedding.iter().map(|&x| x as f64).collect();
    normalized(&wide).ok_or_else(|| Error::Graph("embedding is zero or non-finite".into()))
}

impl EmGraph {
    pub fn new(config: GraphConfig) -> Self {
        EmGraph {
            config,
            nodes: BTreeMap::new(),
            visual_nodes: BTreeMap::new(),
            paths: BTreeMap::new(),
            q: QMatrix::default(),
            next_node_id: 0,
            next_path_id: 0,
            audit: None,
        }
    }

    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(Vec::new);
    }

    pub fn audit_log(&self) -> &[MergeRecord] {
        self.audit.as_deref().unwrap_or(&[])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SemanticNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&SemanticNode> {
        self.nodes.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn visual_nodes(&self) -> impl Iterator<Item = &VisualNode> {
        self.visual_nodes.values()
    }

    pub fn paths(&self) -> impl Iterator<Item = &EmPath> {
        self.paths.values()
    }

    pub fn path(&self, id: PathId) -> Option<&EmPath> {
        self.paths.get(&id)
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    pub fn paths_on_page<'a>(&'a self, page_id: &'a str) -> impl Iterator<Item = &'a EmPath> + 'a {
        self.paths.values().filter(move |p| p.page_id == page_id)
    }

    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.paths.is_empty() && self.visual_nodes.is_empty()
    }

    /// Canonicalizes one mention: merges into the most similar node when the cosine
    /// reaches `tau`, otherwise inserts a new node. Ties go to the lowest node id.
    pub fn merge_or_insert(
        &mut self,
        phrase: &str,
        embedding: &[f32],
        page_id: &str,
        salience: f64,
        tau: f64,
    ) -> Result<NodeId> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Graph(format!("merge threshold {tau} outside (0, 1]")));
        }
        let embedding = checked_embedding(embedding, self.config.dimension)?;
        let salience = if salience.is_finite() { salience.clamp(0.0, 1.0) } else { 0.0 };

        let mut best: Option<NodeId> = None;
        let mut best_sim = 0.0;
        for node in self.nodes.values() {
            let sim = cosine(&embedding, &node.centroid);
            if sim > best_sim {
                best_sim = sim;
                best = Some(node.node_id);
            }
        }

        let (id, merged) = match best {
            Some(id) if best_sim >= tau => {
                let node = self.nodes.get_mut(&id).expect("argmax node exists");
                let support = node.support as f64;
                let mixed: Vec<f64> = node
                    .centroid
                    .iter()
                    .zip(&embedding)
                    .map(|(c, e)| support * *c as f64 + *e as f64)
                    .collect();
                // Antipodal mixes cannot occur: best_sim >= tau > 0.
                node.centroid = normalized(&mixed).unwrap_or_else(|| node.centroid.clone());
                node.support += 1;
                node.salience = node.salience.max(salience);
                node.source_pages.insert(page_id.to_string());
                let m = node.mention_salience.entry(page_id.to_string()).or_insert(salience);
                *m = m.max(salience);
                (id, true)
            }
            _ => {
                let id = self.next_node_id;
                self.next_node_id += 1;
                self.nodes.insert(
                    id,
                    SemanticNode {
                        node_id: id,
                        phrase: phrase.to_string(),
                        centroid: embedding,
                        support: 1,
                        source_pages: BTreeSet::from([page_id.to_string()]),
                        salience,
                        mention_salience: BTreeMap::from([(page_id.to_string(), salience)]),
                    },
                );
                (id, false)
            }
        };
        if let Some(audit) = self.audit.as_mut() {
            audit.push(MergeRecord {
                phrase: phrase.to_string(),
                node_id: id,
                similarity: if merged { best_sim } else { 1.0 },
                merged,
            });
        }
        Ok(id)
    }

    pub fn add_visual_node(&mut self, page_id: &str, bbox: Rect, embedding: &[f32]) -> Result<NodeId> {
        let wide: Vec<f64> = embedding.iter().map(|&x| x as f64).collect();
        let embedding =
            normalized(&wide).ok_or_else(|| Error::Graph("visual embedding is zero or non-finite".into()))?;
        let id = self.next_node_id;
        self.next_node_id += 1;
        self.visual_nodes.insert(
            id,
            VisualNode {
                node_id: id,
                page_id: page_id.to_string(),
                bbox,
                embedding,
            },
        );
        Ok(id)
    }

    /// Appends a path over existing nodes mentioned on `page_id` and marks its Q row.
    pub fn add_path(&mut self, page_id: &str, date: NaiveDate, node_ids: &[NodeId], summary: &str) -> Result<PathId> {
        if node_ids.is_empty() {
            return Err(Error::Graph("path has no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for id in node_ids {
            let node = self
                .nodes
                .get(id)
                .ok_or_else(|| Error::Graph(format!("unknown node id {id}")))?;
            if !node.source_pages.contains(page_id) {
                return Err(Error::Graph(format!(
                    "node {id} (`{}`) was not mentioned on {page_id}",
                    node.phrase
                )));
            }
            if !seen.insert(*id) {
                return Err(Error::Graph(format!("node {id} repeated in path")));
            }
        }
        let path_id = self.next_path_id;
        self.next_path_id += 1;
        for &n in node_ids {
            self.q.set(path_id, n);
        }
        self.paths.insert(
            path_id,
            EmPath {
                path_id,
                page_id: page_id.to_string(),
                date,
                node_ids: node_ids.to_vec(),
                summary: summary.to_string(),
                original_len: node_ids.len(),
            },
        );
        Ok(path_id)
    }

    /// `sign(QᵀQ)` with a zero diagonal, rows/cols in ascending node id order.
    pub fn link_adjacency(&self) -> Adjacency {
        let node_ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        let pos: BTreeMap<NodeId, usize> = node_ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut matrix = vec![vec![0u8; node_ids.len()]; node_ids.len()];
        for path in self.paths.values() {
            let members: Vec<usize> = self.q.row(path.path_id).filter_map(|n| pos.get(&n).copied()).collect();
            for &a in &members {
                for &b in &members {
                    if a != b {
                        matrix[a][b] = 1;
                    }
                }
            }
        }
        Adjacency { node_ids, matrix }
    }

    /// Dense Q with rows in path id order and columns in node id order.
    pub fn q_dense(&self) -> (Vec<PathId>, Vec<NodeId>, Vec<Vec<u8>>) {
        let rows: Vec<PathId> = self.paths.keys().copied().collect();
        let cols: Vec<NodeId> = self.nodes.keys().copied().collect();
        let dense = rows
            .iter()
            .map(|&p| cols.iter().map(|&n| u8::from(self.q.get(p, n))).collect())
            .collect();
        (rows, cols, dense)
    }

    // Mutators used by forgetting. They keep paths and Q in step.

    pub(crate) fn drop_incidence(&mut self, path_id: PathId, node_id: NodeId) -> bool {
        if !self.q.clear(path_id, node_id) {
            return false;
        }
        if let Some(path) = self.paths.get_mut(&path_id) {
            path.node_ids.retain(|&n| n != node_id);
        }
        true
    }

    pub(crate) fn remove_path(&mut self, path_id: PathId) -> Option<EmPath> {
        self.q.clear_row(path_id);
        self.paths.remove(&path_id)
    }

    pub(crate) fn remove_node(&mut self, node_id: NodeId) -> Option<SemanticNode> {
        let paths: Vec<PathId> = self.q.paths_of(node_id).collect();
        for p in paths {
            self.drop_incidence(p, node_id);
        }
        self.nodes.remove(&node_id)
    }

    /// Restricts a node's mention pages to those where it still sits on a path.
    pub(crate) fn refresh_mentions(&mut self, node_id: NodeId) {
        let pages: BTreeSet<String> = self
            .q
            .paths_of(node_id)
            .filter_map(|p| self.paths.get(&p).map(|p| p.page_id.clone()))
            .collect();
        if let Some(node) = self.nodes.get_mut(&node_id) {
            node.mention_salience.retain(|p, _| pages.contains(p));
            node.source_pages = pages;
            if let Some(max) = node.mention_salience.values().copied().reduce(f64::max) {
                node.salience = max;
            }
        }
    }

    /// Checks every structural invariant the graph file must satisfy.
    pub fn verify(&self) -> Result<()> {
        for (p, n) in self.q.pairs() {
            if !self.paths.contains_key(&p) || !self.nodes.contains_key(&n) {
                return Err(Error::DanglingIncidence { path_id: p, node_id: n });
            }
        }
        for path in self.paths.values() {
            if path.node_ids.is_empty() {
                return Err(Error::Graph(format!("path {} is empty", path.path_id)));
            }
            let listed: BTreeSet<NodeId> = path.node_ids.iter().copied().collect();
            if listed.len() != path.node_ids.len() {
                return Err(Error::Graph(format!("path {} repeats a node", path.path_id)));
            }
            let row: BTreeSet<NodeId> = self.q.row(path.path_id).collect();
            if row != listed {
                return Err(Error::Graph(format!(
                    "Q row of path {} disagrees with its node list",
                    path.path_id
                )));
            }
            for n in &path.node_ids {
                if !self.nodes[n].source_pages.contains(&path.page_id) {
                    return Err(Error::Graph(format!(
                        "path {} uses node {n} not mentioned on {}",
                        path.path_id, path.page_id
                    )));
                }
            }
        }
        for node in self.nodes.values() {
            if node.support == 0 || node.source_pages.is_empty() {
                return Err(Error::Graph(format!("node {} has no support", node.node_id)));
            }
            if (norm(&node.centroid) - 1.0).abs() > 1e-5 || node.centroid.len() != self.config.dimension {
                return Err(Error::Graph(format!("node {} centroid is not unit length", node.node_id)));
            }
        }
        Ok(())
    }

    fn to_file(&self) -> GraphFile {
        GraphFile {
            config_hash: self.config.hash(),
            config: self.config.clone(),
            next_node_id: self.next_node_id,
            next_path_id: self.next_path_id,
            nodes: self.nodes.values().cloned().collect(),
            visual_nodes: self.visual_nodes.values().cloned().collect(),
            paths: self.paths.values().cloned().collect(),
            q: self.q.pairs().map(|(p, n)| [p, n]).collect(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&self.to_file())?)
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_json()?)
    }

    pub fn from_json(bytes: &[u8], expected: Option<&GraphConfig>) -> Result<LoadedGraph> {
        let file: GraphFile = serde_json::from_slice(bytes)?;
        let config_mismatch = match expected {
            Some(cfg) => cfg.hash() != file.config_hash,
            None => file.config.hash() != file.config_hash,
        };
        if config_mismatch {
            log::warn!("graph config hash {} differs from current settings", file.config_hash);
        }
        let mut graph = EmGraph::new(file.config);
        graph.next_node_id = file.next_node_id;
        graph.next_path_id = file.next_path_id;
        graph.nodes = file.nodes.into_iter().map(|n| (n.node_id, n)).collect();
        graph.visual_nodes = file.visual_nodes.into_iter().map(|n| (n.node_id, n)).collect();
        graph.paths = file.paths.into_iter().map(|p| (p.path_id, p)).collect();
        for [p, n] in file.q {
            graph.q.set(p, n);
        }
        let max_node = graph.nodes.keys().chain(graph.visual_nodes.keys()).max().copied();
        let max_path = graph.paths.keys().max().copied();
        if max_node.is_some_and(|m| m >= graph.next_node_id) || max_path.is_some_and(|m| m >= graph.next_path_id) {
            return Err(Error::Graph("id counters behind stored ids".into()));
        }
        graph.verify()?;
        Ok(LoadedGraph { graph, config_mismatch })
    }

    pub fn load(path: &Path, expected: Option<&GraphConfig>) -> Result<LoadedGraph> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_json(&bytes, expected)
    }
}
