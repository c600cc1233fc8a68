//! On-disk memory store: a directory holding the ingested corpus, page rasters with
//! sidecars, the graph file and operation journals.
//!
//! ```text
//! <store>/corpus.json
//! <store>/pages/<page_id>.jpg, <page_id>.json
//! <store>/graph.json
//! <store>/build.journal.jsonl, forget.journal.jsonl
//! <store>/.lock            present while a writer runs
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::corpus::Corpus;
use crate::emgraph::{EmGraph, GraphConfig};
use crate::error::{Error, Result};
use crate::forgetting::{storage_report, StorageReport};
use crate::pagebuilder::{page_id_for, PageStore};

pub const CORPUS_FILE: &str = "corpus.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const PAGES_DIR: &str = "pages";
pub const BUILD_JOURNAL: &str = "build.journal.jsonl";
pub const FORGET_JOURNAL: &str = "forget.journal.jsonl";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Exclusive writer access; released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        if let Err(e) = fs::remove_file(&self.path) {
            log::warn!("could not remove {}: {e}", self.path.display());
        }
    }
}

impl Store {
    /// Creates the store skeleton around `corpus`, replacing any previous corpus.
    pub fn init(root: &Path, corpus: &Corpus) -> Result<Store> {
        fs::create_dir_all(root.join(PAGES_DIR))
            .map_err(|e| Error::io(format!("create {}", root.display()), e))?;
        let store = Store { root: root.to_path_buf() };
        let _lock = store.lock()?;
        corpus.save(&store.corpus_path())?;
        Ok(store)
    }

    pub fn open(root: &Path) -> Result<Store> {
        let store = Store { root: root.to_path_buf() };
        if !store.corpus_path().is_file() {
            return Err(Error::Store(format!(
                "{} is not a store (no {CORPUS_FILE}); run ingest first",
                root.display()
            )));
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join(CORPUS_FILE)
    }

    pub fn graph_path(&self) -> PathBuf {
        self.root.join(GRAPH_FILE)
    }

    pub fn build_journal(&self) -> PathBuf {
        self.root.join(BUILD_JOURNAL)
    }

    pub fn forget_journal(&self) -> PathBuf {
        self.root.join(FORGET_JOURNAL)
    }

    pub fn pages(&self) -> PageStore {
        PageStore::new(self.root.join(PAGES_DIR))
    }

    pub fn lock(&self) -> Result<StoreLock> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Store(format!(
                "{} is locked by another writer (remove {} if no writer is running)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(format!("create {}", path.display()), e)),
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.corpus_path())
    }

    /// The stored graph, or an empty one when nothing has been built. A graph built
    /// under a different configuration is rejected.
    pub fn load_graph(&self, config: &GraphConfig) -> Result<EmGraph> {
        let path = self.graph_path();
        if !path.is_file() {
            return Ok(EmGraph::new(config.clone()));
        }
        let loaded = EmGraph::load(&path, Some(config))?;
        if loaded.config_mismatch {
            return Err(Error::Config(format!(
                "{} was built with {:?}, the current configuration is {:?}",
                path.display(),
                loaded.graph.config,
                config
            )));
        }
        Ok(loaded.graph)
    }

    /// Source item ids of every page, from the sidecars.
    pub fn page_sources(&self) -> Result<BTreeMap<String, Vec<String>>> {
        let pages = self.pages();
        pages
            .page_ids()?
            .into_iter()
            .map(|id| {
                let page = pages.load_sidecar(&id)?;
                Ok((id, page.source_ids))
            })
            .collect()
    }

    pub fn storage(&self, baseline_bytes: u64) -> Result<StorageReport> {
        storage_report(&self.pages(), &self.graph_path(), baseline_bytes)
    }
}

/// Page id of every corpus item.
pub fn item_pages(corpus: &Corpus) -> HashMap<String, String> {
    corpus
        .items
        .iter()
        .map(|i| (i.id.clone(), page_id_for(i.day())))
        .collect()
}
