//! Multimodal record corpus: manifest ingest, validation and per-day bucketing.
//!
//! A corpus directory holds a JSONL manifest (one [`MediaItem`] per line) next
//! to the binary media it references. Text payloads are inline; image and video
//! payloads are paths relative to the manifest. Days are UTC calendar dates.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Video,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaItem {
    pub id: String,
    pub kind: MediaKind,
    #[serde(with = "timestamp_format")]
    pub timestamp: DateTime<Utc>,
    pub payload: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl MediaItem {
    pub fn day(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }

    pub fn subject(&self) -> Option<&str> {
        self.meta.get("subject").map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub image: usize,
    pub video: usize,
    pub text: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Directory media payload paths are resolved against.
    pub root: PathBuf,
    pub items: Vec<MediaItem>,
    pub by_day: BTreeMap<NaiveDate, Vec<String>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Parses ISO-8601 timestamps. Offsets are honoured; naive values are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|n| n.and_utc())
}

mod timestamp_format {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unparseable timestamp `{raw}`")))
    }
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    kind: MediaKind,
    timestamp: String,
    payload: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Reads and validates a JSONL manifest. Media paths resolve against the manifest's directory.
pub fn ingest(manifest_path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(format!("read manifest {}", manifest_path.display()), e))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(raw).map_err(|e| Error::Manifest {
            line,
            message: e.to_string(),
        })?;
        if parsed.id.is_empty() {
            return Err(Error::Manifest {
                line,
                message: "empty id".into(),
            });
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::DuplicateId { line, id: parsed.id });
        }
        let timestamp = parse_timestamp(&parsed.timestamp).ok_or_else(|| Error::Manifest {
            line,
            message: format!("unparseable timestamp `{}`", parsed.timestamp),
        })?;
        if parsed.kind != MediaKind::Text {
            let path = root.join(&parsed.payload);
            if parsed.payload.is_empty() || !path.is_file() {
                return Err(Error::MissingMedia { line, path });
            }
        }
        items.push(MediaItem {
            id: parsed.id,
            kind: parsed.kind,
            timestamp,
            payload: parsed.payload,
            meta: parsed.meta,
        });
    }
    Ok(Corpus::new(root, items))
}

impl Corpus {
    pub fn new(root: PathBuf, items: Vec<MediaItem>) -> Self {
        let mut corpus = Corpus {
            root,
            items,
            by_day: BTreeMap::new(),
            index: HashMap::new(),
        };
        corpus.reindex();
        corpus
    }

    fn reindex(&mut self) {
        self.index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id.clone(), i))
            .collect();
        let mut by_day: BTreeMap<NaiveDate, Vec<&MediaItem>> = BTreeMap::new();
        for item in &self.items {
            by_day.entry(item.day()).or_default().push(item);
        }
        self.by_day = by_day
            .into_iter()
            .map(|(day, mut bucket)| {
                bucket.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
                (day, bucket.into_iter().map(|i| i.id.clone()).collect())
            })
            .collect();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MediaItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Items of one day, in bucket order.
    pub fn day_items(&self, day: NaiveDate) -> Vec<&MediaItem> {
        self.by_day
            .get(&day)
            .map(|ids| ids.iter().filter_map(|id| self.get(id)).collect())
            .unwrap_or_default()
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.by_day.keys().copied()
    }

    pub fn counts(&self) -> KindCounts {
        let mut c = KindCounts::default();
        for item in &self.items {
            match item.kind {
                MediaKind::Image => c.image += 1,
                MediaKind::Video => c.video += 1,
                MediaKind::Text => c.text += 1,
            }
        }
        c
    }

    pub fn media_path(&self, item: &MediaItem) -> PathBuf {
        self.root.join(&item.payload)
    }

    /// Bytes of the raw records: inline text plus referenced media files.
    pub fn raw_bytes(&self) -> Result<u64> {
        let mut total = 0u64;
        for item in &self.items {
            total += match item.kind {
                MediaKind::Text => item.payload.len() as u64,
                _ => {
                    let path = self.media_path(item);
                    fs::metadata(&path)
                        .map_err(|e| Error::io(format!("stat {}", path.display()), e))?
                        .len()
                }
            };
        }
        Ok(total)
    }

    /// Checks the partition invariant: every item in exactly one bucket keyed by its UTC date.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (day, ids) in &self.by_day {
            for id in ids {
                let item = self
                    .get(id)
                    .ok_or_else(|| Error::Store(format!("bucket {day} references unknown item `{id}`")))?;
                if item.day() != *day {
                    return Err(Error::Store(format!("item `{id}` bucketed under {day}")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Store(format!("item `{id}` appears in two buckets")));
                }
            }
        }
        if seen.len() != self.items.len() || self.index.len() != self.items.len() {
            return Err(Error::Store("day buckets do not partition the items".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        crate::util::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let mut corpus: Corpus = serde_json::from_slice(&bytes)?;
        let stored = std::mem::take(&mut corpus.by_day);
        corpus.reindex();
        if stored != corpus.by_day {
            return Err(Error::Store(format!(
                "{}: stored day buckets disagree with item timestamps",
                path.display()
            )));
        }
        corpus.validate()?;
        Ok(corpus)
    }
}
