//! Phrase embedding providers. Every provider returns unit-length vectors.

use crate::chat::ChatClient;
use crate::error::{Error, Result};
use crate::util::{fnv1a, normalized};

pub const TRIGRAM_DIMENSION: usize = 64;

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in the graph config hash.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>>;

    fn embed_one(&self, phrase: &str) -> Result<Vec<f32>> {
        self.embed(&[phrase.to_string()])?
            .pop()
            .ok_or_else(|| Error::Embedding("provider returned no vector".into()))
    }
}

/// Offline embedder: signed hashed bag of character trigrams over ` phrase `.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dimension: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder {
            dimension: TRIGRAM_DIMENSION,
        }
    }
}

impl TrigramEmbedder {
    pub fn with_dimension(dimension: usize) -> Self {
        TrigramEmbedder {
            dimension: dimension.max(1),
        }
    }

    fn vector(&self, phrase: &str) -> Result<Vec<f32>> {
        let norm: String = phrase.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        if norm.is_empty() {
            return Err(Error::Embedding("cannot embed an empty phrase".into()));
        }
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        let mut acc = vec![0.0f64; self.dimension];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let bucket = (h % self.dimension as u64) as usize;
            acc[bucket] += if (h >> 63) == 1 { -1.0 } else { 1.0 };
        }
        // All trigrams may cancel in tiny dimensions; fall back to the phrase hash.
        if acc.iter().all(|&x| x == 0.0) {
            acc[(fnv1a(norm.as_bytes()) % self.dimension as u64) as usize] = 1.0;
        }
        normalized(&acc).ok_or_else(|| Error::Embedding("degenerate trigram vector".into()))
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn id(&self) -> String {
        format!("trigram-fnv1a-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>> {
        phrases.iter().map(|p| self.vector(p)).collect()
    }
}

/// Embeddings endpoint of an OpenAI-compatible server.
pub struct RemoteEmbedder {
    client: ChatClient,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(client: ChatClient, dimension: usize) -> Self {
        RemoteEmbedder { client, dimension }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}-{}", self.client.config().model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>> {
        if phrases.is_empty() {
            return Ok(Vec::new());
        }
        self.client
            .embeddings(phrases)?
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(Error::Embedding(format!(
                        "remote vector has dimension {}, expected {}",
                        v.len(),
                        self.dimension
                    )));
                }
                let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                normalized(&wide).ok_or_else(|| Error::Embedding("remote vector is zero or non-finite".into()))
            })
            .collect()
    }
}
