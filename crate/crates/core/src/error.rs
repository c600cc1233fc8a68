use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("manifest line {line}: duplicate item id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("manifest line {line}: media file not found: {}", path.display())]
    MissingMedia { line: usize, path: PathBuf },

    #[error("item `{id}`: {message}")]
    Media { id: String, message: String },

    #[error("page layout: {0}")]
    Layout(String),

    #[error("page `{0}`: sidecar missing")]
    MissingSidecar(String),

    #[error("page `{page_id}`: {message}")]
    Page { page_id: String, message: String },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("provider: {message} (after {attempts} attempt(s))")]
    Provider { message: String, attempts: u32 },

    #[error("provider reply rejected: {0}")]
    Reply(String),

    #[error("no extractable nodes")]
    NoExtractableNodes,

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("dangling incidence: path {path_id} -> node {node_id}")]
    DanglingIncidence { path_id: u64, node_id: u64 },

    #[error("policy: {0}")]
    Policy(String),

    #[error("unknown policy preset `{name}` (expected one of: {})", known.join(", "))]
    UnknownPreset { name: String, known: Vec<String> },

    #[error("missing store files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("store: {0}")]
    Store(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by input validation rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Manifest { .. }
                | Error::DuplicateId { .. }
                | Error::MissingMedia { .. }
                | Error::UnknownPreset { .. }
                | Error::Policy(_)
                | Error::Config(_)
        )
    }

    pub fn is_provider(&self) -> bool {
        matches!(self, Error::Provider { .. } | Error::Reply(_))
    }
}
