//! Engine configuration and the provider set it selects.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chat::{ApiConfig, ChatClient};
use crate::embedding::{EmbeddingProvider, RemoteEmbedder, TrigramEmbedder, TRIGRAM_DIMENSION};
use crate::emgraph::{GraphConfig, DEFAULT_TAU_MERGE};
use crate::error::{Error, Result};
use crate::eval::{Judge, OfflineJudge, RemoteJudge};
use crate::forgetting::{CoherenceRule, ForgettingPolicy};
use crate::pagebuilder::{PageLayout, DEFAULT_KEYFRAMES};
use crate::perception::{MockPerception, PerceptionProvider, ProviderMode, RemotePerception};
use crate::retrieval::{AnswerProvider, DayBudget, MockAnswerer, RemoteAnswerer, RetrievalConfig, DEFAULT_K, DEFAULT_TAU_Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderModes {
    pub perception: ProviderMode,
    pub embedding: ProviderMode,
    pub answer: ProviderMode,
    pub judge: ProviderMode,
}

/// How forgetting decides which mentions a degraded page loses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadeStrategy {
    #[default]
    Legibility,
    Reperceive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub providers: ProviderModes,
    pub tau_merge: f64,
    pub tau_q: f64,
    pub day_budget: DayBudget,
    pub k: usize,
    /// Preset name or path to a policy JSON file.
    pub policy: String,
    pub max_inflight: usize,
    pub keyframes: usize,
    /// Vector size for the remote embedder; the offline embedder has a fixed size.
    pub embedding_dimension: usize,
    pub visual_weight: f64,
    pub fade: FadeStrategy,
    pub coherence: CoherenceRule,
    pub layout: PageLayout,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            providers: ProviderModes::default(),
            tau_merge: DEFAULT_TAU_MERGE,
            tau_q: DEFAULT_TAU_Q,
            day_budget: DayBudget::Auto,
            k: DEFAULT_K,
            policy: "timed-gentle".into(),
            max_inflight: 4,
            keyframes: DEFAULT_KEYFRAMES,
            embedding_dimension: 384,
            visual_weight: 0.0,
            fade: FadeStrategy::Legibility,
            coherence: CoherenceRule::default(),
            layout: PageLayout::default(),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<EngineConfig> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let cfg: EngineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<EngineConfig> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(EngineConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_merge", self.tau_merge), ("tau_q", self.tau_q)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.day_budget == DayBudget::Fixed(0) {
            return Err(Error::Config("day_budget must be at least 1".into()));
        }
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        if self.keyframes == 0 {
            return Err(Error::Config("keyframes must be at least 1".into()));
        }
        if self.embedding_dimension == 0 {
            return Err(Error::Config("embedding_dimension must be at least 1".into()));
        }
        if !(self.visual_weight >= 0.0 && self.visual_weight.is_finite()) {
            return Err(Error::Config(format!("visual_weight = {} must be ≥ 0", self.visual_weight)));
        }
        if !(self.coherence.min_fraction >= 0.0 && self.coherence.min_fraction <= 1.0) {
            return Err(Error::Config("coherence.min_fraction outside [0, 1]".into()));
        }
        self.layout.validate()
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            tau_q: self.tau_q,
            day_budget: self.day_budget,
            visual_weight: self.visual_weight,
        }
    }

    pub fn policy(&self) -> Result<ForgettingPolicy> {
        ForgettingPolicy::resolve(&self.policy)
    }

    pub fn graph_config(&self, embedder: &dyn EmbeddingProvider) -> GraphConfig {
        GraphConfig {
            tau_merge: self.tau_merge,
            embedder: embedder.id(),
            dimension: embedder.dimension(),
        }
    }
}

/// The providers a command runs with.
#[derive(Clone)]
pub struct Providers {
    pub perception: Arc<dyn PerceptionProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub answerer: Arc<dyn AnswerProvider>,
    pub judge: Arc<dyn Judge>,
}

impl Providers {
    pub fn mock() -> Self {
        Providers {
            perception: Arc::new(MockPerception),
            embedder: Arc::new(TrigramEmbedder::default()),
            answerer: Arc::new(MockAnswerer),
            judge: Arc::new(OfflineJudge),
        }
    }

    /// Builds the configured providers. Remote ones read the API settings from the
    /// environment.
    pub fn from_config(config: &EngineConfig) -> Result<Self> {
        let modes = config.providers;
        let any_remote = [modes.perception, modes.embedding, modes.answer, modes.judge].contains(&ProviderMode::Remote);
        let api = if any_remote { Some(ApiConfig::from_env()?) } else { None };
        let client = || ChatClient::new(api.clone().expect("api config present when a provider is remote"));
        Ok(Providers {
            perception: match modes.perception {
                ProviderMode::Mock => Arc::new(MockPerception),
                ProviderMode::Remote => Arc::new(RemotePerception::new(client()?)),
            },
            embedder: match modes.embedding {
                ProviderMode::Mock => Arc::new(TrigramEmbedder::with_dimension(TRIGRAM_DIMENSION)),
                ProviderMode::Remote => Arc::new(RemoteEmbedder::new(client()?, config.embedding_dimension)),
            },
            answerer: match modes.answer {
                ProviderMode::Mock => Arc::new(MockAnswerer),
                ProviderMode::Remote => Arc::new(RemoteAnswerer::new(client()?)),
            },
            judge: match modes.judge {
                ProviderMode::Mock => Arc::new(OfflineJudge),
                ProviderMode::Remote => Arc::new(RemoteJudge::new(client()?)),
            },
        })
    }
}
