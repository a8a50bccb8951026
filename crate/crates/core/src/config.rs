//! Runtime settings: defaults, then an optional TOML file, then
//! `SPATIAL_RECALL_*` environment variables (nested keys split on `__`).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

use crate::domain::{DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::providers::live::{Endpoint, HttpEmbedder, HttpLanguageModel, HttpSceneDescriber, HttpWebSearch};
use crate::providers::stub::StubFixtures;
use crate::providers::ProviderSuite;
use crate::retriever::RetrieverConfig;
use crate::store::MatchWeights;
use crate::verification::DEFAULT_TTL_SECS;

pub const ENV_PREFIX: &str = "SPATIAL_RECALL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Stub,
    Live,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSettings {
    pub mode: ProviderMode,
    /// Extra stub fixtures merged over the built-in table.
    pub fixtures: Option<PathBuf>,
    pub language_model: Option<Endpoint>,
    pub embedder: Option<Endpoint>,
    pub scene_describer: Option<Endpoint>,
    pub web_search: Option<Endpoint>,
    /// Search engine id for custom-search style APIs.
    pub search_engine_id: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub bind: String,
    pub embedding_dim: usize,
    pub confidence_threshold: u8,
    pub verification_ttl_secs: i64,
    pub full_min_words: usize,
    pub k_final: usize,
    pub rrf_constant: f64,
    pub gps_radius_m: f64,
    pub corpus_size_cap: usize,
    pub match_weights: MatchWeights,
    pub extra_attribute_words: Vec<String>,
    pub extra_live_topic_words: Vec<String>,
    pub providers: ProviderSettings,
}

impl Default for Settings {
    fn default() -> Self {
        let r = RetrieverConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            bind: "127.0.0.1:8080".into(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            verification_ttl_secs: DEFAULT_TTL_SECS,
            full_min_words: crate::decoder::DEFAULT_FULL_MIN_WORDS,
            k_final: r.k_final,
            rrf_constant: r.rrf_constant,
            gps_radius_m: r.gps_radius_m,
            corpus_size_cap: r.corpus_size_cap,
            match_weights: MatchWeights::default(),
            extra_attribute_words: Vec::new(),
            extra_live_topic_words: Vec::new(),
            providers: ProviderSettings::default(),
        }
    }
}

impl Settings {
    /// Defaults, overlaid by `file` (if given) and the environment.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let mut fig = Figment::from(Serialized::defaults(Settings::default()));
        if let Some(path) = file {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} not found", path.display())));
            }
            fig = fig.merge(Toml::file(path));
        }
        let settings: Settings = fig
            .merge(Env::prefixed(ENV_PREFIX).split("__"))
            .extract()
            .map_err(|e| Error::Config(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        self.retriever().validate()?;
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if !(1..=10).contains(&self.confidence_threshold) {
            return Err(Error::Config("confidence_threshold must be within 1..=10".into()));
        }
        if self.verification_ttl_secs <= 0 {
            return Err(Error::Config("verification_ttl_secs must be positive".into()));
        }
        if self.full_min_words == 0 {
            return Err(Error::Config("full_min_words must be positive".into()));
        }
        Ok(())
    }

    pub fn retriever(&self) -> RetrieverConfig {
        RetrieverConfig {
            k_final: self.k_final,
            rrf_constant: self.rrf_constant,
            gps_radius_m: self.gps_radius_m,
            corpus_size_cap: self.corpus_size_cap,
            ..RetrieverConfig::default()
        }
    }

    /// Builds the provider suite. Live mode needs every endpoint except
    /// web search, which falls back to the stub.
    pub fn provider_suite(&self) -> Result<ProviderSuite> {
        let p = &self.providers;
        let fixtures = match &p.fixtures {
            Some(path) => StubFixtures::builtin_extended_from(path)?,
            None => StubFixtures::builtin(),
        };
        let mut suite = ProviderSuite::stub_with(fixtures, self.embedding_dim);
        if p.mode == ProviderMode::Stub {
            return Ok(suite);
        }
        let timeout = Duration::from_secs(p.timeout_secs.unwrap_or(30));
        let need = |e: &Option<Endpoint>, name: &str| {
            e.clone()
                .ok_or_else(|| Error::Config(format!("live mode needs providers.{name}")))
        };
        suite.language_model = Arc::new(HttpLanguageModel::new(need(&p.language_model, "language_model")?, timeout)?);
        suite.embedder = Arc::new(HttpEmbedder::new(need(&p.embedder, "embedder")?, self.embedding_dim, timeout)?);
        suite.scene_describer = Arc::new(HttpSceneDescriber::new(need(&p.scene_describer, "scene_describer")?, timeout)?);
        if let Some(search) = &p.web_search {
            suite.web_search = Arc::new(HttpWebSearch::new(search.clone(), p.search_engine_id.clone(), timeout)?);
        }
        Ok(suite)
    }
}
