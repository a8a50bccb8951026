//! Deterministic offline providers. Every output is a pure function of the
//! input and the fixture table, so pipelines replay byte-for-byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedder, Fields, LanguageModel, SceneDescriber, SearchResult, Task, WebSearch};
use crate::domain::Embedding;
use crate::error::{Error, Result};
use crate::text;

const BUILTIN_FIXTURES: &str = include_str!("../../fixtures/stub_fixtures.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFixture {
    /// Case-insensitive substring of the query that selects these results.
    pub key: String,
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeFixture {
    /// Every keyword must appear among the query's tokens.
    pub keywords: Vec<String>,
    pub answer: String,
}

/// Canned data backing the stub providers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubFixtures {
    #[serde(default)]
    pub search: Vec<SearchFixture>,
    /// sha256 hex digest of image bytes -> caption.
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeFixture>,
}

impl StubFixtures {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_FIXTURES).expect("built-in stub fixtures are valid")
    }

    /// Loads a fixture file and appends it to the built-in table.
    pub fn builtin_extended_from(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let extra: StubFixtures = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut base = Self::builtin();
        base.search.extend(extra.search);
        base.captions.extend(extra.captions);
        base.knowledge.extend(extra.knowledge);
        Ok(base)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Signed feature-hashing embedder, L2-normalized. Each token adds a
/// hash-derived +1 or -1 to one bucket, so unrelated tokens that share a
/// bucket cancel as often as they reinforce.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let h = fnv1a(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: &str) -> Result<Embedding> {
        let trimmed = input.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let mut toks = text::topic_tokens(trimmed);
        if toks.is_empty() {
            toks = text::content_tokens(trimmed);
        }
        if toks.is_empty() {
            toks = text::tokens(trimmed);
        }
        if toks.is_empty() {
            toks.push(trimmed.to_owned());
        }
        let mut signed = vec![0.0f64; self.dim];
        let mut unsigned = vec![0.0f64; self.dim];
        for t in &toks {
            let (bucket, sign) = self.bucket(t);
            signed[bucket] += sign;
            unsigned[bucket] += 1.0;
        }
        // Two tokens can cancel each other out; fall back to plain counts.
        if signed.iter().all(|v| *v == 0.0) {
            return Embedding::normalized(&unsigned);
        }
        Embedding::normalized(&signed)
    }
}

/// Rule-driven language model. Each task mirrors the engine's own fallback.
#[derive(Debug, Clone)]
pub struct StubLanguageModel {
    fixtures: Arc<StubFixtures>,
}

impl StubLanguageModel {
    pub fn new(fixtures: Arc<StubFixtures>) -> Self {
        Self { fixtures }
    }

    fn answer(&self, inputs: &Fields) -> String {
        let query = inputs.get("query").unwrap_or_default();
        let referent = inputs.get("referent").unwrap_or_default();
        let toks: Vec<String> = text::tokens(&format!("{query} {referent}"));
        for entry in &self.fixtures.knowledge {
            if entry
                .keywords
                .iter()
                .all(|k| toks.iter().any(|t| t == &k.to_lowercase()))
            {
                return entry.answer.clone();
            }
        }
        let subject = if referent.trim().is_empty() {
            "This".to_owned()
        } else {
            capitalize(referent.trim())
        };
        format!("{subject}: general information only, no personal memory matched.")
    }
}

pub(crate) fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl LanguageModel for StubLanguageModel {
    fn complete(&self, task: Task, inputs: &Fields) -> Result<Fields> {
        inputs.check_inputs(task)?;
        let out = match task {
            Task::Classify => Fields::new().with(
                "query_type",
                crate::decoder::stub_classify(inputs.require("transcript")?),
            ),
            Task::ComposeAnswer => Fields::new().with("answer", self.answer(inputs)),
            Task::Validate => Fields::new().with(
                "confidence",
                crate::composer::rule_confidence_from_fields(inputs)?
                    .get()
                    .to_string(),
            ),
            Task::ReviseIntent => Fields::new().with(
                "query",
                crate::composer::revise_template(
                    inputs.require("prior_query")?,
                    inputs.require("prior_referent")?,
                    inputs.require("referent")?,
                    &text::Lexicon::default(),
                )?,
            ),
            Task::Summarize => Fields::new().with("summary", crate::verification::summary_rule(inputs)?),
        };
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct StubSceneDescriber {
    fixtures: Arc<StubFixtures>,
}

impl StubSceneDescriber {
    pub fn new(fixtures: Arc<StubFixtures>) -> Self {
        Self { fixtures }
    }
}

impl SceneDescriber for StubSceneDescriber {
    fn describe(&self, image: &[u8]) -> Result<String> {
        if image.is_empty() {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        let digest = sha256_hex(image);
        self.fixtures
            .captions
            .get(&digest)
            .cloned()
            .ok_or_else(|| Error::UnsupportedInput(format!("no caption fixture for image {digest}")))
    }
}

#[derive(Debug, Clone)]
pub struct StubWebSearch {
    fixtures: Arc<StubFixtures>,
}

impl StubWebSearch {
    pub fn new(fixtures: Arc<StubFixtures>) -> Self {
        Self { fixtures }
    }
}

impl WebSearch for StubWebSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>> {
        if query.trim().is_empty() {
            return Err(Error::InvalidArgument("empty search query".into()));
        }
        let q = text::normalized(query);
        Ok(self
            .fixtures
            .search
            .iter()
            .find(|f| q.contains(&text::normalized(&f.key)))
            .map(|f| f.results.clone())
            .unwrap_or_default())
    }
}

/// Wraps a search provider and counts calls.
pub struct CountingSearch {
    inner: Arc<dyn WebSearch>,
    calls: AtomicUsize,
}

impl CountingSearch {
    pub fn new(inner: Arc<dyn WebSearch>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl WebSearch for CountingSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.search(query)
    }
}

/// Search provider that is always down.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableSearch;

impl WebSearch for UnavailableSearch {
    fn search(&self, _query: &str) -> Result<Vec<SearchResult>> {
        Err(Error::Transport("search provider unavailable".into()))
    }
}

/// Language model that is always down.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableLanguageModel;

impl LanguageModel for UnavailableLanguageModel {
    fn complete(&self, _task: Task, _inputs: &Fields) -> Result<Fields> {
        Err(Error::Transport("language model unavailable".into()))
    }
}
