//! External intelligence behind small traits: language model, embedder, scene
//! captioning and web search.
//!
//! `stub` holds deterministic offline implementations; `live` talks HTTP to
//! operator-configured endpoints. The pipeline only ever sees [`ProviderSuite`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::Embedding;
use crate::error::{Error, Result};

pub mod live;
pub mod stub;

/// Structured-completion tasks understood by a [`LanguageModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// in: `transcript`; out: `query_type`
    Classify,
    /// in: `query`, `scene`, optional `referent`, `context`; out: `answer`
    ComposeAnswer,
    /// in: `answer`, `candidate_count`, optional `referent`, `required_weekday`,
    /// `top_weekday`; out: `confidence` (integer 1..=10)
    Validate,
    /// in: `prior_query`, `prior_referent`, `referent`; out: `query`
    ReviseIntent,
    /// in: `kind` ("note" | "removal"), `text`, optional `space`, `date`,
    /// `referent`, `low_match`; out: `summary`
    Summarize,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::ComposeAnswer => "compose_answer",
            Task::Validate => "validate",
            Task::ReviseIntent => "revise_intent",
            Task::Summarize => "summarize",
        }
    }

    pub fn required_inputs(self) -> &'static [&'static str] {
        match self {
            Task::Classify => &["transcript"],
            Task::ComposeAnswer => &["query", "scene"],
            Task::Validate => &["answer", "candidate_count"],
            Task::ReviseIntent => &["prior_query", "prior_referent", "referent"],
            Task::Summarize => &["kind", "text"],
        }
    }

    pub fn output_field(self) -> &'static str {
        match self {
            Task::Classify => "query_type",
            Task::ComposeAnswer => "answer",
            Task::Validate => "confidence",
            Task::ReviseIntent => "query",
            Task::Summarize => "summary",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labeled text fields passed to and returned from a language model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fields(BTreeMap<String, String>);

impl Fields {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.0.insert(key.to_owned(), value.into());
        self
    }

    pub fn with_opt(self, key: &str, value: Option<impl Into<String>>) -> Self {
        match value {
            Some(v) => self.with(key, v),
            None => self,
        }
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_owned(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| Error::MalformedOutput(format!("missing field `{key}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Checks that every input the task needs is present and non-empty.
    pub fn check_inputs(&self, task: Task) -> Result<()> {
        for key in task.required_inputs() {
            if self.get(key).map_or(true, |v| v.trim().is_empty()) {
                return Err(Error::InvalidArgument(format!(
                    "task {task} requires input `{key}`"
                )));
            }
        }
        Ok(())
    }

    /// Checks a task's output schema.
    pub fn check_output(&self, task: Task) -> Result<()> {
        let value = self.require(task.output_field())?;
        if task == Task::Validate {
            parse_confidence(value)?;
        }
        if task == Task::Classify && !matches!(value, "question_answering" | "remembrance" | "removal") {
            return Err(Error::MalformedOutput(format!("unknown query_type {value:?}")));
        }
        Ok(())
    }
}

pub(crate) fn parse_confidence(value: &str) -> Result<u8> {
    match value.trim().parse::<u8>() {
        Ok(v) if (1..=10).contains(&v) => Ok(v),
        _ => Err(Error::MalformedOutput(format!(
            "confidence {value:?} is not an integer in [1, 10]"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub fetched_at: DateTime<Utc>,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, task: Task, inputs: &Fields) -> Result<Fields>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

pub trait SceneDescriber: Send + Sync {
    fn describe(&self, image: &[u8]) -> Result<String>;
}

pub trait WebSearch: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>>;
}

/// The full set of capabilities the pipeline depends on. Cheap to clone.
#[derive(Clone)]
pub struct ProviderSuite {
    pub language_model: Arc<dyn LanguageModel>,
    pub embedder: Arc<dyn Embedder>,
    pub scene_describer: Arc<dyn SceneDescriber>,
    pub web_search: Arc<dyn WebSearch>,
}

impl fmt::Debug for ProviderSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderSuite")
            .field("embedding_dim", &self.embedder.dim())
            .finish_non_exhaustive()
    }
}

impl ProviderSuite {
    /// Deterministic offline providers with the built-in fixtures.
    pub fn stub() -> Self {
        Self::stub_with(stub::StubFixtures::builtin(), crate::domain::DEFAULT_EMBEDDING_DIM)
    }

    pub fn stub_with(fixtures: stub::StubFixtures, dim: usize) -> Self {
        let fixtures = Arc::new(fixtures);
        Self {
            language_model: Arc::new(stub::StubLanguageModel::new(fixtures.clone())),
            embedder: Arc::new(stub::HashingEmbedder::new(dim)),
            scene_describer: Arc::new(stub::StubSceneDescriber::new(fixtures.clone())),
            web_search: Arc::new(stub::StubWebSearch::new(fixtures)),
        }
    }

    pub fn with_web_search(mut self, search: Arc<dyn WebSearch>) -> Self {
        self.web_search = search;
        self
    }

    pub fn with_language_model(mut self, lm: Arc<dyn LanguageModel>) -> Self {
        self.language_model = lm;
        self
    }

    /// Runs a structured completion with input and output schema checks.
    pub fn complete(&self, task: Task, inputs: &Fields) -> Result<Fields> {
        inputs.check_inputs(task)?;
        let out = self.language_model.complete(task, inputs)?;
        out.check_output(task)?;
        Ok(out)
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let e = self.embedder.embed(text)?;
        e.validate(self.embedder.dim())
            .map_err(|e| Error::MalformedOutput(format!("embedder returned bad vector: {e}")))?;
        Ok(e)
    }

    pub fn search(&self, query: &str) -> Result<Vec<SearchResult>> {
        if query.trim().is_empty() {
            return Err(Error::InvalidArgument("empty search query".into()));
        }
        self.web_search.search(query)
    }

    pub fn describe_scene(&self, image: &[u8]) -> Result<String> {
        if image.is_empty() {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        let caption = self.scene_describer.describe(image)?;
        if caption.trim().is_empty() {
            return Err(Error::MalformedOutput("empty scene description".into()));
        }
        Ok(caption)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_schema_checks() {
        let ok = Fields::new().with("confidence", "7");
        assert!(ok.check_output(Task::Validate).is_ok());
        for bad in ["0", "11", "seven", ""] {
            let f = Fields::new().with("confidence", bad);
            assert!(matches!(
                f.check_output(Task::Validate),
                Err(Error::MalformedOutput(_))
            ));
        }
        let f = Fields::new().with("query_type", "chitchat");
        assert!(f.check_output(Task::Classify).is_err());
    }

    #[test]
    fn missing_inputs_are_rejected_before_the_call() {
        let suite = ProviderSuite::stub();
        let err = suite
            .complete(Task::ReviseIntent, &Fields::new().with("prior_query", "x"))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
