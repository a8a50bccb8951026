//! HTTP-backed providers.
//!
//! The language model, embedder and scene describer speak the OpenAI-compatible
//! `chat/completions` and `embeddings` endpoints; web search speaks the Google
//! Custom Search JSON shape (`items[].title`, `items[].snippet`). Base URLs and
//! keys come from configuration.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::Utc;
use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{Embedder, Fields, LanguageModel, SceneDescriber, SearchResult, Task, WebSearch};
use crate::domain::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
}

fn client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Config(format!("http client: {e}")))
}

fn post_json(client: &Client, endpoint: &Endpoint, path: &str, body: &Value) -> Result<Value> {
    let url = format!("{}/{}", endpoint.base_url.trim_end_matches('/'), path);
    let mut req = client.post(url).json(body);
    if let Some(key) = &endpoint.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(Error::Transport(format!("{path}: HTTP {status}")));
    }
    resp.json::<Value>()
        .map_err(|e| Error::MalformedOutput(format!("{path}: {e}")))
}

fn message_content(v: &Value) -> Result<&str> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedOutput("completion has no message content".into()))
}

fn task_instructions(task: Task) -> &'static str {
    match task {
        Task::Classify => "Classify the transcript as question_answering, remembrance or removal. Reply with JSON {\"query_type\": ...}.",
        Task::ComposeAnswer => "Answer the query for the user's current scene in at most 30 words, using the provided memory context when relevant. Reply with JSON {\"answer\": ...}.",
        Task::Validate => "Rate how well the answer is supported by the candidate memories and context, as an integer from 1 to 10. Reply with JSON {\"confidence\": ...}.",
        Task::ReviseIntent => "Rewrite prior_query so it asks the same thing about referent instead of prior_referent. Reply with JSON {\"query\": ...}.",
        Task::Summarize => "Summarize the memory in one short sentence for a confirmation prompt. Reply with JSON {\"summary\": ...}.",
    }
}

fn fields_from_json(content: &str) -> Result<Fields> {
    let v: Value = serde_json::from_str(content.trim())
        .map_err(|e| Error::MalformedOutput(format!("completion is not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::MalformedOutput("completion is not a JSON object".into()))?;
    let mut out = Fields::new();
    for (k, val) in obj {
        match val {
            Value::String(s) => out.insert(k, s.clone()),
            Value::Number(n) => out.insert(k, n.to_string()),
            Value::Bool(b) => out.insert(k, b.to_string()),
            _ => {}
        }
    }
    Ok(out)
}

pub struct HttpLanguageModel {
    endpoint: Endpoint,
    client: Client,
}

impl HttpLanguageModel {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint,
            client: client(timeout)?,
        })
    }
}

impl LanguageModel for HttpLanguageModel {
    fn complete(&self, task: Task, inputs: &Fields) -> Result<Fields> {
        let user: serde_json::Map<String, Value> = inputs
            .iter()
            .map(|(k, v)| (k.to_owned(), Value::String(v.to_owned())))
            .collect();
        let body = json!({
            "model": self.endpoint.model.as_deref().unwrap_or("default"),
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": task_instructions(task)},
                {"role": "user", "content": Value::Object(user).to_string()},
            ],
        });
        let resp = post_json(&self.client, &self.endpoint, "chat/completions", &body)?;
        fields_from_json(message_content(&resp)?)
    }
}

pub struct HttpEmbedder {
    endpoint: Endpoint,
    client: Client,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint,
            client: client(timeout)?,
            dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let body = json!({
            "model": self.endpoint.model.as_deref().unwrap_or("default"),
            "input": text,
            "dimensions": self.dim,
        });
        let resp = post_json(&self.client, &self.endpoint, "embeddings", &body)?;
        let raw: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedOutput("embedding response has no vector".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| Error::MalformedOutput("non-numeric embedding".into())))
            .collect::<Result<_>>()?;
        if raw.len() != self.dim {
            return Err(Error::MalformedOutput(format!(
                "embedding has {} dimensions, expected {}",
                raw.len(),
                self.dim
            )));
        }
        Embedding::normalized(&raw).map_err(|e| Error::MalformedOutput(e.to_string()))
    }
}

pub struct HttpSceneDescriber {
    endpoint: Endpoint,
    client: Client,
}

impl HttpSceneDescriber {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint,
            client: client(timeout)?,
        })
    }
}

impl SceneDescriber for HttpSceneDescriber {
    fn describe(&self, image: &[u8]) -> Result<String> {
        let data_url = format!("data:image/png;base64,{}", B64.encode(image));
        let body = json!({
            "model": self.endpoint.model.as_deref().unwrap_or("default"),
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": "Describe the scene in one short sentence, naming the object in focus."},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        });
        let resp = post_json(&self.client, &self.endpoint, "chat/completions", &body)?;
        Ok(message_content(&resp)?.trim().to_owned())
    }
}

pub struct HttpWebSearch {
    endpoint: Endpoint,
    /// Search engine id (`cx`).
    engine_id: Option<String>,
    client: Client,
}

impl HttpWebSearch {
    pub fn new(endpoint: Endpoint, engine_id: Option<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint,
            engine_id,
            client: client(timeout)?,
        })
    }
}

impl WebSearch for HttpWebSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>> {
        let mut params: Vec<(&str, &str)> = vec![("q", query)];
        if let Some(key) = &self.endpoint.api_key {
            params.push(("key", key));
        }
        if let Some(cx) = &self.engine_id {
            params.push(("cx", cx));
        }
        let resp = self
            .client
            .get(&self.endpoint.base_url)
            .query(&params)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Transport(format!("search: HTTP {}", resp.status())));
        }
        let v: Value = resp
            .json()
            .map_err(|e| Error::MalformedOutput(format!("search: {e}")))?;
        let now = Utc::now();
        Ok(v.get("items")
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|it| {
                        let snippet = it.get("snippet")?.as_str()?.trim();
                        (!snippet.is_empty()).then(|| SearchResult {
                            title: it.get("title").and_then(Value::as_str).unwrap_or_default().to_owned(),
                            snippet: snippet.to_owned(),
                            fetched_at: now,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}
