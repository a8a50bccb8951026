//! Engine access for replay: in-process or over HTTP.

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{ErrorBody, ForgetRequest, MemoryView, QueryOutcome, VerifyRequest};
use crate::domain::UserId;
use crate::encoder::RawCapture;
use crate::engine::{Engine, ManualClock};
use crate::error::Error;
use crate::verification::Resolution;

pub type ClientResult<T> = std::result::Result<T, ErrorBody>;

pub trait Client {
    fn query(&self, capture: &RawCapture) -> ClientResult<QueryOutcome>;
    fn remember(&self, capture: &RawCapture) -> ClientResult<QueryOutcome>;
    fn forget(&self, req: &ForgetRequest) -> ClientResult<QueryOutcome>;
    fn verify(&self, req: &VerifyRequest) -> ClientResult<Resolution>;
    fn memories(&self, user: &UserId) -> ClientResult<Vec<MemoryView>>;
    /// Moves the engine clock, where the client controls it.
    fn set_time(&self, _t: DateTime<Utc>) {}
}

/// Drives an engine in this process with a manual clock.
pub struct InProcess {
    pub engine: Arc<Engine>,
    pub clock: Arc<ManualClock>,
}

impl Client for InProcess {
    fn query(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        self.engine.handle_query(capture).map_err(|e| ErrorBody::from(&e))
    }

    fn remember(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        self.engine.handle_remember(capture).map_err(|e| ErrorBody::from(&e))
    }

    fn forget(&self, req: &ForgetRequest) -> ClientResult<QueryOutcome> {
        self.engine.handle_forget(req).map_err(|e| ErrorBody::from(&e))
    }

    fn verify(&self, req: &VerifyRequest) -> ClientResult<Resolution> {
        self.engine.verify(req).map_err(|e| ErrorBody::from(&e))
    }

    fn memories(&self, user: &UserId) -> ClientResult<Vec<MemoryView>> {
        self.engine
            .memories(user)
            .map(|m| m.iter().map(MemoryView::from).collect())
            .map_err(|e| ErrorBody::from(&e))
    }

    fn set_time(&self, t: DateTime<Utc>) {
        self.clock.set(t);
    }
}

/// Talks to a running server.
pub struct Http {
    base: String,
    client: reqwest::blocking::Client,
}

#[derive(serde::Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

fn transport(e: impl std::fmt::Display) -> ErrorBody {
    ErrorBody::from(&Error::Transport(e.to_string()))
}

impl Http {
    pub fn new(base: &str, timeout: Duration) -> crate::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_owned(),
            client,
        })
    }

    /// Fails with a transport error when the server does not answer.
    pub fn check(&self) -> crate::Result<()> {
        let r = self
            .client
            .get(format!("{}/v1/health", self.base))
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !r.status().is_success() {
            return Err(Error::Transport(format!("health check returned {}", r.status())));
        }
        Ok(())
    }

    fn read<T: DeserializeOwned>(r: reqwest::blocking::Response) -> ClientResult<T> {
        let status = r.status();
        let body = r.bytes().map_err(transport)?;
        if status.is_success() {
            serde_json::from_slice(&body).map_err(|e| ErrorBody::from(&Error::MalformedOutput(e.to_string())))
        } else {
            serde_json::from_slice::<ErrorEnvelope>(&body)
                .map(|e| e.error)
                .map_err(|_| transport(format!("HTTP {status}")))
                .and_then(Err)
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ClientResult<T> {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(transport)?;
        Self::read(r)
    }
}

impl Client for Http {
    fn query(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        self.post("/v1/query", capture)
    }

    fn remember(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        self.post("/v1/remember", capture)
    }

    fn forget(&self, req: &ForgetRequest) -> ClientResult<QueryOutcome> {
        self.post("/v1/forget", req)
    }

    fn verify(&self, req: &VerifyRequest) -> ClientResult<Resolution> {
        self.post("/v1/verify", req)
    }

    fn memories(&self, user: &UserId) -> ClientResult<Vec<MemoryView>> {
        let r = self
            .client
            .get(format!("{}/v1/memories", self.base))
            .query(&[("user_id", user.as_str())])
            .send()
            .map_err(transport)?;
        Self::read(r)
    }
}
