//! Runs a scenario against a client and checks each step's expectations.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::client::{Client, ClientResult};
use super::scenario::{Action, Expect, Scenario, Step};
use super::{parse_records, read_text};
use crate::api::{ErrorBody, ForgetRequest, QueryOutcome, VerifyRequest};
use crate::domain::{
    Granularity, MemoryId, QueryType, SourceKind, VerificationId, VerificationKind,
};
use crate::encoder::RawCapture;
use crate::error::{Error, Result};
use crate::verification::Resolution;

pub const REPLAY_LOG_FORMAT: &str = "spatial-recall/replay-log";

/// One replayed step: what was sent, what came back, what did not match.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StepLog {
    pub record: String,
    pub step: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_counterpart: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_type: Option<QueryType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
    /// Whether the step carried a top-1 or routing expectation.
    pub graded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1: Option<MemoryId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routing: Option<SourceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub needs_verification: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending: Option<VerificationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification_id: Option<VerificationId>,
    /// Memory stored or removed by the step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_id: Option<MemoryId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    pub mismatches: Vec<String>,
    /// Harness-side wall time for the request.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub scenario: String,
    pub steps: Vec<StepLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogHeader {
    record: String,
    format: String,
    version: u32,
    scenario: String,
}

impl ReplayLog {
    pub fn mismatch_count(&self) -> usize {
        self.steps.iter().filter(|s| !s.mismatches.is_empty()).count()
    }

    pub fn to_jsonl(&self) -> String {
        let header = LogHeader {
            record: "header".into(),
            format: REPLAY_LOG_FORMAT.into(),
            version: 1,
            scenario: self.scenario.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step log serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let (header, steps): (LogHeader, Vec<(usize, StepLog)>) =
            parse_records(text, source, REPLAY_LOG_FORMAT)?;
        Ok(Self {
            scenario: header.scenario,
            steps: steps.into_iter().map(|(_, s)| s).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }
}

/// What earlier steps produced, for `@step` references.
#[derive(Default)]
struct Refs {
    verification: HashMap<String, VerificationId>,
    memory: HashMap<String, MemoryId>,
    /// Verification id to the step that opened it.
    opened_by: HashMap<VerificationId, String>,
}

impl Refs {
    fn memory(&self, r: &str) -> std::result::Result<MemoryId, String> {
        match r.strip_prefix('@') {
            Some(step) => self
                .memory
                .get(step)
                .cloned()
                .ok_or_else(|| format!("step {step} stored no memory")),
            None => Ok(MemoryId::from(r)),
        }
    }

    fn verification(&self, r: &str) -> std::result::Result<VerificationId, String> {
        match r.strip_prefix('@') {
            Some(step) => self
                .verification
                .get(step)
                .cloned()
                .ok_or_else(|| format!("step {step} opened no verification")),
            None => Ok(VerificationId::from(r)),
        }
    }
}

fn capture(scenario: &Scenario, step: &Step, at: DateTime<Utc>) -> Result<RawCapture> {
    Ok(RawCapture {
        user_id: scenario.header.user_id.clone(),
        transcript: step.transcript.clone(),
        scene_text: step.scene.clone(),
        image: scenario.image_bytes(step)?,
        space_label: step.space_label.clone(),
        gps: step.gps.expect("validated at parse time"),
        timestamp: at,
    })
}

enum Reply {
    Outcome(QueryOutcome),
    Resolution(Resolution),
}

fn check_contains(field: &str, haystack: Option<&str>, needles: &[String], out: &mut Vec<String>) {
    for n in needles {
        if !haystack.is_some_and(|h| h.contains(n.as_str())) {
            out.push(format!("{field} lacks {n:?}: got {haystack:?}"));
        }
    }
}

fn compare<T: PartialEq + std::fmt::Debug>(field: &str, want: Option<T>, got: Option<T>, out: &mut Vec<String>) {
    if let Some(w) = want {
        if got.as_ref() != Some(&w) {
            out.push(format!("{field}: expected {w:?}, got {got:?}"));
        }
    }
}

fn grade(expect: &Expect, log: &mut StepLog, refs: &Refs, stored: bool) {
    let mut m = Vec::new();
    compare("query_type", expect.query_type, log.query_type, &mut m);
    compare("granularity", expect.granularity, log.granularity, &mut m);
    compare("routing", expect.routing, log.routing, &mut m);
    compare("needs_verification", expect.needs_verification, log.needs_verification, &mut m);
    compare("pending", expect.pending, log.pending, &mut m);
    compare("stored", expect.stored, Some(stored), &mut m);
    if let Some(want) = &expect.top1 {
        let resolved = want.as_deref().map(|r| refs.memory(r)).transpose();
        match resolved {
            Ok(w) if w == log.top1 => {}
            Ok(w) => m.push(format!("top1: expected {w:?}, got {:?}", log.top1)),
            Err(e) => m.push(format!("top1: {e}")),
        }
    }
    check_contains("answer", log.answer.as_deref(), &expect.answer_contains, &mut m);
    check_contains("rationale", log.rationale.as_deref(), &expect.rationale_contains, &mut m);
    check_contains("summary", log.summary.as_deref(), &expect.summary_contains, &mut m);
    let code = log.error.as_ref().map(|e| e.code.clone());
    match (&expect.error, code) {
        (Some(w), Some(c)) if *w == c => {}
        (Some(w), got) => m.push(format!("error: expected {w:?}, got {got:?}")),
        (None, Some(_)) => m.push(format!(
            "unexpected error: {}",
            log.error.as_ref().map(|e| e.message.as_str()).unwrap_or_default()
        )),
        (None, None) => {}
    }
    log.graded = expect.top1.is_some() || expect.routing.is_some();
    log.mismatches.extend(m);
}

/// Replays every step in order. Only transport failures abort the run;
/// other errors are recorded against the step.
pub fn replay(scenario: &Scenario, client: &dyn Client) -> Result<ReplayLog> {
    let mut refs = Refs::default();
    let mut logs = Vec::with_capacity(scenario.steps.len());
    let mut now: Option<DateTime<Utc>> = None;
    for step in &scenario.steps {
        if let Some(at) = step.at {
            now = Some(at);
            client.set_time(at);
        }
        let mut log = StepLog {
            record: "step".into(),
            step: step.id.clone(),
            case: step.case.clone(),
            action: Some(step.action),
            transcript: step.transcript.clone(),
            full_counterpart: step.full_counterpart.clone(),
            ..StepLog::default()
        };
        let started = Instant::now();
        let reply: std::result::Result<ClientResult<Reply>, String> = match step.action {
            Action::Query | Action::Remember => {
                let at = now.ok_or_else(|| Error::InvalidArgument(format!("step {} has no time", step.id)))?;
                let c = capture(scenario, step, at)?;
                let r = if step.action == Action::Query {
                    client.query(&c)
                } else {
                    client.remember(&c)
                };
                Ok(r.map(Reply::Outcome))
            }
            Action::Forget => {
                let memory_id = step.memory_id.as_deref().map(|r| refs.memory(r)).transpose();
                memory_id.map(|memory_id| {
                    client
                        .forget(&ForgetRequest {
                            user_id: scenario.header.user_id.clone(),
                            query_text: step.transcript.clone(),
                            memory_id,
                        })
                        .map(Reply::Outcome)
                })
            }
            Action::Verify => refs
                .verification(step.verification.as_deref().unwrap_or_default())
                .map(|verification_id| {
                    client
                        .verify(&VerifyRequest {
                            user_id: Some(scenario.header.user_id.clone()),
                            verification_id,
                            accept: step.accept.unwrap_or(false),
                            replacement_answer: step.replacement_answer.clone(),
                        })
                        .map(Reply::Resolution)
                }),
        };
        log.latency_ms = started.elapsed().as_secs_f64() * 1000.0;

        let mut stored = false;
        match reply {
            Err(reference) => log.mismatches.push(reference),
            Ok(Err(e)) if e.code == "transport" => {
                return Err(Error::Transport(e.message));
            }
            Ok(Err(e)) => log.error = Some(e),
            Ok(Ok(Reply::Outcome(o))) => {
                let mode = o.mode();
                log.query_type = Some(mode.query_type);
                log.granularity = mode.granularity;
                if let Some(v) = o.verification_id() {
                    refs.verification.insert(step.id.clone(), v.clone());
                    refs.opened_by.insert(v.clone(), step.id.clone());
                    log.verification_id = Some(v.clone());
                }
                match o {
                    QueryOutcome::Answered {
                        response,
                        stored_memory_id,
                        ..
                    } => {
                        log.top1 = response.referenced_memory_ids.first().cloned();
                        log.routing = Some(response.routing);
                        log.confidence = Some(response.confidence.get());
                        log.needs_verification = Some(response.needs_verification);
                        log.answer = Some(response.answer_text);
                        log.rationale = Some(response.rationale);
                        if let Some(id) = stored_memory_id {
                            stored = true;
                            refs.memory.insert(step.id.clone(), id.clone());
                            log.memory_id = Some(id);
                        }
                    }
                    QueryOutcome::Pending { kind, summary, .. } => {
                        log.pending = Some(kind);
                        log.summary = Some(summary);
                    }
                }
            }
            Ok(Ok(Reply::Resolution(r))) => {
                log.verification_id = Some(r.verification_id.clone());
                log.pending = Some(r.kind);
                if let Some(id) = &r.memory_id {
                    stored = r.accepted && r.kind != VerificationKind::RemoveMemory;
                    refs.memory.insert(step.id.clone(), id.clone());
                    if let Some(origin) = refs.opened_by.get(&r.verification_id) {
                        refs.memory.insert(origin.clone(), id.clone());
                    }
                    log.memory_id = Some(id.clone());
                }
            }
        }

        if let Some(want) = step.expect.corpus_size {
            match client.memories(&scenario.header.user_id) {
                Ok(m) if m.len() == want => {}
                Ok(m) => log
                    .mismatches
                    .push(format!("corpus_size: expected {want}, got {}", m.len())),
                Err(e) => log.mismatches.push(format!("corpus_size: {}", e.message)),
            }
        }
        grade(&step.expect, &mut log, &refs, stored);
        logs.push(log);
    }
    Ok(ReplayLog {
        scenario: scenario.header.name.clone(),
        steps: logs,
    })
}
