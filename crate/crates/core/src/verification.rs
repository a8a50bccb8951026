//! Human-in-the-loop gate. Pending decisions live in
//! `<data_dir>/<user_id>.pending`, in the same line-record format as the
//! corpus, so they survive restarts.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder;
use crate::domain::{
    describe_date, word_count, Confidence, MemoryId, PendingPayload, PendingVerification,
    SpatialMemory, UserId, VerificationId, VerificationKind,
};
use crate::error::{Error, Result};
use crate::linelog::{self, Header, Keyed, LineLog};
use crate::providers::stub::capitalize;
use crate::providers::{Fields, ProviderSuite, Task};
use crate::store::{memory_text, EpisodeDraft, MatchWeights, MemoryStore, VerificationToken, WriteGrant};

pub const PENDING_FORMAT: &str = "spatial-recall/pending";
pub const PENDING_EXTENSION: &str = "pending";
pub const DEFAULT_TTL_SECS: i64 = 24 * 60 * 60;
/// Removal matches scoring below this are flagged in the summary.
pub const LOW_MATCH_THRESHOLD: f64 = 0.3;

const GIST_WORDS: usize = 12;
/// Words that name the memory itself rather than its content.
const REMOVAL_FILLER: &[&str] = &["memory", "memories", "note", "notes", "reminder", "reminders"];

impl Keyed for PendingVerification {
    fn key(&self) -> &str {
        self.id.as_str()
    }
}

pub fn pending_path(data_dir: &Path, user: &UserId) -> PathBuf {
    data_dir.join(format!("{user}.{PENDING_EXTENSION}"))
}

fn gist(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= GIST_WORDS {
        words.join(" ")
    } else {
        format!("{}…", words[..GIST_WORDS].join(" "))
    }
}

fn with_period(s: &str) -> String {
    let s = s.trim();
    if s.is_empty() || s.ends_with(['.', '!', '?', '…']) {
        s.to_owned()
    } else {
        format!("{s}.")
    }
}

/// Rule behind the summarize task.
///
/// `note`: the saved note as a short sentence. `removal`: a one-line digest
/// of the memory about to be removed.
pub(crate) fn summary_rule(inputs: &Fields) -> Result<String> {
    let text = inputs.require("text")?;
    match inputs.require("kind")? {
        "note" => Ok(with_period(&capitalize(text.trim()))),
        "removal" => {
            let mut s = String::from("Remove your memory");
            if let Some(r) = inputs.get("referent").filter(|r| !r.trim().is_empty()) {
                s.push_str(&format!(" about the {}", r.trim()));
            }
            if let Some(space) = inputs.get("space").filter(|v| !v.trim().is_empty()) {
                s.push_str(&format!(" at {}", space.trim()));
            }
            if let Some(date) = inputs.get("date").filter(|v| !v.trim().is_empty()) {
                s.push_str(&format!(" from {}", date.trim()));
            }
            s.push_str(&format!(": \"{}\"?", gist(text)));
            if let Some(score) = inputs.get("low_match") {
                s = format!("Low match ({score}). {s}");
            }
            Ok(s)
        }
        other => Err(Error::InvalidArgument(format!("unknown summary kind {other:?}"))),
    }
}

/// Summarize through the language model, falling back to the rule.
pub fn summarize(inputs: &Fields, providers: &ProviderSuite) -> Result<String> {
    match providers.complete(Task::Summarize, inputs) {
        Ok(out) => Ok(out.require("summary")?.to_owned()),
        Err(e) => {
            tracing::debug!(error = %e, "summarize task failed, using rule");
            summary_rule(inputs)
        }
    }
}

/// Text of a saved note: the transcript with its trigger removed, as a sentence.
pub fn note_text(transcript: &str, providers: &ProviderSuite) -> Result<String> {
    let body = decoder::strip_trigger(transcript);
    let body = if body.is_empty() { transcript.trim().to_owned() } else { body };
    summarize(&Fields::new().with("kind", "note").with("text", body), providers)
}

/// What happened to a pending entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub verification_id: VerificationId,
    pub kind: VerificationKind,
    pub accepted: bool,
    /// Memory stored or removed by the decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_id: Option<MemoryId>,
}

#[derive(Debug)]
pub struct VerificationQueue {
    log: LineLog,
    entries: Vec<PendingVerification>,
    ttl: Duration,
}

impl VerificationQueue {
    pub fn open(data_dir: &Path, user: &UserId, dim: usize, ttl: Duration) -> Result<Self> {
        user.validate()?;
        let header = Header {
            format: PENDING_FORMAT.into(),
            version: linelog::FORMAT_VERSION,
            dim,
            user_id: user.clone(),
        };
        let (log, entries) = LineLog::open::<PendingVerification>(&pending_path(data_dir, user), header)?;
        Ok(Self { log, entries, ttl })
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn is_expired(&self, e: &PendingVerification, now: DateTime<Utc>) -> bool {
        now - e.created_at >= self.ttl
    }

    /// Live entries, oldest first. Expired ones are hidden but stay on disk
    /// until [`expire`](Self::expire) runs.
    pub fn pending(&self, now: DateTime<Utc>) -> Vec<PendingVerification> {
        self.entries
            .iter()
            .filter(|e| !self.is_expired(e, now))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops expired entries. They count as rejected.
    pub fn expire(&mut self, now: DateTime<Utc>) -> Result<Vec<VerificationId>> {
        let expired: Vec<VerificationId> = self
            .entries
            .iter()
            .filter(|e| self.is_expired(e, now))
            .map(|e| e.id.clone())
            .collect();
        for id in &expired {
            self.log.del(id.as_str())?;
        }
        self.entries.retain(|e| !expired.contains(&e.id));
        Ok(expired)
    }

    fn derive_id(&self, payload: &PendingPayload, summary: &str, now: DateTime<Utc>) -> VerificationId {
        let mut h = Sha256::new();
        for part in [
            self.log.header().user_id.as_str(),
            &now.to_rfc3339(),
            payload.memory().id.as_str(),
            summary,
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let hex: String = h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect();
        let base = format!("v{hex}");
        let taken = |id: &str| self.entries.iter().any(|e| e.id.as_str() == id);
        if !taken(&base) {
            return VerificationId::new(base);
        }
        (2..)
            .map(|n| format!("{base}-{n}"))
            .find(|id| !taken(id))
            .map(VerificationId::new)
            .expect("unbounded search")
    }

    pub fn enqueue(
        &mut self,
        payload: PendingPayload,
        summary: &str,
        now: DateTime<Utc>,
    ) -> Result<VerificationId> {
        if summary.trim().is_empty() {
            return Err(Error::InvalidArgument("a pending entry needs a summary".into()));
        }
        let memory = payload.memory();
        if memory.user_id != self.log.header().user_id {
            return Err(Error::InvalidArgument(format!(
                "payload belongs to {}, queue is {}",
                memory.user_id,
                self.log.header().user_id
            )));
        }
        memory.validate(self.log.header().dim)?;
        let entry = PendingVerification {
            id: self.derive_id(&payload, summary, now),
            kind: payload.kind(),
            payload,
            summary: summary.trim().to_owned(),
            created_at: now,
        };
        self.log.put(&entry)?;
        let id = entry.id.clone();
        self.entries.push(entry);
        Ok(id)
    }

    pub fn get(&self, id: &VerificationId, now: DateTime<Utc>) -> Result<&PendingVerification> {
        self.entries
            .iter()
            .find(|e| &e.id == id && !self.is_expired(e, now))
            .ok_or_else(|| Error::NotFound(format!("pending verification {id}")))
    }

    pub fn contains(&self, id: &VerificationId) -> bool {
        self.entries.iter().any(|e| &e.id == id)
    }

    fn remove(&mut self, id: &VerificationId) -> Result<()> {
        self.log.del(id.as_str())?;
        self.entries.retain(|e| &e.id != id);
        Ok(())
    }

    /// Compacts the queue file.
    pub fn flush(&mut self) -> Result<()> {
        self.log.rewrite(&self.entries)
    }
}

/// Accepts or rejects a pending entry. Accepting is the only place a
/// [`VerificationToken`] is minted.
pub fn resolve(
    queue: &mut VerificationQueue,
    store: &mut MemoryStore,
    id: &VerificationId,
    accept: bool,
    replacement_answer: Option<&str>,
    now: DateTime<Utc>,
    providers: &ProviderSuite,
) -> Result<Resolution> {
    let entry = queue.get(id, now)?.clone();
    if !accept {
        queue.remove(id)?;
        return Ok(Resolution {
            verification_id: id.clone(),
            kind: entry.kind,
            accepted: false,
            memory_id: None,
        });
    }
    let replacement = replacement_answer.map(str::trim).filter(|s| !s.is_empty());
    let outcome = match entry.payload {
        PendingPayload::Store { memory } => {
            let memory = match replacement {
                Some(text) => with_response(memory, text, providers)?,
                None => memory,
            };
            Some(store_verified(store, memory))
        }
        PendingPayload::Answer { mut memory, response } => {
            let text = replacement.unwrap_or(&response.answer_text);
            if text != memory.response_text || replacement.is_some() {
                memory = with_response(memory, text, providers)?;
            }
            let floor = store.threshold();
            if memory.confidence.get() < floor {
                memory.confidence = Confidence::clamped(i64::from(floor));
            }
            Some(store_verified(store, memory))
        }
        PendingPayload::Remove { memory, .. } => Some(
            store
                .delete(&memory.id, VerificationToken::mint())
                .map(|()| memory.id.clone()),
        ),
    };
    let result = outcome.transpose();
    match result {
        Ok(memory_id) => {
            queue.remove(id)?;
            Ok(Resolution {
                verification_id: id.clone(),
                kind: entry.kind,
                accepted: true,
                memory_id,
            })
        }
        Err(e @ Error::NotFound(_)) => {
            // The target is gone already; nothing left to decide.
            queue.remove(id)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn with_response(memory: SpatialMemory, text: &str, providers: &ProviderSuite) -> Result<SpatialMemory> {
    let draft = EpisodeDraft {
        user_id: memory.user_id,
        sketch: memory.sketch,
        query_text: memory.query_text,
        response_text: text.to_owned(),
        source_kind: memory.source_kind,
        confidence: memory.confidence,
    };
    let mut out = draft.into_memory(memory.id, providers)?;
    out.created_at = memory.created_at;
    Ok(out)
}

fn store_verified(store: &mut MemoryStore, mut memory: SpatialMemory) -> Result<MemoryId> {
    memory.id = store.unique_id(&memory.id);
    if let Some(last) = store.last_created_at() {
        if memory.created_at < last {
            memory.created_at = last;
        }
    }
    store.append(memory, WriteGrant::Verified(VerificationToken::mint()))
}

/// Query text with trigger phrases and words naming the memory itself removed.
pub fn removal_query(query_text: &str) -> String {
    let stripped = decoder::strip_trigger(query_text);
    let kept: Vec<&str> = stripped
        .split_whitespace()
        .filter(|w| {
            let t = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            !REMOVAL_FILLER.contains(&t.as_str())
        })
        .collect();
    kept.join(" ")
}

/// Digest of a memory shown when asking to remove it.
pub fn removal_summary(
    memory: &SpatialMemory,
    score: f64,
    low_match_threshold: f64,
    providers: &ProviderSuite,
) -> Result<String> {
    let text = if memory.query_text.trim().is_empty() {
        memory.response_text.clone()
    } else {
        memory.query_text.clone()
    };
    let inputs = Fields::new()
        .with("kind", "removal")
        .with("text", text)
        .with("space", memory.sketch.space_label.clone())
        .with("date", describe_date(memory.created_at))
        .with_opt("referent", memory.sketch.referent_text())
        .with_opt("low_match", (score < low_match_threshold).then(|| format!("{score:.2}")));
    summarize(&inputs, providers)
}

/// Finds the memory a removal request points at and queues its deletion.
pub fn begin_removal(
    query_text: &str,
    store: &MemoryStore,
    queue: &mut VerificationQueue,
    providers: &ProviderSuite,
    weights: MatchWeights,
    now: DateTime<Utc>,
) -> Result<(VerificationId, String)> {
    let q = removal_query(query_text);
    let (memory, score) = store.find_best_match_with(&q, providers, weights)?;
    let summary = removal_summary(&memory, score, LOW_MATCH_THRESHOLD, providers)?;
    let id = queue.enqueue(
        PendingPayload::Remove {
            memory,
            match_score: score,
        },
        &summary,
        now,
    )?;
    Ok((id, summary))
}

/// Summary for saving a note.
pub fn store_summary(memory: &SpatialMemory) -> String {
    format!(
        "Save \"{}\" at {} on {}?",
        gist(&memory_text("", &memory.response_text)),
        memory.sketch.space_label,
        describe_date(memory.sketch.timestamp)
    )
}

/// Summary for a low-confidence answer.
pub fn answer_summary(answer: &str, confidence: Confidence) -> String {
    let shown = if word_count(answer) > GIST_WORDS * 2 { gist(answer) } else { answer.trim().to_owned() };
    format!(
        "Low-confidence answer ({}/10): \"{}\" Keep it as a memory?",
        confidence.get(),
        shown
    )
}
