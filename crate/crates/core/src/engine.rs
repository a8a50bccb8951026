//! Request orchestration: decoder, encoder, retriever, composer, verification
//! and store, wired per user.
//!
//! Each user has one [`UserState`] behind a mutex. Queries take a snapshot of
//! the corpus, release the lock for retrieval and composition (which may call
//! providers), and only lock again to record side effects.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

use crate::api::{ForgetRequest, QueryOutcome, VerifyRequest};
use crate::composer::{self, ComposerConfig};
use crate::config::Settings;
use crate::decoder::{self, DecoderConfig};
use crate::domain::{
    Confidence, DimensionSketch, MemoryId, PendingPayload, PendingVerification, QueryClassification,
    QueryType, SourceKind, SpatialMemory, UserId, VerificationKind, DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_EMBEDDING_DIM,
};
use crate::encoder::{self, RawCapture};
use crate::error::{Error, Result};
use crate::providers::ProviderSuite;
use crate::retriever::{self, RetrieverConfig};
use crate::store::{EpisodeDraft, MatchWeights, MemoryStore, WriteGrant};
use crate::text::Lexicon;
use crate::verification::{self, Resolution, VerificationQueue, PENDING_EXTENSION};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to. Used by replay and tests.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock() = t;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub embedding_dim: usize,
    pub confidence_threshold: u8,
    pub verification_ttl: Duration,
    pub decoder: DecoderConfig,
    pub retriever: RetrieverConfig,
    pub lexicon: Lexicon,
    pub match_weights: MatchWeights,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            verification_ttl: Duration::seconds(verification::DEFAULT_TTL_SECS),
            decoder: DecoderConfig::default(),
            retriever: RetrieverConfig::default(),
            lexicon: Lexicon::default(),
            match_weights: MatchWeights::default(),
        }
    }

    pub fn from_settings(s: &Settings) -> Self {
        Self {
            data_dir: s.data_dir.clone(),
            embedding_dim: s.embedding_dim,
            confidence_threshold: s.confidence_threshold,
            verification_ttl: Duration::seconds(s.verification_ttl_secs),
            decoder: DecoderConfig {
                full_min_words: s.full_min_words,
            },
            retriever: s.retriever(),
            lexicon: Lexicon::with_extra(&s.extra_attribute_words, &s.extra_live_topic_words),
            match_weights: s.match_weights,
        }
    }

    fn composer(&self) -> ComposerConfig {
        ComposerConfig {
            confidence_threshold: self.confidence_threshold,
            lexicon: self.lexicon.clone(),
        }
    }
}

#[derive(Debug)]
pub struct UserState {
    pub store: MemoryStore,
    pub queue: VerificationQueue,
}

pub struct Engine {
    config: EngineConfig,
    providers: ProviderSuite,
    clock: Arc<dyn Clock>,
    users: Mutex<HashMap<UserId, Arc<Mutex<UserState>>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("providers", &self.providers)
            .finish_non_exhaustive()
    }
}

/// Seed input: an episode with the id it should be stored under.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedEpisode {
    pub id: MemoryId,
    pub draft: EpisodeDraft,
}

impl Engine {
    pub fn new(config: EngineConfig, providers: ProviderSuite, clock: Arc<dyn Clock>) -> Result<Self> {
        config.retriever.validate()?;
        if providers.embedder.dim() != config.embedding_dim {
            return Err(Error::Config(format!(
                "embedder dimension {} does not match configured {}",
                providers.embedder.dim(),
                config.embedding_dim
            )));
        }
        std::fs::create_dir_all(&config.data_dir).map_err(|e| Error::io(&config.data_dir, e))?;
        Ok(Self {
            config,
            providers,
            clock,
            users: Mutex::new(HashMap::new()),
        })
    }

    /// Stub providers and the system clock.
    pub fn open_stub(data_dir: impl Into<PathBuf>) -> Result<Self> {
        Self::new(EngineConfig::new(data_dir), ProviderSuite::stub(), Arc::new(SystemClock))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn providers(&self) -> &ProviderSuite {
        &self.providers
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    fn user(&self, user: &UserId) -> Result<Arc<Mutex<UserState>>> {
        user.validate()?;
        let mut users = self.users.lock();
        if let Some(s) = users.get(user) {
            return Ok(Arc::clone(s));
        }
        let c = &self.config;
        let state = UserState {
            store: MemoryStore::open_with_threshold(&c.data_dir, user, c.embedding_dim, c.confidence_threshold)?,
            queue: VerificationQueue::open(&c.data_dir, user, c.embedding_dim, c.verification_ttl)?,
        };
        let state = Arc::new(Mutex::new(state));
        users.insert(user.clone(), Arc::clone(&state));
        Ok(state)
    }

    /// Runs `f` with exclusive access to one user's store and queue.
    pub fn with_user<T>(&self, user: &UserId, f: impl FnOnce(&mut UserState) -> Result<T>) -> Result<T> {
        let state = self.user(user)?;
        let mut guard = state.lock();
        f(&mut guard)
    }

    /// Encodes and classifies a capture.
    pub fn decode(&self, capture: &RawCapture) -> Result<(DimensionSketch, QueryClassification)> {
        capture.validate()?;
        let mut sketch = encoder::encode_with(capture, &self.providers, &self.config.lexicon)?;
        let cls = decoder::classify_with(
            sketch.transcript_text(),
            &sketch,
            &self.providers,
            &self.config.decoder,
        );
        encoder::assign_intent(&mut sketch, &cls);
        Ok((sketch, cls))
    }

    /// Single entry point: answers, queues a note, or starts a removal
    /// depending on how the utterance classifies.
    pub fn handle_query(&self, capture: &RawCapture) -> Result<QueryOutcome> {
        let (sketch, cls) = self.decode(capture)?;
        match cls.query_type {
            QueryType::QuestionAnswering => self.answer(&capture.user_id, sketch, cls),
            QueryType::Remembrance => self.remember(&capture.user_id, sketch),
            QueryType::Removal => {
                let text = sketch.transcript_text().unwrap_or_default().to_owned();
                self.forget_text(&capture.user_id, &text)
            }
        }
    }

    pub fn handle_remember(&self, capture: &RawCapture) -> Result<QueryOutcome> {
        let (sketch, cls) = self.decode(capture)?;
        if cls.query_type != QueryType::Remembrance {
            return Err(Error::WrongEndpoint(format!(
                "utterance classified as {cls}, not a note to remember"
            )));
        }
        self.remember(&capture.user_id, sketch)
    }

    pub fn handle_forget(&self, req: &ForgetRequest) -> Result<QueryOutcome> {
        match (&req.memory_id, req.query_text.as_deref().map(str::trim)) {
            (Some(id), _) => self.forget_id(&req.user_id, id),
            (None, Some(text)) if !text.is_empty() => self.forget_text(&req.user_id, text),
            _ => Err(Error::InvalidArgument(
                "forget needs query_text or memory_id".into(),
            )),
        }
    }

    fn answer(&self, user: &UserId, sketch: DimensionSketch, cls: QueryClassification) -> Result<QueryOutcome> {
        let state = self.user(user)?;
        let snapshot = state.lock().store.snapshot();
        let set = retriever::retrieve(&sketch, &cls, &snapshot, &self.config.retriever, &self.providers)?;
        let comp = composer::compose(&sketch, &set, &snapshot, &cls, &self.providers, &self.config.composer())?;
        let response = comp.response;
        response.check_invariants(self.config.confidence_threshold)?;
        let candidate_ids = set.candidates.iter().map(|c| c.memory_id.clone()).collect();

        let adds_information = response.routing == SourceKind::Fresh || comp.revised_query.is_some();
        if !response.needs_verification && !adds_information {
            return Ok(QueryOutcome::Answered {
                response,
                candidate_ids,
                verification_id: None,
                stored_memory_id: None,
            });
        }

        let query_text = comp
            .revised_query
            .clone()
            .or_else(|| sketch.transcript_text().map(str::to_owned))
            .unwrap_or_default();
        let source_kind = if self.config.lexicon.mentions_live_topic(&query_text) {
            SourceKind::Live
        } else if comp.revised_query.is_some() {
            SourceKind::Static
        } else {
            response.routing
        };
        let draft = EpisodeDraft {
            user_id: user.clone(),
            sketch,
            query_text,
            response_text: response.answer_text.clone(),
            source_kind,
            confidence: response.confidence,
        };
        let memory = draft.clone().into_memory(draft.derived_id(), &self.providers)?;
        let now = self.clock.now();
        let mut st = state.lock();
        if response.needs_verification {
            let summary = verification::answer_summary(&response.answer_text, response.confidence);
            st.queue.expire(now)?;
            let id = st.queue.enqueue(
                PendingPayload::Answer {
                    memory,
                    response: response.clone(),
                },
                &summary,
                now,
            )?;
            Ok(QueryOutcome::Answered {
                response,
                candidate_ids,
                verification_id: Some(id),
                stored_memory_id: None,
            })
        } else {
            let mut memory = memory;
            memory.id = st.store.unique_id(&memory.id);
            if let Some(last) = st.store.last_created_at() {
                memory.created_at = memory.created_at.max(last);
            }
            let id = st.store.append(memory, WriteGrant::HighConfidence)?;
            Ok(QueryOutcome::Answered {
                response,
                candidate_ids,
                verification_id: None,
                stored_memory_id: Some(id),
            })
        }
    }

    fn remember(&self, user: &UserId, sketch: DimensionSketch) -> Result<QueryOutcome> {
        let transcript = sketch
            .transcript_text()
            .ok_or_else(|| Error::InvalidArgument("a note needs a transcript".into()))?
            .to_owned();
        let response_text = verification::note_text(&transcript, &self.providers)?;
        let draft = EpisodeDraft {
            user_id: user.clone(),
            sketch,
            query_text: transcript,
            response_text,
            source_kind: SourceKind::Static,
            confidence: Confidence::MAX,
        };
        let memory = draft.clone().into_memory(draft.derived_id(), &self.providers)?;
        let summary = verification::store_summary(&memory);
        let now = self.clock.now();
        let state = self.user(user)?;
        let mut st = state.lock();
        st.queue.expire(now)?;
        let id = st.queue.enqueue(PendingPayload::Store { memory }, &summary, now)?;
        Ok(QueryOutcome::Pending {
            kind: VerificationKind::StoreMemory,
            verification_id: id,
            summary,
            mode: QueryClassification::remembrance(),
        })
    }

    fn forget_text(&self, user: &UserId, text: &str) -> Result<QueryOutcome> {
        let now = self.clock.now();
        let state = self.user(user)?;
        let mut st = state.lock();
        st.queue.expire(now)?;
        let UserState { store, queue } = &mut *st;
        let (id, summary) = verification::begin_removal(
            text,
            store,
            queue,
            &self.providers,
            self.config.match_weights,
            now,
        )?;
        Ok(QueryOutcome::Pending {
            kind: VerificationKind::RemoveMemory,
            verification_id: id,
            summary,
            mode: QueryClassification::removal(),
        })
    }

    fn forget_id(&self, user: &UserId, memory_id: &MemoryId) -> Result<QueryOutcome> {
        let now = self.clock.now();
        let state = self.user(user)?;
        let mut st = state.lock();
        st.queue.expire(now)?;
        let memory = st.store.get(memory_id)?.clone();
        let summary = verification::removal_summary(&memory, 1.0, verification::LOW_MATCH_THRESHOLD, &self.providers)?;
        let id = st.queue.enqueue(
            PendingPayload::Remove {
                memory,
                match_score: 1.0,
            },
            &summary,
            now,
        )?;
        Ok(QueryOutcome::Pending {
            kind: VerificationKind::RemoveMemory,
            verification_id: id,
            summary,
            mode: QueryClassification::removal(),
        })
    }

    /// Finds which user a verification id belongs to, loading queues from
    /// disk as needed.
    fn owner_of(&self, req: &VerifyRequest) -> Result<UserId> {
        if let Some(u) = &req.user_id {
            return Ok(u.clone());
        }
        let loaded: Vec<(UserId, Arc<Mutex<UserState>>)> =
            self.users.lock().iter().map(|(k, v)| (k.clone(), Arc::clone(v))).collect();
        for (user, state) in &loaded {
            if state.lock().queue.contains(&req.verification_id) {
                return Ok(user.clone());
            }
        }
        let seen: HashSet<UserId> = loaded.into_iter().map(|(u, _)| u).collect();
        for user in self.users_on_disk(PENDING_EXTENSION)? {
            if seen.contains(&user) {
                continue;
            }
            if self.user(&user)?.lock().queue.contains(&req.verification_id) {
                return Ok(user);
            }
        }
        Err(Error::NotFound(format!("pending verification {}", req.verification_id)))
    }

    fn users_on_disk(&self, extension: &str) -> Result<Vec<UserId>> {
        let dir = &self.config.data_dir;
        let mut users = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(extension) {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                let user = UserId::from(stem);
                if user.validate().is_ok() {
                    users.push(user);
                }
            }
        }
        users.sort();
        Ok(users)
    }

    /// Users with a corpus file in the data directory.
    pub fn known_users(&self) -> Result<Vec<UserId>> {
        self.users_on_disk(crate::store::MEMLOG_EXTENSION)
    }

    pub fn verify(&self, req: &VerifyRequest) -> Result<Resolution> {
        let user = self.owner_of(req)?;
        let now = self.clock.now();
        self.with_user(&user, |st| {
            let UserState { store, queue } = st;
            let r = verification::resolve(
                queue,
                store,
                &req.verification_id,
                req.accept,
                req.replacement_answer.as_deref(),
                now,
                &self.providers,
            );
            queue.expire(now)?;
            r
        })
    }

    pub fn memories(&self, user: &UserId) -> Result<Vec<SpatialMemory>> {
        self.with_user(user, |st| Ok(st.store.list()))
    }

    pub fn pending(&self, user: &UserId) -> Result<Vec<PendingVerification>> {
        let now = self.clock.now();
        self.with_user(user, |st| {
            st.queue.expire(now)?;
            Ok(st.queue.pending(now))
        })
    }

    /// Stores a persona's episodes through the verification path with every
    /// entry accepted. Nothing is stored if any episode is rejected up front.
    pub fn seed(&self, user: &UserId, episodes: Vec<SeedEpisode>) -> Result<usize> {
        let mut seen = HashSet::new();
        for e in &episodes {
            if !seen.insert(e.id.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate memory id {} in seed", e.id)));
            }
            if &e.draft.user_id != user {
                return Err(Error::InvalidArgument(format!(
                    "episode {} belongs to {}, seeding {user}",
                    e.id, e.draft.user_id
                )));
            }
        }
        let mut memories = episodes
            .into_iter()
            .map(|e| e.draft.into_memory(e.id, &self.providers))
            .collect::<Result<Vec<_>>>()?;
        memories.sort_by_key(|m| m.created_at);
        let now = self.clock.now();
        self.with_user(user, |st| {
            if let Some(m) = memories.iter().find(|m| st.store.contains(&m.id)) {
                return Err(Error::Conflict(format!("memory id {} already stored", m.id)));
            }
            if let (Some(first), Some(last)) = (memories.first(), st.store.last_created_at()) {
                if first.created_at < last {
                    return Err(Error::InvalidArgument(format!(
                        "seed starts at {} but the corpus already holds memories up to {last}",
                        first.created_at
                    )));
                }
            }
            let n = memories.len();
            for m in memories {
                let summary = verification::store_summary(&m);
                let UserState { store, queue } = &mut *st;
                let id = queue.enqueue(PendingPayload::Store { memory: m }, &summary, now)?;
                verification::resolve(queue, store, &id, true, None, now, &self.providers)?;
            }
            st.store.flush()?;
            st.queue.flush()?;
            Ok(n)
        })
    }

    /// Compacts every loaded corpus and queue.
    pub fn flush(&self) -> Result<()> {
        let states: Vec<Arc<Mutex<UserState>>> = self.users.lock().values().cloned().collect();
        for s in states {
            let mut st = s.lock();
            st.store.flush()?;
            st.queue.flush()?;
        }
        Ok(())
    }
}
