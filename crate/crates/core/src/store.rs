//! Per-user episodic memory store backed by an append-only line log at
//! `<data_dir>/<user_id>.memlog`.
//!
//! Writes go through [`MemoryStore::append`] and [`MemoryStore::delete`] only.
//! Both need a grant: a [`VerificationToken`] minted when a human accepts a
//! pending entry, or (append only) a confidence at or above the threshold.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    Confidence, DimensionSketch, MemoryEmbeddings, MemoryId, SourceKind, SpatialMemory, UserId,
    DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::linelog::{self, Header, Keyed, LineLog, Scan};
use crate::providers::ProviderSuite;
use crate::text;

pub const MEMLOG_FORMAT: &str = "spatial-recall/memlog";
pub const MEMLOG_EXTENSION: &str = "memlog";

impl Keyed for SpatialMemory {
    fn key(&self) -> &str {
        self.id.as_str()
    }
}

/// Proof that a human accepted a pending change. Only the verification
/// module can mint one.
#[derive(Debug)]
pub struct VerificationToken {
    _private: (),
}

impl VerificationToken {
    pub(crate) fn mint() -> Self {
        Self { _private: () }
    }
}

#[derive(Debug)]
pub enum WriteGrant {
    Verified(VerificationToken),
    /// Allowed only when the memory's confidence meets the store threshold.
    HighConfidence,
}

/// Weights of the removal best-match score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub semantic: f64,
    pub keyword: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            semantic: 0.5,
            keyword: 0.5,
        }
    }
}

pub fn memlog_path(data_dir: &Path, user: &UserId) -> PathBuf {
    data_dir.join(format!("{user}.{MEMLOG_EXTENSION}"))
}

/// Text a memory is matched on: what was asked and what was answered.
pub fn memory_text(query_text: &str, response_text: &str) -> String {
    format!("{} {}", query_text.trim(), response_text.trim())
        .trim()
        .to_owned()
}

/// Unsaved episode: everything but the id and the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDraft {
    pub user_id: UserId,
    pub sketch: DimensionSketch,
    pub query_text: String,
    pub response_text: String,
    pub source_kind: SourceKind,
    pub confidence: Confidence,
}

impl EpisodeDraft {
    /// Embeds the draft's text, scene and referent fields.
    pub fn embed(&self, providers: &ProviderSuite) -> Result<MemoryEmbeddings> {
        let text = memory_text(&self.query_text, &self.response_text);
        let text = if text.is_empty() {
            self.sketch.scene_description.clone()
        } else {
            text
        };
        let scene = if self.sketch.scene_description.trim().is_empty() {
            self.sketch.space_label.clone()
        } else {
            self.sketch.scene_description.clone()
        };
        let referent = self
            .sketch
            .referent_text()
            .map(str::to_owned)
            .unwrap_or_else(|| scene.clone());
        Ok(MemoryEmbeddings {
            text: providers.embed(&text)?,
            scene: providers.embed(&scene)?,
            referent: providers.embed(&referent)?,
        })
    }

    /// Content-derived id: the same episode always hashes to the same id.
    pub fn derived_id(&self) -> MemoryId {
        let mut h = Sha256::new();
        for part in [
            self.user_id.as_str(),
            &self.sketch.timestamp.to_rfc3339(),
            &self.query_text,
            &self.response_text,
            &self.sketch.scene_description,
            &format!("{:.7},{:.7}", self.sketch.gps.lat, self.sketch.gps.lon),
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let hex: String = h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect();
        MemoryId::new(format!("m{hex}"))
    }

    pub fn into_memory(self, id: MemoryId, providers: &ProviderSuite) -> Result<SpatialMemory> {
        let embeddings = self.embed(providers)?;
        Ok(SpatialMemory {
            id,
            user_id: self.user_id,
            created_at: self.sketch.timestamp,
            sketch: self.sketch,
            query_text: self.query_text,
            response_text: self.response_text,
            source_kind: self.source_kind,
            confidence: self.confidence,
            embeddings,
        })
    }
}

/// Best-match score of one memory against a removal query.
pub fn match_score(
    query_embedding: &crate::domain::Embedding,
    query_tokens: &std::collections::BTreeSet<String>,
    memory: &SpatialMemory,
    weights: MatchWeights,
) -> f64 {
    let cosine = query_embedding.cosine(&memory.embeddings.text).clamp(0.0, 1.0);
    let memory_tokens = text::token_set(&memory_text(&memory.query_text, &memory.response_text));
    let keyword = text::jaccard(query_tokens, &memory_tokens);
    weights.semantic * cosine + weights.keyword * keyword
}

#[derive(Debug)]
pub struct MemoryStore {
    user_id: UserId,
    log: LineLog,
    memories: Arc<Vec<SpatialMemory>>,
    index: HashMap<MemoryId, usize>,
    threshold: u8,
}

impl MemoryStore {
    /// Opens the user's corpus under `data_dir`, creating an empty one.
    pub fn open(data_dir: &Path, user_id: &UserId, dim: usize) -> Result<Self> {
        Self::open_with_threshold(data_dir, user_id, dim, DEFAULT_CONFIDENCE_THRESHOLD)
    }

    pub fn open_with_threshold(
        data_dir: &Path,
        user_id: &UserId,
        dim: usize,
        threshold: u8,
    ) -> Result<Self> {
        user_id.validate()?;
        let path = memlog_path(data_dir, user_id);
        let header = Header {
            format: MEMLOG_FORMAT.into(),
            version: linelog::FORMAT_VERSION,
            dim,
            user_id: user_id.clone(),
        };
        let (log, memories) = LineLog::open::<SpatialMemory>(&path, header)?;
        if log.header().dim != dim {
            return Err(Error::Config(format!(
                "{} was created with embedding dimension {}, configured {dim}",
                path.display(),
                log.header().dim
            )));
        }
        let index = memories
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        Ok(Self {
            user_id: user_id.clone(),
            log,
            memories: Arc::new(memories),
            index,
            threshold,
        })
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn dim(&self) -> usize {
        self.log.header().dim
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    /// Immutable view for concurrent readers.
    pub fn snapshot(&self) -> Arc<Vec<SpatialMemory>> {
        Arc::clone(&self.memories)
    }

    pub fn contains(&self, id: &MemoryId) -> bool {
        self.index.contains_key(id)
    }

    pub fn last_created_at(&self) -> Option<DateTime<Utc>> {
        self.memories.last().map(|m| m.created_at)
    }

    /// `base`, or `base-2`, `base-3`, ... whichever is free.
    pub fn unique_id(&self, base: &MemoryId) -> MemoryId {
        if !self.contains(base) {
            return base.clone();
        }
        (2..)
            .map(|n| MemoryId::new(format!("{base}-{n}")))
            .find(|id| !self.contains(id))
            .expect("unbounded search")
    }

    pub fn append(&mut self, memory: SpatialMemory, grant: WriteGrant) -> Result<MemoryId> {
        if let WriteGrant::HighConfidence = grant {
            if memory.confidence.get() < self.threshold {
                return Err(Error::Gated(format!(
                    "memory {} has confidence {} below {} and no verification",
                    memory.id,
                    memory.confidence.get(),
                    self.threshold
                )));
            }
        }
        if memory.user_id != self.user_id {
            return Err(Error::InvalidArgument(format!(
                "memory belongs to {}, store is {}",
                memory.user_id, self.user_id
            )));
        }
        memory.validate(self.dim())?;
        if self.contains(&memory.id) {
            return Err(Error::Conflict(format!("memory id {} already exists", memory.id)));
        }
        if let Some(last) = self.last_created_at() {
            if memory.created_at < last {
                return Err(Error::InvalidArgument(format!(
                    "created_at {} precedes the newest stored memory ({last})",
                    memory.created_at
                )));
            }
        }
        self.log.put(&memory)?;
        let id = memory.id.clone();
        self.index.insert(id.clone(), self.memories.len());
        Arc::make_mut(&mut self.memories).push(memory);
        Ok(id)
    }

    pub fn get(&self, id: &MemoryId) -> Result<&SpatialMemory> {
        self.index
            .get(id)
            .map(|&i| &self.memories[i])
            .ok_or_else(|| Error::NotFound(format!("memory {id}")))
    }

    pub fn delete(&mut self, id: &MemoryId, _token: VerificationToken) -> Result<()> {
        let pos = *self
            .index
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("memory {id}")))?;
        self.log.del(id.as_str())?;
        Arc::make_mut(&mut self.memories).remove(pos);
        self.reindex();
        Ok(())
    }

    fn reindex(&mut self) {
        self.index = self
            .memories
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
    }

    /// All memories, oldest first.
    pub fn list(&self) -> Vec<SpatialMemory> {
        self.memories.to_vec()
    }

    /// Compacts the log: header plus live records, no tombstones.
    pub fn flush(&mut self) -> Result<()> {
        self.log.rewrite(&self.memories)
    }

    pub fn find_best_match(
        &self,
        query_text: &str,
        providers: &ProviderSuite,
    ) -> Result<(SpatialMemory, f64)> {
        self.find_best_match_with(query_text, providers, MatchWeights::default())
    }

    /// Highest semantic + keyword score; newer memories win ties.
    pub fn find_best_match_with(
        &self,
        query_text: &str,
        providers: &ProviderSuite,
        weights: MatchWeights,
    ) -> Result<(SpatialMemory, f64)> {
        if self.memories.is_empty() {
            return Err(Error::NotFound(format!("no memories for {}", self.user_id)));
        }
        let q = if query_text.trim().is_empty() { "?" } else { query_text };
        let q_emb = providers.embed(q)?;
        let q_tokens = text::token_set(q);
        let best = self
            .memories
            .iter()
            .map(|m| (m, match_score(&q_emb, &q_tokens, m, weights)))
            .max_by(|(a, sa), (b, sb)| {
                sa.total_cmp(sb)
                    .then(a.created_at.cmp(&b.created_at))
                    .then(b.id.cmp(&a.id))
            })
            .expect("non-empty");
        Ok((best.0.clone(), best.1))
    }
}

/// Reads a corpus file strictly.
pub fn load(path: &Path) -> Result<Vec<SpatialMemory>> {
    let (_, entries) = linelog::scan::<SpatialMemory>(path, MEMLOG_FORMAT)?.into_strict(path)?;
    Ok(entries)
}

/// Reads a corpus file, keeping every record before the first bad line.
pub fn scan(path: &Path) -> Result<Scan<SpatialMemory>> {
    linelog::scan(path, MEMLOG_FORMAT)
}


#[cfg(test)]
mod tests {
    use super::test_support::memory;
    use super::*;

    fn store(dir: &Path) -> MemoryStore {
        MemoryStore::open(dir, &"u1".into(), crate::domain::DEFAULT_EMBEDDING_DIM).unwrap()
    }

    fn plant(p: &ProviderSuite) -> SpatialMemory {
        memory(
            p,
            "plant",
            "Remind me to water the plant on Tuesdays",
            "Plant watering on Tuesdays.",
            "a potted plant on a desk",
            Some("plant"),
            2,
        )
    }

    fn bus(p: &ProviderSuite) -> SpatialMemory {
        memory(
            p,
            "bus",
            "When does the next M11 bus arrive?",
            "The M11 comes every 10 minutes.",
            "a bus stop sign on a street",
            Some("M11 bus"),
            3,
        )
    }

    #[test]
    fn append_get_delete() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        assert!(s.list().is_empty());
        let m = plant(&p);
        let id = s.append(m.clone(), WriteGrant::HighConfidence).unwrap();
        assert_eq!(s.get(&id).unwrap(), &m);
        assert!(matches!(
            s.append(m.clone(), WriteGrant::HighConfidence),
            Err(Error::Conflict(_))
        ));
        s.delete(&id, VerificationToken::mint()).unwrap();
        assert!(matches!(s.get(&id), Err(Error::NotFound(_))));
        assert!(matches!(
            s.delete(&id, VerificationToken::mint()),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn low_confidence_without_token_is_gated_and_file_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        let before = std::fs::read(s.path()).unwrap();
        let mut m = plant(&p);
        m.confidence = Confidence::new(6).unwrap();
        assert!(matches!(
            s.append(m.clone(), WriteGrant::HighConfidence),
            Err(Error::Gated(_))
        ));
        assert_eq!(std::fs::read(s.path()).unwrap(), before);
        s.append(m, WriteGrant::Verified(VerificationToken::mint())).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn reopen_and_flush_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        s.append(plant(&p), WriteGrant::HighConfidence).unwrap();
        s.append(bus(&p), WriteGrant::HighConfidence).unwrap();
        s.delete(&"plant".into(), VerificationToken::mint()).unwrap();
        let expected = s.list();
        assert_eq!(store(dir.path()).list(), expected);
        s.flush().unwrap();
        assert_eq!(load(s.path()).unwrap(), expected);
        assert_eq!(store(dir.path()).list(), expected);
    }

    #[test]
    fn created_at_must_not_go_backwards() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        s.append(bus(&p), WriteGrant::HighConfidence).unwrap();
        assert!(matches!(
            s.append(plant(&p), WriteGrant::HighConfidence),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn best_match_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        assert!(matches!(
            s.find_best_match("anything", &p),
            Err(Error::NotFound(_))
        ));
        s.append(plant(&p), WriteGrant::HighConfidence).unwrap();
        let (m, _) = s.find_best_match("the memory about llamas", &p).unwrap();
        assert_eq!(m.id.as_str(), "plant");
        s.append(bus(&p), WriteGrant::HighConfidence).unwrap();

        let (m, score) = s.find_best_match("the memory on the plant", &p).unwrap();
        assert_eq!(m.id.as_str(), "plant");
        assert!((0.0..=1.0).contains(&score));

        // Brute-force re-score of both memories.
        let q = p.embed("the memory on the plant").unwrap();
        let qt = text::token_set("the memory on the plant");
        let scores: Vec<f64> = s
            .list()
            .iter()
            .map(|m| {
                let cos = q.cosine(&m.embeddings.text).clamp(0.0, 1.0);
                let mt = text::token_set(&format!("{} {}", m.query_text, m.response_text));
                let inter = qt.intersection(&mt).count() as f64;
                let union = qt.union(&mt).count() as f64;
                0.5 * cos + 0.5 * inter / union
            })
            .collect();
        assert!(scores[0] > scores[1]);
        assert_eq!(score, scores[0]);
    }

    #[test]
    fn best_match_tie_goes_to_newer() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let mut s = store(dir.path());
        let old = memory(&p, "old", "same text", "same", "scene", None, 2);
        let new = memory(&p, "new", "same text", "same", "scene", None, 5);
        s.append(old, WriteGrant::HighConfidence).unwrap();
        s.append(new, WriteGrant::HighConfidence).unwrap();
        assert_eq!(s.find_best_match("same text", &p).unwrap().0.id.as_str(), "new");
    }

    #[test]
    fn derived_ids_are_stable_and_unique_ids_avoid_collisions() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProviderSuite::stub();
        let m = plant(&p);
        let draft = EpisodeDraft {
            user_id: m.user_id.clone(),
            sketch: m.sketch.clone(),
            query_text: m.query_text.clone(),
            response_text: m.response_text.clone(),
            source_kind: m.source_kind,
            confidence: m.confidence,
        };
        assert_eq!(draft.derived_id(), draft.derived_id());
        let mut s = store(dir.path());
        let mut first = m.clone();
        first.id = draft.derived_id();
        s.append(first, WriteGrant::HighConfidence).unwrap();
        assert_eq!(
            s.unique_id(&draft.derived_id()).as_str(),
            format!("{}-2", draft.derived_id())
        );
    }

    #[test]
    fn store_for_other_dimension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        store(dir.path());
        assert!(matches!(
            MemoryStore::open(dir.path(), &"u1".into(), 64),
            Err(Error::Config(_))
        ));
    }
}
