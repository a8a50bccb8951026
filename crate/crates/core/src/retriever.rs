//! Multi-dimension ranking, reciprocal rank fusion and knowledge routing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::decoder;
use crate::domain::{
    weekday_of, DimensionSketch, Embedding, GeoPoint, Granularity, MemoryId, QueryClassification,
    SourceKind, SpatialMemory, TemporalConstraint,
};
use crate::encoder;
use crate::error::{Error, Result};
use crate::providers::{ProviderSuite, SearchResult};

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const DEFAULT_K_FINAL: usize = 5;
pub const DEFAULT_RRF_CONSTANT: f64 = 60.0;
pub const DEFAULT_GPS_RADIUS_M: f64 = 150.0;
pub const DEFAULT_CORPUS_SIZE_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Gps,
    Text,
    Scene,
    Referent,
    Time,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Gps,
        Dimension::Text,
        Dimension::Scene,
        Dimension::Referent,
        Dimension::Time,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Gps => "gps",
            Dimension::Text => "text",
            Dimension::Scene => "scene",
            Dimension::Referent => "referent",
            Dimension::Time => "time",
        }
    }

    /// Human wording used in rationales.
    pub fn describe(self) -> &'static str {
        match self {
            Dimension::Gps => "location",
            Dimension::Text => "your words",
            Dimension::Scene => "the scene",
            Dimension::Referent => "the object in view",
            Dimension::Time => "timing",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub k_final: usize,
    pub rrf_constant: f64,
    pub gps_radius_m: f64,
    pub active_dimensions: BTreeSet<Dimension>,
    /// Largest corpus the minimum-support floor is sized for.
    pub corpus_size_cap: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            k_final: DEFAULT_K_FINAL,
            rrf_constant: DEFAULT_RRF_CONSTANT,
            gps_radius_m: DEFAULT_GPS_RADIUS_M,
            active_dimensions: Dimension::ALL.into_iter().collect(),
            corpus_size_cap: DEFAULT_CORPUS_SIZE_CAP,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_final == 0 {
            return Err(Error::Config("k_final must be at least 1".into()));
        }
        if !(self.rrf_constant.is_finite() && self.rrf_constant > 0.0) {
            return Err(Error::Config("rrf_constant must be positive".into()));
        }
        if !(self.gps_radius_m.is_finite() && self.gps_radius_m >= 0.0) {
            return Err(Error::Config("gps_radius_m must be non-negative".into()));
        }
        if self.corpus_size_cap == 0 {
            return Err(Error::Config("corpus_size_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Fused score below which the top candidate is not trusted.
    pub fn min_support(&self) -> f64 {
        1.0 / (self.rrf_constant + (self.k_final * self.corpus_size_cap) as f64)
    }

    fn is_active(&self, d: Dimension) -> bool {
        self.active_dimensions.contains(&d)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * 1000.0 * h.sqrt().min(1.0).asin()
}

/// Newer first, then id ascending.
fn recency_order(a: &SpatialMemory, b: &SpatialMemory) -> std::cmp::Ordering {
    b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id))
}

/// Memories within the radius, nearest first.
pub fn rank_by_gps(
    sketch: &DimensionSketch,
    corpus: &[SpatialMemory],
    config: &RetrieverConfig,
) -> Vec<MemoryId> {
    let mut hits: Vec<(f64, &SpatialMemory)> = corpus
        .iter()
        .map(|m| (haversine_m(sketch.gps, m.sketch.gps), m))
        .filter(|(d, _)| *d <= config.gps_radius_m)
        .collect();
    hits.sort_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| recency_order(a, b)));
    hits.into_iter().map(|(_, m)| m.id.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticField {
    Text,
    Scene,
    Referent,
}

impl SemanticField {
    pub fn dimension(self) -> Dimension {
        match self {
            SemanticField::Text => Dimension::Text,
            SemanticField::Scene => Dimension::Scene,
            SemanticField::Referent => Dimension::Referent,
        }
    }

    /// The sketch text compared against this field, if the sketch has one.
    pub fn query_text(self, sketch: &DimensionSketch) -> Option<&str> {
        match self {
            SemanticField::Text => sketch.transcript_text(),
            SemanticField::Scene => crate::domain::non_blank(Some(&sketch.scene_description)),
            SemanticField::Referent => sketch.referent_text(),
        }
    }

    fn stored(self, m: &SpatialMemory) -> &Embedding {
        match self {
            SemanticField::Text => &m.embeddings.text,
            SemanticField::Scene => &m.embeddings.scene,
            SemanticField::Referent => &m.embeddings.referent,
        }
    }
}

/// Ranks by cosine against an already-computed query embedding. Memories
/// with no positive similarity are left out.
pub fn rank_by_embedding(
    query: &Embedding,
    corpus: &[SpatialMemory],
    field: SemanticField,
) -> Vec<MemoryId> {
    let mut hits: Vec<(f64, &SpatialMemory)> = corpus
        .iter()
        .map(|m| (query.cosine(field.stored(m)), m))
        .filter(|(c, _)| *c > 0.0)
        .collect();
    hits.sort_by(|(ca, a), (cb, b)| cb.total_cmp(ca).then_with(|| recency_order(a, b)));
    hits.into_iter().map(|(_, m)| m.id.clone()).collect()
}

/// Empty when the sketch lacks the field.
pub fn rank_by_semantic(
    sketch: &DimensionSketch,
    corpus: &[SpatialMemory],
    field: SemanticField,
    providers: &ProviderSuite,
) -> Result<Vec<MemoryId>> {
    match field.query_text(sketch) {
        Some(text) => Ok(rank_by_embedding(&providers.embed(text)?, corpus, field)),
        None => Ok(Vec::new()),
    }
}

/// Weekday constraints filter; everything else just orders newest first.
pub fn rank_by_time(corpus: &[SpatialMemory], constraint: &TemporalConstraint) -> Vec<MemoryId> {
    let mut hits: Vec<&SpatialMemory> = corpus
        .iter()
        .filter(|m| passes_weekday(m, constraint))
        .collect();
    hits.sort_by(|a, b| recency_order(a, b));
    hits.into_iter().map(|m| m.id.clone()).collect()
}

fn passes_weekday(m: &SpatialMemory, constraint: &TemporalConstraint) -> bool {
    constraint
        .weekday()
        .map_or(true, |day| weekday_of(m.created_at) == day)
}

/// One fused result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fused<K> {
    pub key: K,
    pub score: f64,
    /// 1-based rank in each list that contains the key, by list position.
    pub ranks: Vec<(usize, usize)>,
}

/// Reciprocal rank fusion: `score = sum 1/(c + rank)` over the lists holding
/// a key. Sorted by score, then newer `created_at`, then key; cut to `k`.
/// Lists are expected to hold each key at most once.
pub fn fuse_rrf<K, F>(lists: &[Vec<K>], c: f64, k: usize, created_at: F) -> Vec<Fused<K>>
where
    K: Clone + Ord + std::hash::Hash,
    F: Fn(&K) -> DateTime<Utc>,
{
    let mut slot: HashMap<&K, usize> = HashMap::new();
    let mut fused: Vec<Fused<K>> = Vec::new();
    for (li, list) in lists.iter().enumerate() {
        for (pos, key) in list.iter().enumerate() {
            let rank = pos + 1;
            let i = *slot.entry(key).or_insert_with(|| {
                fused.push(Fused {
                    key: key.clone(),
                    score: 0.0,
                    ranks: Vec::new(),
                });
                fused.len() - 1
            });
            fused[i].score += 1.0 / (c + rank as f64);
            fused[i].ranks.push((li, rank));
        }
    }
    fused.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| created_at(&b.key).cmp(&created_at(&a.key)))
            .then_with(|| a.key.cmp(&b.key))
    });
    fused.truncate(k);
    fused
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub memory_id: MemoryId,
    pub score: f64,
    pub ranks: BTreeMap<Dimension, usize>,
    pub source_kind: SourceKind,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub routing: SourceKind,
    pub exhausted_dimensions: Vec<Dimension>,
    pub temporal: TemporalConstraint,
    /// True when retrieval was skipped for a full question with no memory cue.
    pub bypassed: bool,
}

impl CandidateSet {
    pub fn empty(temporal: TemporalConstraint, bypassed: bool) -> Self {
        Self {
            candidates: Vec::new(),
            routing: SourceKind::Fresh,
            exhausted_dimensions: Dimension::ALL.to_vec(),
            temporal,
            bypassed,
        }
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

pub fn route_knowledge(candidates: &[Candidate], config: &RetrieverConfig) -> SourceKind {
    match candidates.first() {
        None => SourceKind::Fresh,
        Some(top) if top.score < config.min_support() => SourceKind::Fresh,
        Some(top) if top.source_kind == SourceKind::Live => SourceKind::Live,
        Some(_) => SourceKind::Static,
    }
}

/// Whether this classification goes through retrieval at all.
pub fn engages_retrieval(classification: &QueryClassification, sketch: &DimensionSketch) -> bool {
    match classification.granularity {
        Some(Granularity::Partial | Granularity::Zero) => true,
        Some(Granularity::Full) => decoder::has_memory_marker(sketch.transcript_text()),
        None => false,
    }
}

/// Hard filters shared by every dimension: the weekday constraint, then the
/// GPS radius when at least one memory lies inside it.
pub fn eligible<'a>(
    sketch: &DimensionSketch,
    corpus: &'a [SpatialMemory],
    temporal: &TemporalConstraint,
    config: &RetrieverConfig,
) -> Vec<SpatialMemory> {
    let by_day: Vec<&'a SpatialMemory> = corpus.iter().filter(|m| passes_weekday(m, temporal)).collect();
    let near: Vec<&SpatialMemory> = by_day
        .iter()
        .copied()
        .filter(|m| haversine_m(sketch.gps, m.sketch.gps) <= config.gps_radius_m)
        .collect();
    let kept = if near.is_empty() { by_day } else { near };
    kept.into_iter().cloned().collect()
}

pub fn retrieve(
    sketch: &DimensionSketch,
    classification: &QueryClassification,
    corpus: &[SpatialMemory],
    config: &RetrieverConfig,
    providers: &ProviderSuite,
) -> Result<CandidateSet> {
    config.validate()?;
    let temporal = encoder::extract_temporal(sketch.transcript_text());
    if !engages_retrieval(classification, sketch) {
        return Ok(CandidateSet::empty(temporal, true));
    }
    let pool = eligible(sketch, corpus, &temporal, config);

    let mut lists: Vec<(Dimension, Vec<MemoryId>)> = Vec::new();
    if config.is_active(Dimension::Gps) {
        lists.push((Dimension::Gps, rank_by_gps(sketch, &pool, config)));
    }
    for field in [SemanticField::Text, SemanticField::Scene, SemanticField::Referent] {
        if config.is_active(field.dimension()) {
            lists.push((field.dimension(), rank_by_semantic(sketch, &pool, field, providers)?));
        }
    }
    if config.is_active(Dimension::Time) {
        // Time orders what the content dimensions surfaced; on its own it
        // would put every eligible memory on the board.
        let surfaced: HashSet<&MemoryId> = lists.iter().flat_map(|(_, l)| l.iter()).collect();
        let content_active = !lists.is_empty();
        let subset: Vec<SpatialMemory> = if content_active {
            pool.iter().filter(|m| surfaced.contains(&m.id)).cloned().collect()
        } else {
            pool.clone()
        };
        lists.push((Dimension::Time, rank_by_time(&subset, &temporal)));
    }

    let exhausted_dimensions: Vec<Dimension> = Dimension::ALL
        .into_iter()
        .filter(|d| lists.iter().find(|(ld, _)| ld == d).map_or(true, |(_, l)| l.is_empty()))
        .collect();

    let by_id: HashMap<&MemoryId, &SpatialMemory> = pool.iter().map(|m| (&m.id, m)).collect();
    let raw: Vec<Vec<MemoryId>> = lists.iter().map(|(_, l)| l.clone()).collect();
    let fused = fuse_rrf(&raw, config.rrf_constant, config.k_final, |id| by_id[id].created_at);
    let candidates: Vec<Candidate> = fused
        .into_iter()
        .map(|f| {
            let m = by_id[&f.key];
            Candidate {
                ranks: f.ranks.iter().map(|&(li, r)| (lists[li].0, r)).collect(),
                memory_id: f.key,
                score: f.score,
                source_kind: m.source_kind,
                created_at: m.created_at,
            }
        })
        .collect();
    let routing = route_knowledge(&candidates, config);
    Ok(CandidateSet {
        candidates,
        routing,
        exhausted_dimensions,
        temporal,
        bypassed: false,
    })
}

/// Result of refreshing a live memory at read time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveRefresh {
    pub response_text: String,
    /// Set when the search gave nothing usable and the stored answer is returned.
    pub stale_note: Option<String>,
    pub source: Option<SearchResult>,
}

/// One web search for the memory's question and referent. The stored memory
/// is never modified.
pub fn refresh_live(memory: &SpatialMemory, providers: &ProviderSuite) -> Result<LiveRefresh> {
    if memory.source_kind != SourceKind::Live {
        return Err(Error::Precondition(format!(
            "memory {} is not a live memory",
            memory.id
        )));
    }
    let query = match memory.sketch.referent_text() {
        Some(r) => format!("{} {r}", memory.query_text.trim()),
        None => memory.query_text.trim().to_owned(),
    };
    let stale = |why: &str| LiveRefresh {
        response_text: memory.response_text.clone(),
        stale_note: Some(format!(
            "Live update unavailable ({why}); showing the answer saved on {}, which may be stale.",
            memory.created_at.format("%Y-%m-%d")
        )),
        source: None,
    };
    let results = match providers.search(&query) {
        Ok(r) => r,
        Err(e) => return Ok(stale(&e.to_string())),
    };
    match results.into_iter().find(|r| !r.snippet.trim().is_empty()) {
        Some(hit) => {
            let snippet = hit.snippet.trim().trim_end_matches('.');
            Ok(LiveRefresh {
                response_text: format!("{snippet} (updated {} UTC).", hit.fetched_at.format("%H:%M")),
                stale_note: None,
                source: Some(hit),
            })
        }
        None => Ok(stale("no search results")),
    }
}

/// `lat`/`lon` points a given number of meters north of `origin`.
pub fn offset_north(origin: GeoPoint, meters: f64) -> GeoPoint {
    let dlat = (meters / (EARTH_RADIUS_KM * 1000.0)).to_degrees();
    GeoPoint::new(origin.lat + dlat, origin.lon)
}
