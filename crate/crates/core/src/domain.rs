//! Shared vocabulary: sketches, memories, classifications and the small
//! pure helpers every pipeline stage leans on.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::{DateTime, Datelike, Utc, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Embedding dimension used when a store is created without an explicit one.
pub const DEFAULT_EMBEDDING_DIM: usize = 256;
/// Answers scored below this need a human decision before they are stored.
pub const DEFAULT_CONFIDENCE_THRESHOLD: u8 = 7;
/// Hard cap on answer length, in words.
pub const MAX_ANSWER_WORDS: usize = 30;

const NORM_TOLERANCE: f64 = 1e-6;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque memory identifier, unique within one user's corpus.
    MemoryId
);
string_id!(
    /// Opaque user identifier. Also names the user's files on disk.
    UserId
);
string_id!(VerificationId);

impl UserId {
    /// User ids become file names, so only a conservative character set is allowed.
    pub fn validate(&self) -> Result<()> {
        let ok = !self.0.is_empty()
            && self.0.len() <= 128
            && !self.0.starts_with('.')
            && self
                .0
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid user id {:?}", self.0)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::InvalidArgument(format!(
                "latitude {} outside [-90, 90]",
                self.lat
            )));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Error::InvalidArgument(format!(
                "longitude {} outside [-180, 180]",
                self.lon
            )));
        }
        Ok(())
    }
}

/// Snapshot of the user's context at the moment of an interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSketch {
    pub space_label: String,
    pub scene_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent: Option<String>,
    pub timestamp: DateTime<Utc>,
    pub gps: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl DimensionSketch {
    pub fn validate(&self) -> Result<()> {
        self.gps.validate()
    }

    /// Retrieval needs a scene to compare against.
    pub fn validate_for_retrieval(&self) -> Result<()> {
        self.validate()?;
        if self.scene_description.trim().is_empty() {
            return Err(Error::MissingContext(
                "scene description is required for retrieval".into(),
            ));
        }
        Ok(())
    }

    pub fn transcript_text(&self) -> Option<&str> {
        non_blank(self.transcript.as_deref())
    }

    pub fn referent_text(&self) -> Option<&str> {
        non_blank(self.referent.as_deref())
    }
}

pub(crate) fn non_blank(s: Option<&str>) -> Option<&str> {
    s.map(str::trim).filter(|s| !s.is_empty())
}

/// Where a stored answer came from, which also decides how it is recalled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Recalled as-is from personal memory.
    Static,
    /// Refreshed from web search on every recall.
    Live,
    /// Answered from general knowledge with no prior memory.
    Fresh,
}

/// Confidence score on the 1..=10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Confidence(u8);

impl Confidence {
    pub const MIN: Confidence = Confidence(1);
    pub const MAX: Confidence = Confidence(10);

    pub fn new(value: u8) -> Result<Self> {
        if (1..=10).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "confidence {value} outside [1, 10]"
            )))
        }
    }

    /// Clamps any integer into the valid range.
    pub fn clamped(value: i64) -> Self {
        Self(value.clamp(1, 10) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Confidence::new(v).map_err(serde::de::Error::custom)
    }
}

/// Unit-norm embedding vector. Serialized as base64 of little-endian `f32`s so
/// records round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `raw` to unit length. A zero vector is rejected.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(Self(raw.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps an already-normalized vector, checking the norm.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let e = Self(values);
        e.validate(e.dim())?;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {} != {dim}",
                self.dim()
            )));
        }
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "embedding norm {n} is not 1"
            )));
        }
        Ok(())
    }

    /// Cosine similarity. Both vectors are unit-norm, so this is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(self.0.len() * 4);
        for v in &self.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        s.serialize_str(&B64.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(serde::de::Error::custom("embedding byte length not a multiple of 4"));
        }
        Ok(Embedding(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEmbeddings {
    pub text: Embedding,
    pub scene: Embedding,
    pub referent: Embedding,
}

/// A persisted episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMemory {
    pub id: MemoryId,
    pub user_id: UserId,
    pub created_at: DateTime<Utc>,
    pub sketch: DimensionSketch,
    pub query_text: String,
    pub response_text: String,
    pub source_kind: SourceKind,
    pub confidence: Confidence,
    pub embeddings: MemoryEmbeddings,
}

impl SpatialMemory {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.user_id.validate()?;
        if self.id.as_str().trim().is_empty() {
            return Err(Error::InvalidArgument("memory id is empty".into()));
        }
        self.sketch.validate()?;
        self.embeddings.text.validate(dim)?;
        self.embeddings.scene.validate(dim)?;
        self.embeddings.referent.validate(dim)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    QuestionAnswering,
    Remembrance,
    Removal,
}

/// How explicitly a question states its intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Full,
    Partial,
    Zero,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Full => "full",
            Granularity::Partial => "partial",
            Granularity::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryClassification {
    pub query_type: QueryType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

impl QueryClassification {
    pub fn question(granularity: Granularity) -> Self {
        Self {
            query_type: QueryType::QuestionAnswering,
            granularity: Some(granularity),
        }
    }

    pub fn remembrance() -> Self {
        Self {
            query_type: QueryType::Remembrance,
            granularity: None,
        }
    }

    pub fn removal() -> Self {
        Self {
            query_type: QueryType::Removal,
            granularity: None,
        }
    }

    pub fn is_question(&self) -> bool {
        self.query_type == QueryType::QuestionAnswering
    }
}

impl fmt::Display for QueryClassification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.query_type, self.granularity) {
            (QueryType::QuestionAnswering, Some(g)) => write!(f, "qa/{g}"),
            (QueryType::QuestionAnswering, None) => f.write_str("qa"),
            (QueryType::Remembrance, _) => f.write_str("remembrance"),
            (QueryType::Removal, _) => f.write_str("removal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "day", rename_all = "snake_case")]
pub enum TemporalKind {
    None,
    Weekday(Weekday),
    Recency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalConstraint {
    pub kind: TemporalKind,
    /// Fragment of the transcript that produced the constraint.
    pub raw: String,
}

impl TemporalConstraint {
    pub fn none() -> Self {
        Self {
            kind: TemporalKind::None,
            raw: String::new(),
        }
    }

    pub fn weekday(&self) -> Option<Weekday> {
        match self.kind {
            TemporalKind::Weekday(d) => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedResponse {
    pub answer_text: String,
    pub rationale: String,
    pub confidence: Confidence,
    pub needs_verification: bool,
    pub referenced_memory_ids: Vec<MemoryId>,
    pub mode: QueryClassification,
    pub routing: SourceKind,
}

impl ComposedResponse {
    pub fn check_invariants(&self, threshold: u8) -> Result<()> {
        let words = word_count(&self.answer_text);
        if words > MAX_ANSWER_WORDS {
            return Err(Error::Precondition(format!(
                "answer has {words} words (max {MAX_ANSWER_WORDS})"
            )));
        }
        if self.needs_verification != (self.confidence.get() < threshold) {
            return Err(Error::Precondition(
                "needs_verification disagrees with confidence threshold".into(),
            ));
        }
        if self.rationale.trim().is_empty() {
            return Err(Error::Precondition("empty rationale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationKind {
    StoreMemory,
    RemoveMemory,
    LowConfidenceAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PendingPayload {
    /// Episode waiting to be stored.
    Store { memory: SpatialMemory },
    /// Memory targeted for deletion, with the match score that selected it.
    Remove { memory: SpatialMemory, match_score: f64 },
    /// Drafted episode built around a low-confidence answer.
    Answer {
        memory: SpatialMemory,
        response: ComposedResponse,
    },
}

impl PendingPayload {
    pub fn kind(&self) -> VerificationKind {
        match self {
            PendingPayload::Store { .. } => VerificationKind::StoreMemory,
            PendingPayload::Remove { .. } => VerificationKind::RemoveMemory,
            PendingPayload::Answer { .. } => VerificationKind::LowConfidenceAnswer,
        }
    }

    pub fn memory(&self) -> &SpatialMemory {
        match self {
            PendingPayload::Store { memory }
            | PendingPayload::Remove { memory, .. }
            | PendingPayload::Answer { memory, .. } => memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingVerification {
    pub id: VerificationId,
    pub kind: VerificationKind,
    pub payload: PendingPayload,
    pub summary: String,
    pub created_at: DateTime<Utc>,
}

/// Number of whitespace-separated tokens. Punctuation stays with its token.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Civil weekday of an instant, in UTC.
pub fn weekday_of(timestamp: DateTime<Utc>) -> Weekday {
    timestamp.weekday()
}

/// Percentage decrease from a full utterance to a partial one.
pub fn reduction_percent(full_words: usize, partial_words: usize) -> Result<f64> {
    if full_words == 0 {
        return Err(Error::InvalidArgument(
            "full utterance must have at least one word".into(),
        ));
    }
    Ok(100.0 * (full_words as f64 - partial_words as f64) / full_words as f64)
}

pub fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

/// "Tuesday, 2024-01-02", used in rationales and summaries.
pub fn describe_date(ts: DateTime<Utc>) -> String {
    format!("{}, {}", weekday_name(ts.weekday()), ts.format("%Y-%m-%d"))
}
