//! Request and response bodies shared by the HTTP server, the replay client
//! and the C ABI.

use serde::{Deserialize, Serialize};

use crate::domain::{
    ComposedResponse, MemoryId, QueryClassification, UserId, VerificationId, VerificationKind,
};
use crate::error::Error;

/// What a query produced: an answer, or a decision waiting for the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryOutcome {
    Answered {
        response: ComposedResponse,
        /// Fused candidate order, best first.
        candidate_ids: Vec<MemoryId>,
        /// Set when the answer awaits confirmation before it is remembered.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verification_id: Option<VerificationId>,
        /// Set when the answer was remembered right away.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stored_memory_id: Option<MemoryId>,
    },
    Pending {
        kind: VerificationKind,
        verification_id: VerificationId,
        summary: String,
        mode: QueryClassification,
    },
}

impl QueryOutcome {
    pub fn verification_id(&self) -> Option<&VerificationId> {
        match self {
            QueryOutcome::Answered { verification_id, .. } => verification_id.as_ref(),
            QueryOutcome::Pending { verification_id, .. } => Some(verification_id),
        }
    }

    pub fn response(&self) -> Option<&ComposedResponse> {
        match self {
            QueryOutcome::Answered { response, .. } => Some(response),
            QueryOutcome::Pending { .. } => None,
        }
    }

    pub fn mode(&self) -> QueryClassification {
        match self {
            QueryOutcome::Answered { response, .. } => response.mode,
            QueryOutcome::Pending { mode, .. } => *mode,
        }
    }
}

/// Removal request: free text naming the memory, or an explicit id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetRequest {
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_id: Option<MemoryId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyRequest {
    /// Optional; the owning user is looked up when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<UserId>,
    pub verification_id: VerificationId,
    pub accept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub user_id: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retriable: bool,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            code: e.code().to_owned(),
            message: e.to_string(),
            retriable: e.is_retriable(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub provider_mode: String,
    pub embedding_dim: usize,
}

/// Corpus entry without its embeddings, as listed over the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryView {
    pub id: MemoryId,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub space_label: String,
    pub scene_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent: Option<String>,
    pub query_text: String,
    pub response_text: String,
    pub source_kind: crate::domain::SourceKind,
    pub confidence: crate::domain::Confidence,
}

impl From<&crate::domain::SpatialMemory> for MemoryView {
    fn from(m: &crate::domain::SpatialMemory) -> Self {
        Self {
            id: m.id.clone(),
            created_at: m.created_at,
            space_label: m.sketch.space_label.clone(),
            scene_description: m.sketch.scene_description.clone(),
            referent: m.sketch.referent.clone(),
            query_text: m.query_text.clone(),
            response_text: m.response_text.clone(),
            source_kind: m.source_kind,
            confidence: m.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub verification_id: VerificationId,
    pub kind: VerificationKind,
    pub summary: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub memory_id: MemoryId,
}

impl From<&crate::domain::PendingVerification> for PendingView {
    fn from(p: &crate::domain::PendingVerification) -> Self {
        Self {
            verification_id: p.id.clone(),
            kind: p.kind,
            summary: p.summary.clone(),
            created_at: p.created_at,
            memory_id: p.payload.memory().id.clone(),
        }
    }
}
