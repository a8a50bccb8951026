//! Persona files: pre-seeded episodes for one user.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{parse_records, read_text};
use crate::domain::{Confidence, DimensionSketch, GeoPoint, MemoryId, SourceKind, UserId};
use crate::encoder;
use crate::engine::SeedEpisode;
use crate::error::{Error, Result};
use crate::store::EpisodeDraft;
use crate::text::Lexicon;

pub const PERSONA_FORMAT: &str = "spatial-recall/persona";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaHeader {
    pub user_id: UserId,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaRecord {
    pub record: String,
    pub id: MemoryId,
    pub created_at: DateTime<Utc>,
    pub space_label: String,
    pub gps: GeoPoint,
    pub scene: String,
    /// Derived from the query and scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent: Option<String>,
    pub query: String,
    pub response: String,
    #[serde(default = "static_kind")]
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
}

fn static_kind() -> SourceKind {
    SourceKind::Static
}

#[derive(Debug, Clone, PartialEq)]
pub struct Persona {
    pub user_id: UserId,
    pub name: Option<String>,
    pub episodes: Vec<SeedEpisode>,
}

impl PersonaRecord {
    fn into_episode(self, user: &UserId, lexicon: &Lexicon) -> Result<SeedEpisode> {
        if self.record != "memory" {
            return Err(Error::InvalidArgument(format!("unknown record kind {:?}", self.record)));
        }
        let referent = self
            .referent
            .or_else(|| encoder::extract_referent_with(Some(&self.query), &self.scene, lexicon));
        let sketch = DimensionSketch {
            space_label: self.space_label,
            scene_description: self.scene,
            referent,
            timestamp: self.created_at,
            gps: self.gps,
            intent: None,
            transcript: Some(self.query.clone()),
        };
        sketch.validate()?;
        let confidence = match self.confidence {
            Some(c) => Confidence::new(c)?,
            None => Confidence::MAX,
        };
        Ok(SeedEpisode {
            id: self.id,
            draft: EpisodeDraft {
                user_id: user.clone(),
                sketch,
                query_text: self.query,
                response_text: self.response,
                source_kind: self.source_kind,
                confidence,
            },
        })
    }
}

pub fn parse_persona(text: &str, source: &str, lexicon: &Lexicon) -> Result<Persona> {
    let (header, records): (PersonaHeader, Vec<(usize, PersonaRecord)>) =
        parse_records(text, source, PERSONA_FORMAT)?;
    header.user_id.validate()?;
    let mut episodes = Vec::with_capacity(records.len());
    for (line, r) in records {
        let e = r.into_episode(&header.user_id, lexicon).map_err(|e| Error::Corrupt {
            path: source.into(),
            line,
            reason: e.to_string(),
        })?;
        episodes.push(e);
    }
    Ok(Persona {
        user_id: header.user_id,
        name: header.name,
        episodes,
    })
}

pub fn load_persona(path: &Path, lexicon: &Lexicon) -> Result<Persona> {
    parse_persona(&read_text(path)?, &path.display().to_string(), lexicon)
}
