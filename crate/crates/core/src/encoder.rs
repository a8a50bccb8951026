//! Turns a raw capture into a dimension sketch and pulls out referents and
//! temporal constraints.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::{DateTime, Utc, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decoder;
use crate::domain::{
    non_blank, DimensionSketch, GeoPoint, QueryClassification, QueryType, TemporalConstraint,
    TemporalKind, UserId,
};
use crate::error::{Error, Result};
use crate::providers::ProviderSuite;
use crate::text::{self, Lexicon};

const GEOHASH_PRECISION: usize = 7;

/// One on-demand snapshot from the wearable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCapture {
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_text: Option<String>,
    /// Camera frame, base64 on the wire.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_b64",
        deserialize_with = "de_b64"
    )]
    pub image: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_label: Option<String>,
    pub gps: GeoPoint,
    pub timestamp: DateTime<Utc>,
}

fn ser_b64<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(bytes) => s.serialize_str(&B64.encode(bytes)),
        None => s.serialize_none(),
    }
}

fn de_b64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<u8>>, D::Error> {
    let raw: Option<String> = Option::deserialize(d)?;
    raw.map(|s| B64.decode(s.trim()).map_err(serde::de::Error::custom))
        .transpose()
}

impl RawCapture {
    pub fn transcript_text(&self) -> Option<&str> {
        non_blank(self.transcript.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        self.user_id.validate()?;
        self.gps.validate()?;
        if self.transcript_text().is_none()
            && non_blank(self.scene_text.as_deref()).is_none()
            && self.image.as_ref().map_or(true, Vec::is_empty)
        {
            return Err(Error::MissingContext(
                "a silent request needs a scene description or an image".into(),
            ));
        }
        Ok(())
    }
}

/// Geohash-style cell label, used when nothing textual names the place.
pub fn cell_label(gps: GeoPoint) -> String {
    let hash = geohash::encode(geohash::Coord { x: gps.lon, y: gps.lat }, GEOHASH_PRECISION)
        .unwrap_or_else(|_| format!("{:.4},{:.4}", gps.lat, gps.lon));
    format!("cell:{hash}")
}

pub fn encode(capture: &RawCapture, providers: &ProviderSuite) -> Result<DimensionSketch> {
    encode_with(capture, providers, &Lexicon::default())
}

pub fn encode_with(
    capture: &RawCapture,
    providers: &ProviderSuite,
    lexicon: &Lexicon,
) -> Result<DimensionSketch> {
    capture.validate()?;
    let scene = match (non_blank(capture.scene_text.as_deref()), &capture.image) {
        (Some(s), _) => s.to_owned(),
        (None, Some(img)) if !img.is_empty() => providers.describe_scene(img)?,
        _ => String::new(),
    };
    let transcript = capture.transcript_text().map(str::to_owned);
    let referent = extract_referent_with(transcript.as_deref(), &scene, lexicon);
    let space_label = non_blank(capture.space_label.as_deref())
        .map(str::to_owned)
        .or_else(|| text::scene_head(&scene))
        .unwrap_or_else(|| cell_label(capture.gps));
    let mut sketch = DimensionSketch {
        space_label,
        scene_description: scene,
        referent,
        timestamp: capture.timestamp,
        gps: capture.gps,
        intent: None,
        transcript,
    };
    if let Some(t) = sketch.transcript.as_deref() {
        if decoder::stub_classify(t) == "remembrance" {
            sketch.intent = Some(decoder::strip_trigger(t));
        }
    }
    Ok(sketch)
}

/// Sets or clears the action intent once the final classification is known.
pub fn assign_intent(sketch: &mut DimensionSketch, classification: &QueryClassification) {
    sketch.intent = match (classification.query_type, sketch.transcript.as_deref()) {
        (QueryType::Remembrance, Some(t)) => Some(decoder::strip_trigger(t)).filter(|s| !s.is_empty()),
        _ => None,
    };
}

pub fn extract_referent(transcript: Option<&str>, scene_description: &str) -> Option<String> {
    extract_referent_with(transcript, scene_description, &Lexicon::default())
}

/// Object of focus: the longest noun phrase the user said, or the scene's
/// head noun when they named only an attribute ("sugar?") or nothing at all.
pub fn extract_referent_with(
    transcript: Option<&str>,
    scene_description: &str,
    lexicon: &Lexicon,
) -> Option<String> {
    let from_scene = || text::scene_head(scene_description);
    let Some(t) = non_blank(transcript) else {
        return from_scene();
    };
    let spoken = decoder::strip_trigger(t);
    if text::names_only_attributes(&spoken, lexicon) {
        return from_scene().or_else(|| text::phrase_runs(&spoken).pop().map(|r| r.join(" ")));
    }
    text::longest_object_phrase(&spoken, lexicon).or_else(from_scene)
}

fn weekday_token(token: &str) -> Option<Weekday> {
    let base = token.strip_suffix('s').unwrap_or(token);
    Some(match base {
        "monday" => Weekday::Mon,
        "tuesday" => Weekday::Tue,
        "wednesday" => Weekday::Wed,
        "thursday" => Weekday::Thu,
        "friday" => Weekday::Fri,
        "saturday" => Weekday::Sat,
        "sunday" => Weekday::Sun,
        _ => return None,
    })
}

pub fn extract_temporal(transcript: Option<&str>) -> TemporalConstraint {
    let Some(t) = non_blank(transcript) else {
        return TemporalConstraint::none();
    };
    let toks = text::tokens(t);
    if let Some((tok, day)) = toks
        .iter()
        .find_map(|tok| weekday_token(tok).map(|d| (tok, d)))
    {
        return TemporalConstraint {
            kind: TemporalKind::Weekday(day),
            raw: tok.clone(),
        };
    }
    let recency = toks
        .windows(2)
        .find(|w| w[0] == "last" && w[1] == "time")
        .map(|_| "last time".to_owned())
        .or_else(|| {
            toks.iter()
                .find(|t| *t == "recently" || *t == "yesterday")
                .cloned()
        });
    match recency {
        Some(raw) => TemporalConstraint {
            kind: TemporalKind::Recency,
            raw,
        },
        None => TemporalConstraint::none(),
    }
}
