//! Scenario files: scripted steps with per-step expectations.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use super::{parse_records, read_text};
use crate::domain::{GeoPoint, Granularity, QueryType, SourceKind, UserId, VerificationKind};
use crate::error::{Error, Result};

pub const SCENARIO_FORMAT: &str = "spatial-recall/scenario";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub name: String,
    pub user_id: UserId,
    /// Persona seeded before the first step, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Query,
    Remember,
    Forget,
    Verify,
}

/// Absent, explicitly null, or a value.
fn nullable<'de, D, T>(d: D) -> std::result::Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expect {
    pub query_type: Option<QueryType>,
    pub granularity: Option<Granularity>,
    /// Expected first referenced memory. `null` asserts there is none. A
    /// value of `@step` names the memory stored by that step.
    #[serde(deserialize_with = "nullable", skip_serializing_if = "Option::is_none")]
    pub top1: Option<Option<String>>,
    pub routing: Option<SourceKind>,
    pub needs_verification: Option<bool>,
    pub pending: Option<VerificationKind>,
    pub answer_contains: Vec<String>,
    pub rationale_contains: Vec<String>,
    pub summary_contains: Vec<String>,
    /// Whether the step left a new memory in the corpus.
    pub stored: Option<bool>,
    /// Corpus size after the step.
    pub corpus_size: Option<usize>,
    /// Error code the step must fail with.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub record: String,
    pub id: String,
    /// Use-case tag used for grouping in reports.
    #[serde(default)]
    pub case: Option<String>,
    pub action: Action,
    #[serde(default)]
    pub at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub transcript: Option<String>,
    #[serde(default)]
    pub scene: Option<String>,
    /// Image file relative to the scenario.
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub space_label: Option<String>,
    #[serde(default)]
    pub gps: Option<GeoPoint>,
    /// Forget target: a memory id or `@step`.
    #[serde(default)]
    pub memory_id: Option<String>,
    /// Verify target: `@step`, or a literal verification id.
    #[serde(default)]
    pub verification: Option<String>,
    #[serde(default)]
    pub accept: Option<bool>,
    #[serde(default)]
    pub replacement_answer: Option<String>,
    /// The full-length utterance this step abbreviates.
    #[serde(default)]
    pub full_counterpart: Option<String>,
    #[serde(default)]
    pub expect: Expect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub header: ScenarioHeader,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn persona_path(&self) -> Option<PathBuf> {
        self.header.persona.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn image_bytes(&self, step: &Step) -> Result<Option<Vec<u8>>> {
        step.image
            .as_ref()
            .map(|p| {
                let path = self.base_dir.join(p);
                std::fs::read(&path).map_err(|e| Error::io(&path, e))
            })
            .transpose()
    }
}

pub fn parse_scenario(text: &str, source: &str, base_dir: &Path) -> Result<Scenario> {
    let (header, records): (ScenarioHeader, Vec<(usize, Step)>) =
        parse_records(text, source, SCENARIO_FORMAT)?;
    header.user_id.validate()?;
    let mut steps: Vec<Step> = Vec::with_capacity(records.len());
    for (line, s) in records {
        let bad = |reason: String| Error::Corrupt {
            path: source.into(),
            line,
            reason,
        };
        if s.record != "step" {
            return Err(bad(format!("unknown record kind {:?}", s.record)));
        }
        if steps.iter().any(|p| p.id == s.id) {
            return Err(bad(format!("duplicate step id {:?}", s.id)));
        }
        for r in [&s.memory_id, &s.verification].into_iter().flatten() {
            if let Some(target) = r.strip_prefix('@') {
                if !steps.iter().any(|p| p.id == target) {
                    return Err(bad(format!("{r} does not name an earlier step")));
                }
            }
        }
        match s.action {
            Action::Query | Action::Remember if s.gps.is_none() => {
                return Err(bad("capture steps need gps".into()))
            }
            Action::Verify if s.verification.is_none() || s.accept.is_none() => {
                return Err(bad("verify steps need verification and accept".into()))
            }
            _ => {}
        }
        steps.push(s);
    }
    Ok(Scenario {
        header,
        base_dir: base_dir.to_owned(),
        steps,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&read_text(path)?, &path.display().to_string(), base)
}
