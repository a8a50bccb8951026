//! Operator tooling: persona seeding, scenario replay and metrics reports.
//!
//! Persona and scenario files use the same line-record layout as the corpus:
//! a header line tagged `"record":"header"`, then one JSON record per line.

pub mod client;
pub mod persona;
pub mod replay;
pub mod report;
pub mod scenario;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
}

/// Parses a header-led JSONL document. Blank lines are skipped; the first
/// bad record aborts the whole parse with its 1-based line number.
fn parse_records<H, R>(text: &str, source: &str, format: &str) -> Result<(H, Vec<(usize, R)>)>
where
    H: DeserializeOwned,
    R: DeserializeOwned,
{
    let corrupt = |line: usize, reason: String| Error::Corrupt {
        path: source.into(),
        line,
        reason,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| corrupt(1, "missing header line".into()))?;
    let value: serde_json::Value =
        serde_json::from_str(htext).map_err(|e| corrupt(hline, e.to_string()))?;
    if value.get("record").and_then(|r| r.as_str()) != Some("header") {
        return Err(corrupt(hline, "first record must be the header".into()));
    }
    let fh: FileHeader =
        serde_json::from_value(value.clone()).map_err(|e| corrupt(hline, e.to_string()))?;
    if fh.format != format {
        return Err(corrupt(hline, format!("format {:?}, expected {format:?}", fh.format)));
    }
    if fh.version != 1 {
        return Err(Error::Migration {
            path: source.into(),
            found: fh.version,
            expected: 1,
        });
    }
    let header: H = serde_json::from_value(value).map_err(|e| corrupt(hline, e.to_string()))?;
    let mut records = Vec::new();
    for (n, l) in lines {
        let r: R = serde_json::from_str(l).map_err(|e| corrupt(n, e.to_string()))?;
        records.push((n, r));
    }
    Ok((header, records))
}

fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Seeds the scenario's persona (if any) into a fresh engine under
/// `data_dir`, then replays every step in process with a manual clock.
pub fn replay_in_process(
    scenario: &scenario::Scenario,
    config: crate::engine::EngineConfig,
    providers: crate::providers::ProviderSuite,
) -> Result<replay::ReplayLog> {
    use std::sync::Arc;

    let start = scenario
        .steps
        .iter()
        .find_map(|s| s.at)
        .unwrap_or(chrono::DateTime::UNIX_EPOCH);
    let clock = Arc::new(crate::engine::ManualClock::new(start));
    let lexicon = config.lexicon.clone();
    let engine = Arc::new(crate::engine::Engine::new(config, providers, clock.clone())?);
    if let Some(path) = scenario.persona_path() {
        let p = persona::load_persona(&path, &lexicon)?;
        if p.user_id != scenario.header.user_id {
            return Err(Error::InvalidArgument(format!(
                "persona belongs to {}, scenario runs as {}",
                p.user_id, scenario.header.user_id
            )));
        }
        engine.seed(&p.user_id, p.episodes)?;
    }
    let client = client::InProcess { engine, clock };
    replay::replay(scenario, &client)
}
