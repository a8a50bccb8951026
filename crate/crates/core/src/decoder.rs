//! Query decoding: type (question / remembrance / removal) and utterance
//! granularity (full / partial / zero).

use crate::domain::{DimensionSketch, Granularity, QueryClassification, QueryType};
use crate::providers::{Fields, ProviderSuite, Task};
use crate::text;

pub const REMEMBRANCE_TRIGGERS: &[&str] = &["remember that", "can you note", "remind me", "note that"];
pub const REMOVAL_TRIGGERS: &[&str] = &["remove the memory", "forget", "delete the memory"];

/// Polite lead-ins skipped before looking for a trigger ("can you remove ...").
const LEAD_INS: &[&str] = &["and", "can", "could", "hey", "ok", "okay", "please", "so", "would", "you"];

const WH_WORDS: &[&str] = &["how", "what", "when", "where", "which", "who", "whom", "whose", "why"];
const AUX_WORDS: &[&str] = &[
    "am", "are", "can", "could", "did", "do", "does", "had", "has", "have", "is", "may",
    "might", "shall", "should", "was", "were", "will", "would",
];

/// First words that hint at a memory-saving intent without a full trigger.
const WEAK_MEMORY_CUES: &[&str] = &["keep", "memorize", "note", "record", "remember", "remind", "save"];

/// Phrases showing a full question is about the user's own memories.
const MEMORY_MARKERS: &[&str] = &[
    "my", "i said", "i say", "i asked", "i ask", "i told", "i noted", "i saved", "i mentioned",
];

pub const DEFAULT_FULL_MIN_WORDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Minimum word count for an interrogative utterance to count as full.
    pub full_min_words: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            full_min_words: DEFAULT_FULL_MIN_WORDS,
        }
    }
}

fn starts_with_phrase(tokens: &[String], phrase: &str) -> bool {
    let words: Vec<&str> = phrase.split(' ').collect();
    tokens.len() >= words.len() && tokens.iter().zip(&words).all(|(t, w)| t == w)
}

fn skip_lead_ins(tokens: &[String]) -> &[String] {
    let n = tokens
        .iter()
        .take_while(|t| LEAD_INS.contains(&t.as_str()))
        .count();
    &tokens[n..]
}

/// The trigger phrase `transcript` opens with, if any, among `triggers`.
fn leading_trigger<'a>(tokens: &[String], triggers: &[&'a str]) -> Option<&'a str> {
    let stripped = skip_lead_ins(tokens);
    triggers
        .iter()
        .copied()
        .find(|t| starts_with_phrase(tokens, t) || starts_with_phrase(stripped, t))
}

/// Transcript with any leading trigger and lead-ins removed, original casing kept.
pub fn strip_trigger(transcript: &str) -> String {
    let toks = text::tokens(transcript);
    let lead = toks.len() - skip_lead_ins(&toks).len();
    let trigger = leading_trigger(&toks, REMOVAL_TRIGGERS)
        .or_else(|| leading_trigger(&toks, REMEMBRANCE_TRIGGERS));
    let mut drop = match trigger {
        Some(t) if starts_with_phrase(&toks, t) => t.split(' ').count(),
        Some(t) => lead + t.split(' ').count(),
        None => 0,
    };
    // Walk the original text word by word so punctuation and casing survive.
    let mut rest = transcript.trim_start();
    while drop > 0 {
        let Some(pos) = rest.find(|c: char| c.is_alphanumeric()) else {
            break;
        };
        rest = &rest[pos..];
        let end = rest
            .find(|c: char| !c.is_alphanumeric())
            .unwrap_or(rest.len());
        rest = &rest[end..];
        drop -= 1;
    }
    rest.trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim()
        .to_owned()
}

fn is_interrogative(tokens: &[String]) -> bool {
    tokens.first().is_some_and(|first| {
        WH_WORDS.contains(&first.as_str()) || AUX_WORDS.contains(&first.as_str())
    })
}

/// Granularity with the default full-utterance threshold.
pub fn granularity_of(transcript: Option<&str>) -> Granularity {
    granularity_with(transcript, &DecoderConfig::default())
}

pub fn granularity_with(transcript: Option<&str>, config: &DecoderConfig) -> Granularity {
    let Some(t) = transcript.map(str::trim).filter(|t| !t.is_empty()) else {
        return Granularity::Zero;
    };
    let toks = text::tokens(t);
    if is_interrogative(skip_lead_ins(&toks)) || is_interrogative(&toks) {
        if crate::domain::word_count(t) >= config.full_min_words {
            return Granularity::Full;
        }
    }
    Granularity::Partial
}

/// Rule-only classification. The boolean is true when the rule could not
/// decide between question and remembrance.
fn rule_classify(transcript: &str) -> (QueryType, bool) {
    let toks = text::tokens(transcript);
    if leading_trigger(&toks, REMOVAL_TRIGGERS).is_some() {
        return (QueryType::Removal, false);
    }
    if leading_trigger(&toks, REMEMBRANCE_TRIGGERS).is_some() {
        return (QueryType::Remembrance, false);
    }
    let tied = skip_lead_ins(&toks)
        .first()
        .is_some_and(|t| WEAK_MEMORY_CUES.contains(&t.as_str()));
    (QueryType::QuestionAnswering, tied)
}

/// What the offline language model answers for the classify task.
pub(crate) fn stub_classify(transcript: &str) -> &'static str {
    match rule_classify(transcript) {
        (QueryType::Removal, _) => "removal",
        (QueryType::Remembrance, _) => "remembrance",
        (QueryType::QuestionAnswering, _) => {
            let toks = text::tokens(transcript);
            if transcript.trim_end().ends_with('?') || is_interrogative(skip_lead_ins(&toks)) {
                "question_answering"
            } else if skip_lead_ins(&toks)
                .first()
                .is_some_and(|t| WEAK_MEMORY_CUES.contains(&t.as_str()))
            {
                "remembrance"
            } else {
                "question_answering"
            }
        }
    }
}

pub fn classify(
    transcript: Option<&str>,
    sketch: &DimensionSketch,
    providers: &ProviderSuite,
) -> QueryClassification {
    classify_with(transcript, sketch, providers, &DecoderConfig::default())
}

pub fn classify_with(
    transcript: Option<&str>,
    sketch: &DimensionSketch,
    providers: &ProviderSuite,
    config: &DecoderConfig,
) -> QueryClassification {
    let Some(t) = transcript.map(str::trim).filter(|t| !t.is_empty()) else {
        return QueryClassification::question(Granularity::Zero);
    };
    let (mut kind, tied) = rule_classify(t);
    if tied {
        let inputs = Fields::new()
            .with("transcript", t)
            .with("scene", sketch.scene_description.clone());
        // Only the question/remembrance ambiguity may be refined; anything else
        // the model says is ignored.
        if let Ok(out) = providers.complete(Task::Classify, &inputs) {
            if out.get("query_type") == Some("remembrance") {
                kind = QueryType::Remembrance;
            }
        }
    }
    match kind {
        QueryType::QuestionAnswering => {
            QueryClassification::question(granularity_with(Some(t), config))
        }
        QueryType::Remembrance => QueryClassification::remembrance(),
        QueryType::Removal => QueryClassification::removal(),
    }
}

/// Whether a full question refers to the user's own memories ("my", "did I say").
pub fn has_memory_marker(transcript: Option<&str>) -> bool {
    let Some(t) = transcript else { return false };
    let toks = text::tokens(t);
    MEMORY_MARKERS.iter().any(|m| {
        let words: Vec<&str> = m.split(' ').collect();
        toks.windows(words.len())
            .any(|w| w.iter().zip(&words).all(|(a, b)| a == b))
    })
}
