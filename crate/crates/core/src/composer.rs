//! Answer composition: grounding in the routed source, intent revision,
//! brevity, validation and rationale.

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::domain::{
    describe_date, weekday_name, weekday_of, word_count, ComposedResponse, Confidence,
    DimensionSketch, QueryClassification, SourceKind, SpatialMemory, DEFAULT_CONFIDENCE_THRESHOLD,
    MAX_ANSWER_WORDS,
};
use crate::error::{Error, Result};
use crate::providers::{parse_confidence, Fields, ProviderSuite, Task};
use crate::retriever::{self, CandidateSet, Dimension, LiveRefresh};
use crate::text::{self, Lexicon};

const PENALTY_NO_SUPPORT: i64 = 7;
const PENALTY_WEEKDAY: i64 = 2;
const PENALTY_REFERENT: i64 = 2;

pub const FRESH_RATIONALE: &str = "No prior memory matched; answered from general knowledge.";

#[derive(Debug, Clone, PartialEq)]
pub struct ComposerConfig {
    pub confidence_threshold: u8,
    pub lexicon: Lexicon,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            lexicon: Lexicon::default(),
        }
    }
}

/// Cuts `text` to at most 30 words.
pub fn enforce_brevity(text: &str) -> String {
    enforce_brevity_with(text, MAX_ANSWER_WORDS)
}

/// Keeps whole sentences when one ends within the limit; otherwise cuts at
/// the limit and marks the cut with an ellipsis.
pub fn enforce_brevity_with(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_words {
        return text.trim().to_owned();
    }
    if max_words == 0 {
        return String::new();
    }
    let ends_sentence = |w: &&str| {
        let w = w.trim_end_matches(['"', '\'', ')', ']']);
        (w.ends_with('.') || w.ends_with('!') || w.ends_with('?')) && !w.ends_with("...")
    };
    if let Some(last) = words[..max_words].iter().rposition(ends_sentence) {
        return words[..=last].join(" ");
    }
    let mut cut = words[..max_words].join(" ");
    cut.push('…');
    cut
}

/// Inputs to the confidence rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSignals {
    pub answer: String,
    pub candidate_count: usize,
    pub referent: Option<String>,
    pub required_weekday: Option<Weekday>,
    pub top_weekday: Option<Weekday>,
}

impl ValidationSignals {
    pub fn to_fields(&self) -> Fields {
        Fields::new()
            .with("answer", self.answer.clone())
            .with("candidate_count", self.candidate_count.to_string())
            .with_opt("referent", self.referent.clone())
            .with_opt("required_weekday", self.required_weekday.map(weekday_name))
            .with_opt("top_weekday", self.top_weekday.map(weekday_name))
    }
}

/// `10` minus penalties, floored at 1.
pub fn rule_confidence(s: &ValidationSignals) -> Confidence {
    let mut score: i64 = 10;
    if s.candidate_count == 0 {
        score -= PENALTY_NO_SUPPORT;
    }
    if let Some(required) = s.required_weekday {
        if s.top_weekday != Some(required) {
            score -= PENALTY_WEEKDAY;
        }
    }
    if let Some(r) = s.referent.as_deref().filter(|r| !r.trim().is_empty()) {
        let wanted = text::token_set(r);
        let said = text::token_set(&s.answer);
        if !wanted.is_empty() && wanted.is_disjoint(&said) {
            score -= PENALTY_REFERENT;
        }
    }
    Confidence::clamped(score)
}

fn parse_weekday(field: Option<&str>) -> Result<Option<Weekday>> {
    match field.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => s
            .parse::<Weekday>()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("unknown weekday {s:?}"))),
    }
}

pub(crate) fn rule_confidence_from_fields(inputs: &Fields) -> Result<Confidence> {
    let candidate_count = inputs
        .require("candidate_count")?
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::InvalidArgument("candidate_count must be an integer".into()))?;
    Ok(rule_confidence(&ValidationSignals {
        answer: inputs.require("answer")?.to_owned(),
        candidate_count,
        referent: inputs.get("referent").map(str::to_owned),
        required_weekday: parse_weekday(inputs.get("required_weekday"))?,
        top_weekday: parse_weekday(inputs.get("top_weekday"))?,
    }))
}

/// Scores an answer through the language model, falling back to the rule
/// when the model is down or answers out of schema.
pub fn validate_signals(signals: &ValidationSignals, providers: &ProviderSuite) -> Result<Confidence> {
    if signals.answer.trim().is_empty() {
        return Err(Error::InvalidArgument("cannot validate an empty answer".into()));
    }
    match providers.complete(Task::Validate, &signals.to_fields()) {
        Ok(out) => Ok(Confidence::new(parse_confidence(out.require("confidence")?)?)?),
        Err(e) => {
            tracing::debug!(error = %e, "validate task failed, using rule score");
            Ok(rule_confidence(signals))
        }
    }
}

/// Confidence of `answer` given the candidates it was drawn from.
pub fn validate(
    answer: &str,
    candidates: &CandidateSet,
    sketch: &DimensionSketch,
    providers: &ProviderSuite,
) -> Result<Confidence> {
    validate_signals(&signals_for(answer, candidates, sketch), providers)
}

fn signals_for(answer: &str, candidates: &CandidateSet, sketch: &DimensionSketch) -> ValidationSignals {
    let supported = candidates.routing != SourceKind::Fresh;
    ValidationSignals {
        answer: answer.to_owned(),
        candidate_count: if supported { candidates.candidates.len() } else { 0 },
        referent: sketch.referent_text().map(str::to_owned),
        required_weekday: candidates.temporal.weekday(),
        top_weekday: candidates
            .top()
            .filter(|_| supported)
            .map(|c| weekday_of(c.created_at)),
    }
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.to_lowercase().find(&needle.to_lowercase())
}

/// Template rule behind intent revision: swap the prior referent for the
/// current one, keeping the attribute the user asked about.
pub(crate) fn revise_template(
    prior_query: &str,
    prior_referent: &str,
    referent: &str,
    lexicon: &Lexicon,
) -> Result<String> {
    let (prior_referent, referent) = (prior_referent.trim(), referent.trim());
    if find_ci(prior_query, referent).is_some() {
        return Ok(prior_query.to_owned());
    }
    if lexicon.first_attribute(prior_query).is_none() {
        return Err(Error::RevisionUnavailable(format!(
            "no attribute in {prior_query:?}"
        )));
    }
    let Some(start) = find_ci(prior_query, prior_referent) else {
        return Err(Error::RevisionUnavailable(format!(
            "{prior_query:?} does not mention {prior_referent:?}"
        )));
    };
    // Lowercasing can shift byte offsets for non-ASCII text; bail out then.
    if prior_query.to_lowercase().len() != prior_query.len() {
        return Err(Error::RevisionUnavailable("non-ASCII query".into()));
    }
    let end = start + prior_referent.len();
    Ok(format!("{}{}{}", &prior_query[..start], referent, &prior_query[end..]))
}

/// Rewrites the prior memory's question around the current referent.
pub fn revise_intent(
    prior: &SpatialMemory,
    sketch: &DimensionSketch,
    providers: &ProviderSuite,
    lexicon: &Lexicon,
) -> Result<String> {
    let (Some(prior_ref), Some(current)) = (prior.sketch.referent_text(), sketch.referent_text()) else {
        return Err(Error::RevisionUnavailable("both referents are required".into()));
    };
    let rule = revise_template(&prior.query_text, prior_ref, current, lexicon);
    let inputs = Fields::new()
        .with("prior_query", prior.query_text.clone())
        .with("prior_referent", prior_ref)
        .with("referent", current);
    match providers.complete(Task::ReviseIntent, &inputs) {
        Ok(out) if rule.is_ok() => Ok(out.require("query")?.to_owned()),
        Ok(_) | Err(_) => rule,
    }
}

/// Two referents name the same object when one's content words contain the other's.
pub fn same_object(a: &str, b: &str) -> bool {
    let (x, y) = (text::token_set(a), text::token_set(b));
    x.is_subset(&y) || y.is_subset(&x)
}

/// Composer output plus the bits the orchestrator needs for storage decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub response: ComposedResponse,
    pub revised_query: Option<String>,
    pub live: Option<LiveRefresh>,
}

fn join_words(parts: &[&str]) -> String {
    match parts {
        [] => String::new(),
        [one] => (*one).to_owned(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn memory_rationale(top: &SpatialMemory, dims: &[Dimension]) -> String {
    let described: Vec<&str> = dims.iter().map(|d| d.describe()).collect();
    format!(
        "Matched {} from your memory of {} on {}.",
        join_words(&described),
        top.sketch.space_label,
        describe_date(top.created_at)
    )
}

fn fresh_query(sketch: &DimensionSketch) -> String {
    match (sketch.transcript_text(), sketch.referent_text()) {
        (Some(t), _) => t.to_owned(),
        (None, Some(r)) => format!("What is useful to know about the {r}?"),
        (None, None) => "What is useful to know here?".to_owned(),
    }
}

fn scene_or_label(sketch: &DimensionSketch) -> String {
    crate::domain::non_blank(Some(&sketch.scene_description))
        .unwrap_or(&sketch.space_label)
        .to_owned()
}

fn answer_from_model(
    query: &str,
    sketch: &DimensionSketch,
    context: Option<&str>,
    providers: &ProviderSuite,
) -> Result<String> {
    let inputs = Fields::new()
        .with("query", query)
        .with("scene", scene_or_label(sketch))
        .with_opt("referent", sketch.referent_text())
        .with_opt("context", context);
    Ok(providers
        .complete(Task::ComposeAnswer, &inputs)?
        .require("answer")?
        .to_owned())
}

pub fn compose(
    sketch: &DimensionSketch,
    candidates: &CandidateSet,
    corpus: &[SpatialMemory],
    classification: &QueryClassification,
    providers: &ProviderSuite,
    config: &ComposerConfig,
) -> Result<Composition> {
    if !classification.is_question() {
        return Err(Error::Precondition(format!(
            "compose needs a question, got {classification}"
        )));
    }
    let top = match (candidates.routing, candidates.top()) {
        (SourceKind::Fresh, _) | (_, None) => None,
        (_, Some(c)) => Some(
            corpus
                .iter()
                .find(|m| m.id == c.memory_id)
                .ok_or_else(|| Error::Precondition(format!("candidate {} not in corpus", c.memory_id)))?,
        ),
    };

    let mut revised_query = None;
    let mut live = None;
    let (draft, rationale, referenced) = match top {
        None => {
            let answer = answer_from_model(&fresh_query(sketch), sketch, None, providers).map_err(|e| {
                Error::Unanswerable {
                    rationale: format!(
                        "No prior memory matched and general knowledge was unavailable ({e})."
                    ),
                }
            })?;
            (answer, FRESH_RATIONALE.to_owned(), Vec::new())
        }
        Some(top) => {
            let dims: Vec<Dimension> = candidates.candidates[0].ranks.keys().copied().collect();
            let mut rationale = memory_rationale(top, &dims);
            let shifted = match (top.sketch.referent_text(), sketch.referent_text()) {
                (Some(prior), Some(now)) => !same_object(prior, now),
                _ => false,
            };
            let revised = if shifted {
                revise_intent(top, sketch, providers, &config.lexicon)
                    .ok()
                    .filter(|q| q != &top.query_text)
            } else {
                None
            };
            let answer = if let Some(q) = revised {
                match answer_from_model(&q, sketch, Some(&top.response_text), providers) {
                    Ok(a) => {
                        rationale.push_str(&format!(
                            " Revised your earlier question for what you are looking at: \"{q}\""
                        ));
                        revised_query = Some(q);
                        a
                    }
                    Err(e) => {
                        tracing::debug!(error = %e, "revised answer failed, using stored answer");
                        top.response_text.clone()
                    }
                }
            } else if candidates.routing == SourceKind::Live {
                let r = retriever::refresh_live(top, providers)?;
                match &r.stale_note {
                    Some(note) => {
                        rationale.push(' ');
                        rationale.push_str(note);
                    }
                    None => rationale.push_str(" Refreshed from live search."),
                }
                let text = r.response_text.clone();
                live = Some(r);
                text
            } else {
                top.response_text.clone()
            };
            (answer, rationale, vec![top.id.clone()])
        }
    };

    let mut answer_text = enforce_brevity(&draft);
    if answer_text.trim().is_empty() {
        answer_text = "No answer available.".to_owned();
    }
    let confidence = validate(&answer_text, candidates, sketch, providers)?;
    let response = ComposedResponse {
        answer_text,
        rationale,
        confidence,
        needs_verification: confidence.get() < config.confidence_threshold,
        referenced_memory_ids: referenced,
        mode: *classification,
        routing: candidates.routing,
    };
    debug_assert!(word_count(&response.answer_text) <= MAX_ANSWER_WORDS);
    Ok(Composition {
        response,
        revised_query,
        live,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Granularity;
    use crate::retriever::{retrieve, RetrieverConfig};
    use crate::store::test_support::memory;
    use proptest::prelude::*;

    #[test]
    fn brevity_examples() {
        let ten = "one two three four five six seven eight nine ten";
        assert_eq!(enforce_brevity(ten), ten);
        let many = vec!["word"; 31].join(" ");
        let out = enforce_brevity(&many);
        assert_eq!(word_count(&out), 30);
        assert!(out.ends_with('…'));
        let s1 = format!("{}.", vec!["alpha"; 20].join(" "));
        let s2 = format!("{}.", vec!["beta"; 20].join(" "));
        assert_eq!(enforce_brevity(&format!("{s1} {s2}")), s1);
    }

    #[test]
    fn validate_rule_examples() {
        let grounded = ValidationSignals {
            answer: "Plant watering on Tuesdays.".into(),
            candidate_count: 1,
            referent: Some("plant".into()),
            required_weekday: Some(Weekday::Tue),
            top_weekday: Some(Weekday::Tue),
        };
        assert_eq!(rule_confidence(&grounded).get(), 10);
        let fresh = ValidationSignals {
            answer: "Some general answer.".into(),
            ..Default::default()
        };
        assert_eq!(rule_confidence(&fresh).get(), 3);
        let worst = ValidationSignals {
            answer: "unrelated".into(),
            candidate_count: 0,
            referent: Some("plant".into()),
            required_weekday: Some(Weekday::Tue),
            top_weekday: None,
        };
        assert_eq!(rule_confidence(&worst).get(), 1);
    }

    #[test]
    fn revision_examples() {
        let lex = Lexicon::default();
        assert_eq!(
            revise_template(
                "What is the sugar content of the wasabi soy sauce?",
                "wasabi soy sauce",
                "teriyaki sauce",
                &lex
            )
            .unwrap(),
            "What is the sugar content of the teriyaki sauce?"
        );
        let q = "What is the sugar content of the wasabi soy sauce?";
        assert_eq!(revise_template(q, "wasabi soy sauce", "wasabi soy sauce", &lex).unwrap(), q);
        assert!(matches!(
            revise_template("What is the sugar content?", "wasabi soy sauce", "teriyaki sauce", &lex),
            Err(Error::RevisionUnavailable(_))
        ));
        assert!(matches!(
            revise_template("Where is the wasabi soy sauce?", "wasabi soy sauce", "teriyaki sauce", &lex),
            Err(Error::RevisionUnavailable(_))
        ));
    }

    #[test]
    fn revise_intent_is_idempotent() {
        let p = ProviderSuite::stub();
        let lex = Lexicon::default();
        let prior = memory(
            &p,
            "sugar",
            "What is the sugar content of the wasabi soy sauce?",
            "About 1 g per tablespoon.",
            "shelf of sauces, wasabi soy sauce in center",
            Some("wasabi soy sauce"),
            4,
        );
        let mut sketch = prior.sketch.clone();
        sketch.referent = Some("teriyaki sauce".into());
        let once = revise_intent(&prior, &sketch, &p, &lex).unwrap();
        let mut again = prior.clone();
        again.query_text = once.clone();
        assert_eq!(revise_intent(&again, &sketch, &p, &lex).unwrap(), once);
    }

    fn plant_corpus(p: &ProviderSuite) -> Vec<SpatialMemory> {
        vec![memory(
            p,
            "plant",
            "Remind me to water the plant on Tuesdays",
            "Plant watering on Tuesdays.",
            "a potted plant on a desk",
            Some("plant"),
            2,
        )]
    }

    #[test]
    fn static_plant_answer() {
        let p = ProviderSuite::stub();
        let corpus = plant_corpus(&p);
        let mut sketch = corpus[0].sketch.clone();
        sketch.transcript = Some("plant?".into());
        sketch.timestamp = chrono::TimeZone::with_ymd_and_hms(&chrono::Utc, 2024, 1, 9, 9, 0, 0).unwrap();
        let cls = QueryClassification::question(Granularity::Partial);
        let set = retrieve(&sketch, &cls, &corpus, &RetrieverConfig::default(), &p).unwrap();
        let c = compose(&sketch, &set, &corpus, &cls, &p, &ComposerConfig::default()).unwrap();
        assert_eq!(c.response.answer_text, "Plant watering on Tuesdays.");
        assert!(c.response.rationale.contains("Tuesday"), "{}", c.response.rationale);
        assert!(c.response.rationale.contains("Home"));
        assert_eq!(c.response.confidence.get(), 10);
        assert!(!c.response.needs_verification);
        assert_eq!(c.response.referenced_memory_ids, vec!["plant".into()]);
    }

    #[test]
    fn fresh_answer_needs_verification() {
        let p = ProviderSuite::stub();
        let mut sketch = plant_corpus(&p)[0].sketch.clone();
        sketch.transcript = Some("When does the next M11 bus arrive?".into());
        sketch.referent = Some("M11 bus".into());
        let cls = QueryClassification::question(Granularity::Full);
        let set = retrieve(&sketch, &cls, &[], &RetrieverConfig::default(), &p).unwrap();
        let c = compose(&sketch, &set, &[], &cls, &p, &ComposerConfig::default()).unwrap();
        assert!(c.response.needs_verification);
        assert_eq!(c.response.confidence.get(), 3);
        assert_eq!(c.response.rationale, FRESH_RATIONALE);
        assert!(c.response.referenced_memory_ids.is_empty());
    }

    #[test]
    fn fresh_route_with_model_down_is_unanswerable() {
        let p = ProviderSuite::stub()
            .with_language_model(std::sync::Arc::new(crate::providers::stub::UnavailableLanguageModel));
        let mut sketch = plant_corpus(&ProviderSuite::stub())[0].sketch.clone();
        sketch.transcript = Some("When does the next M11 bus arrive?".into());
        let cls = QueryClassification::question(Granularity::Full);
        let set = retrieve(&sketch, &cls, &[], &RetrieverConfig::default(), &p).unwrap();
        let err = compose(&sketch, &set, &[], &cls, &p, &ComposerConfig::default()).unwrap_err();
        match err {
            Error::Unanswerable { rationale } => assert!(!rationale.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn brevity_never_exceeds_limit(words in prop::collection::vec("[a-z]{1,6}[.?!]?", 0..80)) {
            let out = enforce_brevity(&words.join(" "));
            prop_assert!(word_count(&out) <= MAX_ANSWER_WORDS);
            if words.len() <= MAX_ANSWER_WORDS {
                prop_assert_eq!(out, words.join(" "));
            }
        }

        #[test]
        fn rule_confidence_in_range(n in 0usize..3, refs in "[a-z ]{0,12}", ans in "[a-z ]{1,20}", req in 0u8..8, top in 0u8..8) {
            let day = |d: u8| (d < 7).then(|| Weekday::try_from(d).unwrap());
            let s = ValidationSignals {
                answer: ans,
                candidate_count: n,
                referent: Some(refs),
                required_weekday: day(req),
                top_weekday: day(top),
            };
            let c = rule_confidence(&s).get();
            prop_assert!((1..=10).contains(&c));
        }
    }
}
