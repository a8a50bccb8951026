//! Lightweight lexical helpers: tokenization, word lists and noun-phrase runs.

use std::collections::BTreeSet;

/// Function words ignored by similarity and noun-phrase extraction.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "anything", "are",
    "as", "at", "be", "been", "before", "being", "but", "by", "can", "could", "did", "do",
    "does", "doing", "done", "for", "from", "had", "has", "have", "he", "her", "here", "hers",
    "hey", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "let", "me",
    "might", "mine", "more", "most", "much", "must", "my", "next", "no", "not", "now", "of",
    "off", "ok", "okay", "on", "onto", "or", "our", "out", "over", "please", "shall", "she",
    "should", "so", "some", "something", "still", "than", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "to", "under", "up", "us", "very", "was",
    "we", "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "will",
    "with", "would", "yes", "you", "your",
];

/// Common verbs that never head a referent.
const VERBS: &[&str] = &[
    "arrive", "arrives", "arriving", "ask", "asked", "bring", "buy", "buying", "bought", "call",
    "check", "come", "connect", "connected", "connects", "delete", "find", "forget", "get",
    "give", "go", "going", "got", "keep", "know", "like", "look", "looking", "make", "need",
    "needs", "note", "noted", "pick", "put", "remember", "remind", "remove", "save", "saved",
    "say", "said", "see", "take", "tell", "think", "told", "use", "want", "water", "watered",
    "watering",
];

/// Words naming a property of an object rather than the object itself.
pub const ATTRIBUTE_WORDS: &[&str] = &[
    "calorie", "calories", "carbs", "code", "color", "content", "cost", "fat", "hours",
    "ingredients", "nutrition", "password", "price", "prices", "protein", "rating", "review",
    "reviews", "schedule", "size", "sodium", "sugar", "temperature", "time", "times",
];

const TEMPORAL_WORDS: &[&str] = &[
    "daily", "evening", "last", "morning", "recently", "today", "tomorrow", "tonight", "week",
    "weekly", "yesterday", "monday", "mondays", "tuesday", "tuesdays", "wednesday",
    "wednesdays", "thursday", "thursdays", "friday", "fridays", "saturday", "saturdays",
    "sunday", "sundays",
];

const ORDINALS: &[&str] = &["first", "second", "third", "fourth", "fifth", "left", "right"];

/// Phrases marking the object in focus inside a scene caption.
const FOCUS_MARKERS: &[&[&str]] = &[
    &["in", "the", "center"],
    &["in", "center"],
    &["in", "focus"],
    &["in", "hand"],
    &["highlighted"],
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Topic words that mark an answer as time-sensitive (transit, weather, prices, hours).
pub const LIVE_TOPIC_WORDS: &[&str] = &[
    "arrival", "arrive", "arrives", "bus", "buses", "closing", "forecast", "hours", "metro",
    "open", "price", "prices", "rain", "schedule", "stock", "subway", "temperature", "traffic",
    "train", "transit", "weather",
];

/// Configurable word lists used by referent extraction and source routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    attributes: BTreeSet<String>,
    live_topics: BTreeSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            attributes: ATTRIBUTE_WORDS.iter().map(|s| s.to_string()).collect(),
            live_topics: LIVE_TOPIC_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Lexicon {
    pub fn with_extra(attributes: &[String], live_topics: &[String]) -> Self {
        let mut lex = Self::default();
        lex.attributes.extend(attributes.iter().map(|s| s.to_lowercase()));
        lex.live_topics.extend(live_topics.iter().map(|s| s.to_lowercase()));
        lex
    }

    pub fn is_attribute(&self, token: &str) -> bool {
        self.attributes.contains(token)
    }

    /// First attribute word appearing in `text`, lowercased.
    pub fn first_attribute(&self, text: &str) -> Option<String> {
        tokens(text).into_iter().find(|t| self.is_attribute(t))
    }

    pub fn mentions_live_topic(&self, text: &str) -> bool {
        tokens(text).iter().any(|t| self.live_topics.contains(t))
    }
}

/// Lowercased alphanumeric tokens, in order.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Content tokens minus verbs, temporal words and ordinals: what a text is
/// about rather than what is being done or when.
pub fn topic_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| is_content_word(t)).collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

/// Jaccard overlap of the content-token sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Word pieces of `text` with original casing; `None` marks punctuation that
/// ends a phrase.
fn pieces(text: &str) -> Vec<Option<&str>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push(Some(&text[s..i]));
        }
        if !c.is_whitespace() && c != '\'' && c != '-' {
            out.push(None);
        }
    }
    if let Some(s) = start {
        out.push(Some(&text[s..]));
    }
    out
}

fn is_content_word(word: &str) -> bool {
    let lower = word.to_lowercase();
    let l = lower.as_str();
    !(is_stopword(l) || VERBS.contains(&l) || TEMPORAL_WORDS.contains(&l) || ORDINALS.contains(&l))
}

/// Contiguous runs of content words, original case preserved.
pub fn phrase_runs(text: &str) -> Vec<Vec<String>> {
    let mut runs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for piece in pieces(text) {
        match piece {
            Some(w) if is_content_word(w) => current.push(w.to_owned()),
            _ => {
                if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

fn attribute_only(run: &[String], lex: &Lexicon) -> bool {
    run.iter().all(|w| lex.is_attribute(&w.to_lowercase()))
}

/// Longest non-attribute noun phrase in `text`; the first one wins ties.
pub fn longest_object_phrase(text: &str, lex: &Lexicon) -> Option<String> {
    let mut best: Option<Vec<String>> = None;
    for run in phrase_runs(text) {
        if attribute_only(&run, lex) {
            continue;
        }
        if best.as_ref().map_or(true, |b| run.len() > b.len()) {
            best = Some(run);
        }
    }
    best.map(|r| r.join(" "))
}

/// True when the text names only attributes ("sugar?", "price").
pub fn names_only_attributes(text: &str, lex: &Lexicon) -> bool {
    let runs = phrase_runs(text);
    !runs.is_empty() && runs.iter().all(|r| attribute_only(r, lex))
}

/// Head noun phrase of a scene caption: the phrase just before a focus marker
/// ("wasabi soy sauce in center") if there is one, otherwise the first phrase.
pub fn scene_head(scene: &str) -> Option<String> {
    for clause in clauses(scene) {
        let lower: Vec<String> = clause.iter().map(|w| w.to_lowercase()).collect();
        for marker in FOCUS_MARKERS {
            if let Some(pos) = lower.windows(marker.len()).position(|w| w == *marker) {
                if let Some(last) = phrase_runs(&clause[..pos].join(" ")).pop() {
                    return Some(last.join(" "));
                }
            }
        }
    }
    phrase_runs(scene).into_iter().next().map(|r| r.join(" "))
}

/// Words grouped into punctuation-delimited clauses.
fn clauses(text: &str) -> Vec<Vec<&str>> {
    let mut out = vec![Vec::new()];
    for piece in pieces(text) {
        match piece {
            Some(w) => out.last_mut().expect("non-empty").push(w),
            None => out.push(Vec::new()),
        }
    }
    out.retain(|c| !c.is_empty());
    out
}

/// Lowercased tokens joined by single spaces.
pub fn normalized(text: &str) -> String {
    tokens(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_lists_are_sorted_for_binary_search() {
        for list in [STOPWORDS, ATTRIBUTE_WORDS, LIVE_TOPIC_WORDS] {
            let mut sorted = list.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, list);
        }
    }

    #[test]
    fn noun_phrases() {
        let lex = Lexicon::default();
        assert_eq!(
            longest_object_phrase("When does the next M11 bus arrive?", &lex).as_deref(),
            Some("M11 bus")
        );
        assert_eq!(
            longest_object_phrase("What is the sugar content of the wasabi soy sauce?", &lex).as_deref(),
            Some("wasabi soy sauce")
        );
        assert_eq!(longest_object_phrase("sugar?", &lex), None);
        assert!(names_only_attributes("sugar?", &lex));
        assert!(!names_only_attributes("M11 bus?", &lex));
    }

    #[test]
    fn scene_heads() {
        assert_eq!(
            scene_head("a potted plant on a desk").as_deref(),
            Some("potted plant")
        );
        assert_eq!(
            scene_head("shelf of sauces, wasabi soy sauce in center").as_deref(),
            Some("wasabi soy sauce")
        );
        assert_eq!(
            scene_head("a bus stop sign on a street").as_deref(),
            Some("bus stop sign")
        );
        assert_eq!(scene_head("this, that"), None);
    }

    #[test]
    fn jaccard_basics() {
        let a = token_set("the plant on the desk");
        let b = token_set("water the plant");
        assert_eq!(jaccard(&a, &b), 1.0 / 3.0);
        assert_eq!(jaccard(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }
}
