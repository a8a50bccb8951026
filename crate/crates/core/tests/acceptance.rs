//! Release acceptance checks. Runs without the libtest harness so that every
//! check prints its own PASS/FAIL line; exits non-zero if any fails.

mod support;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatial_recall::composer::{compose, ComposerConfig};
use spatial_recall::domain::word_count;
use spatial_recall::harness::replay::ReplayLog;
use spatial_recall::harness::{persona, replay_in_process, report, scenario};
use spatial_recall::providers::stub::{CountingSearch, StubFixtures, StubWebSearch, UnavailableSearch};
use spatial_recall::providers::{Fields, LanguageModel, ProviderSuite, Task};
use spatial_recall::retriever::{fuse_rrf, haversine_m, retrieve, RetrieverConfig};
use spatial_recall::store::{self, memlog_path, MemoryStore};
use spatial_recall::{
    DimensionSketch, Engine, EngineConfig, Error, ForgetRequest, GeoPoint, Granularity,
    ManualClock, QueryClassification, QueryOutcome, RawCapture, SeedEpisode, SourceKind, UserId,
    VerifyRequest,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest candidate set seen by any check, for the k cap.
static MAX_CANDIDATES: Mutex<usize> = Mutex::new(0);

fn note_candidates(n: usize) {
    let mut m = MAX_CANDIDATES.lock().unwrap();
    *m = (*m).max(n);
}

fn rrf_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(1);
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..=500);
        let keys: Vec<String> = (0..n).map(|i| format!("m{i:03}")).collect();
        // A narrow time range so created_at ties actually happen.
        let created: HashMap<String, DateTime<Utc>> = keys
            .iter()
            .map(|k| (k.clone(), base + Duration::minutes(r.gen_range(0..20))))
            .collect();
        let lists: Vec<Vec<String>> = (0..r.gen_range(1..=5))
            .map(|_| {
                let mut l = keys.clone();
                l.shuffle(&mut r);
                l.truncate(r.gen_range(0..=n));
                l
            })
            .collect();
        let got = fuse_rrf(&lists, support::C, support::K, |k| created[k]);
        note_candidates(got.len());
        let want = support::oracle_fuse(&lists, &created);
        let got: Vec<(String, f64)> = got.into_iter().map(|f| (f.key, f.score)).collect();
        if got != want {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(mismatches == 0, || format!("{mismatches} of 200 corpora differ"))?;
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("200 corpora, 0 mismatches, {secs:.2} s"))
}

fn scenario_suite() -> Outcome {
    let sc = scenario::load_scenario(&support::fixtures().join("scenario_a.jsonl")).map_err(|e| e.to_string())?;
    let p = persona::load_persona(&sc.persona_path().unwrap(), &Default::default()).map_err(|e| e.to_string())?;
    ensure(p.episodes.len() == 45, || format!("persona has {} memories", p.episodes.len()))?;
    let mut places: Vec<String> = p.episodes.iter().map(|e| e.draft.sketch.space_label.clone()).collect();
    places.sort();
    places.dedup();
    ensure(places.len() == 3, || format!("persona spans {places:?}"))?;
    ensure(sc.steps.len() >= 18, || format!("{} steps", sc.steps.len()))?;

    let dir = tempfile::tempdir().unwrap();
    let (log, seen) = support::replay_with_oracle(&sc, dir.path());
    let agreement = support::oracle_agreement(&sc, &log, &seen);
    let bad: Vec<_> = agreement.iter().filter(|(_, f)| !f.is_empty()).collect();
    ensure(bad.is_empty(), || format!("{bad:?}"))?;
    ensure(agreement.len() >= 18, || format!("only {} graded steps", agreement.len()))?;
    ensure(log.mismatch_count() == 0, || {
        let m: Vec<_> = log.steps.iter().filter(|s| !s.mismatches.is_empty()).map(|s| (&s.step, &s.mismatches)).collect();
        format!("{m:?}")
    })?;
    let rep = report::build_report(&log);
    let rows: Vec<String> = rep
        .accuracy
        .iter()
        .map(|a| format!("{} {}/{}", a.granularity, a.correct, a.total))
        .collect();
    ensure(rep.accuracy.iter().all(|a| a.correct == a.total), || rows.join(", "))?;
    Ok(format!(
        "{} steps, {} graded, oracle agrees on all; {}",
        sc.steps.len(),
        agreement.len(),
        rows.join(", ")
    ))
}

const TUESDAY_PHRASES: &[&str] = &["on Tuesdays", "Tuesday", "tuesday?", "every Tuesday", "last tuesday"];

fn sketch_for(transcript: Option<String>, scene: String, gps: GeoPoint, at: DateTime<Utc>) -> DimensionSketch {
    let referent = spatial_recall::encoder::extract_referent(transcript.as_deref(), &scene);
    DimensionSketch {
        space_label: "Somewhere".into(),
        scene_description: scene,
        referent,
        timestamp: at,
        gps,
        intent: None,
        transcript,
    }
}

fn k_cap() -> Outcome {
    // Retrieval over random corpora with unconstrained queries; the weekday
    // and fusion runs feed the same counter.
    let p = ProviderSuite::stub();
    let cfg = RetrieverConfig::default();
    let mut r = rng(3);
    let mut sets = 0;
    for _ in 0..40 {
        let n = r.gen_range(0..=300);
        let corpus = support::random_corpus(&mut r, n, &p);
        for _ in 0..5 {
            let center = *support::CENTERS.choose(&mut r).unwrap();
            let gran = *[Granularity::Partial, Granularity::Zero].choose(&mut r).unwrap();
            let t = (gran == Granularity::Partial).then(|| format!("{}?", support::phrase(&mut r, 1..4)));
            let s = sketch_for(t, support::phrase(&mut r, 1..5), support::near(&mut r, center, 0.003), Utc::now());
            let set = retrieve(&s, &QueryClassification::question(gran), &corpus, &cfg, &p).map_err(|e| e.to_string())?;
            note_candidates(set.candidates.len());
            sets += 1;
        }
    }
    let max = *MAX_CANDIDATES.lock().unwrap();
    ensure(max <= 5, || format!("a candidate set held {max}"))?;
    Ok(format!("{sets} retrievals plus fusion and weekday runs, largest set {max}"))
}

/// Language model that answers with random text of random length and is
/// otherwise down, so validation falls back to the rule.
struct FuzzModel(Mutex<ChaCha8Rng>);

impl LanguageModel for FuzzModel {
    fn complete(&self, task: Task, inputs: &Fields) -> spatial_recall::Result<Fields> {
        if task != Task::ComposeAnswer {
            return Err(Error::Transport("fuzz model only composes".into()));
        }
        let mut r = self.0.lock().unwrap();
        let n = r.gen_range(0..120);
        let mut words: Vec<String> = (0..n)
            .map(|_| {
                let mut w = support::phrase(&mut *r, 1..2);
                match r.gen_range(0..12) {
                    0 => w.push('.'),
                    1 => w.push('?'),
                    2 => w.push_str("..."),
                    3 => w.push_str(".\""),
                    4 => w.push(','),
                    _ => {}
                }
                w
            })
            .collect();
        if r.gen_bool(0.3) {
            if let Some(referent) = inputs.get("referent") {
                words.push(referent.to_owned());
            }
        }
        let sep = if r.gen_bool(0.2) { " \n\t " } else { " " };
        Ok(Fields::new().with("answer", words.join(sep)))
    }
}

/// Runs `cases` random compositions, returning (answer words, confidence,
/// needs_verification) for each.
fn fuzz_compositions(seed: u64, cases: usize) -> Result<Vec<(usize, u8, bool)>, String> {
    let p = ProviderSuite::stub().with_language_model(Arc::new(FuzzModel(Mutex::new(rng(seed ^ 0xff)))));
    let cfg = RetrieverConfig::default();
    let ccfg = ComposerConfig::default();
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(cases);
    let mut corpus = Vec::new();
    for i in 0..cases {
        if i % 50 == 0 {
            let n = r.gen_range(0..60);
            corpus = support::random_corpus(&mut r, n, &p);
            for m in corpus.iter_mut() {
                let n = r.gen_range(1..90);
                m.response_text = format!("{}.", support::phrase(&mut r, n..n + 1));
            }
        }
        let center = *support::CENTERS.choose(&mut r).unwrap();
        let gran = *[Granularity::Full, Granularity::Partial, Granularity::Zero].choose(&mut r).unwrap();
        let t = match gran {
            Granularity::Zero => None,
            _ => {
                let mut t = support::phrase(&mut r, 1..10);
                if r.gen_bool(0.3) {
                    t.push(' ');
                    t.push_str(TUESDAY_PHRASES.choose(&mut r).unwrap());
                }
                Some(t)
            }
        };
        let s = sketch_for(t, support::phrase(&mut r, 1..5), support::near(&mut r, center, 0.003), Utc::now());
        let cls = QueryClassification::question(gran);
        let set = retrieve(&s, &cls, &corpus, &cfg, &p).map_err(|e| e.to_string())?;
        note_candidates(set.candidates.len());
        let c = compose(&s, &set, &corpus, &cls, &p, &ccfg).map_err(|e| e.to_string())?;
        let resp = c.response;
        resp.check_invariants(7).map_err(|e| e.to_string())?;
        out.push((word_count(&resp.answer_text), resp.confidence.get(), resp.needs_verification));
    }
    Ok(out)
}

fn brevity() -> Outcome {
    let runs = fuzz_compositions(4, 1000)?;
    let over: Vec<_> = runs.iter().filter(|(w, _, _)| *w > 30).collect();
    ensure(over.is_empty(), || format!("{} answers over 30 words", over.len()))?;
    let longest = runs.iter().map(|(w, _, _)| *w).max().unwrap_or(0);
    Ok(format!("1000 compositions, longest answer {longest} words"))
}

fn file_bytes(path: &std::path::Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn confidence_gating() -> Outcome {
    let runs = fuzz_compositions(5, 1000)?;
    let wrong = runs.iter().filter(|(_, c, nv)| *nv != (*c < 7)).count();
    ensure(wrong == 0, || format!("{wrong} responses break needs_verification <=> confidence < 7"))?;
    let low = runs.iter().filter(|(_, c, _)| *c < 7).count();
    ensure(low > 0 && low < runs.len(), || format!("{low} of {} low confidence; fuzz too narrow", runs.len()))?;

    // Engine flows: nothing pending may touch the corpus file.
    let dir = tempfile::tempdir().unwrap();
    let start = Utc.with_ymd_and_hms(2024, 1, 15, 9, 0, 0).unwrap();
    let (engine, clock) = support::stub_engine(dir.path(), start);
    let p = persona::load_persona(&support::fixtures().join("persona_a.jsonl"), &engine.config().lexicon).unwrap();
    let user = p.user_id.clone();
    engine.seed(&user, p.episodes).map_err(|e| e.to_string())?;
    let path = memlog_path(dir.path(), &user);
    let mut r = rng(6);
    let (mut pending, mut rejected, mut accepted) = (0, 0, 0);
    for i in 0..120 {
        let at = start + Duration::minutes(i * 7);
        clock.set(at);
        let w = support::phrase(&mut r, 1..3);
        let transcript = match r.gen_range(0..5) {
            0 => format!("Can you tell me where the {w} is around here today?"),
            1 => format!("{w}?"),
            2 => format!("Remember that the {w} is in the cabinet"),
            3 => format!("Forget the note about the {w}"),
            _ => format!("What is the best way to clean a {w} at home?"),
        };
        let center = *support::CENTERS.choose(&mut r).unwrap();
        let capture = RawCapture {
            user_id: user.clone(),
            transcript: Some(transcript),
            scene_text: Some(support::phrase(&mut r, 2..5)),
            image: None,
            space_label: None,
            gps: support::near(&mut r, center, 0.002),
            timestamp: at,
        };
        let before = file_bytes(&path);
        let out = match engine.handle_query(&capture) {
            Ok(o) => o,
            Err(_) => {
                ensure(file_bytes(&path) == before, || "a failed request changed the corpus".into())?;
                continue;
            }
        };
        let vid = match &out {
            QueryOutcome::Answered { response, stored_memory_id: Some(_), .. } => {
                ensure(!response.needs_verification && response.confidence.get() >= 7, || {
                    format!("stored without verification at confidence {}", response.confidence.get())
                })?;
                continue;
            }
            QueryOutcome::Answered { verification_id: None, .. } => {
                ensure(file_bytes(&path) == before, || "an unverified answer changed the corpus".into())?;
                continue;
            }
            QueryOutcome::Answered { verification_id: Some(v), .. } | QueryOutcome::Pending { verification_id: v, .. } => v.clone(),
        };
        pending += 1;
        ensure(file_bytes(&path) == before, || format!("pending {vid} changed the corpus"))?;
        let accept = r.gen_bool(0.3);
        let res = engine
            .verify(&VerifyRequest { user_id: Some(user.clone()), verification_id: vid, accept, replacement_answer: None })
            .map_err(|e| e.to_string())?;
        if accept {
            accepted += 1;
            ensure(file_bytes(&path) != before, || "accept left the corpus unchanged".into())?;
            if let (Some(id), spatial_recall::VerificationKind::LowConfidenceAnswer) = (&res.memory_id, res.kind) {
                let m = engine.memories(&user).unwrap().into_iter().find(|m| &m.id == id).unwrap();
                ensure(m.confidence.get() >= 7, || format!("accepted answer stored at {}", m.confidence.get()))?;
            }
        } else {
            rejected += 1;
            ensure(file_bytes(&path) == before, || "reject changed the corpus".into())?;
        }
    }
    ensure(pending > 20 && rejected > 0 && accepted > 0, || format!("only {pending} pending flows"))?;
    Ok(format!(
        "2000 fuzzed responses ({low} below 7); {pending} pending flows, {rejected} rejected byte-identical, {accepted} accepted"
    ))
}

fn tuesday_filter() -> Outcome {
    let p = ProviderSuite::stub();
    let cfg = RetrieverConfig::default();
    let mut r = rng(7);
    let (mut queries, mut returned) = (0, 0);
    for _ in 0..100 {
        let n = r.gen_range(10..=200);
        let corpus = support::random_corpus(&mut r, n, &p);
        for _ in 0..5 {
            let t = format!("{} {}", support::phrase(&mut r, 1..3), TUESDAY_PHRASES.choose(&mut r).unwrap());
            let center = *support::CENTERS.choose(&mut r).unwrap();
            let s = sketch_for(Some(t), support::phrase(&mut r, 1..4), support::near(&mut r, center, 0.01), Utc::now());
            let set = retrieve(&s, &QueryClassification::question(Granularity::Partial), &corpus, &cfg, &p)
                .map_err(|e| e.to_string())?;
            note_candidates(set.candidates.len());
            queries += 1;
            for c in &set.candidates {
                let m = corpus.iter().find(|m| m.id == c.memory_id).unwrap();
                ensure(m.created_at.weekday() == Weekday::Tue, || {
                    format!("{} from {} returned for {:?}", m.id, m.created_at.weekday(), s.transcript)
                })?;
                returned += 1;
            }
        }
    }
    ensure(returned > 0, || "no candidates at all; the check is vacuous".into())?;
    Ok(format!("100 corpora, {queries} weekday queries, {returned} candidates, all Tuesday"))
}

fn haversine() -> Outcome {
    // One degree of arc on a 6371 km sphere.
    let one_degree_m = 6_371_000.0 * std::f64::consts::PI / 180.0;
    for (a, b) in [((0.0, 0.0), (0.0, 1.0)), ((0.0, 0.0), (1.0, 0.0))] {
        let d = haversine_m(GeoPoint::new(a.0, a.1), GeoPoint::new(b.0, b.1));
        ensure(((d - 111_195.0) / 111_195.0).abs() < 0.005, || format!("{a:?}->{b:?} = {d} m"))?;
        ensure(((d - one_degree_m) / one_degree_m).abs() < 1e-9, || format!("{d} vs {one_degree_m}"))?;
    }
    let mut r = rng(8);
    for _ in 0..1000 {
        let a = GeoPoint::new(r.gen_range(-90.0..=90.0), r.gen_range(-180.0..=180.0));
        let b = GeoPoint::new(r.gen_range(-90.0..=90.0), r.gen_range(-180.0..=180.0));
        let (ab, ba) = (haversine_m(a, b), haversine_m(b, a));
        ensure((ab - ba).abs() <= 1e-6, || format!("asymmetric {a:?} {b:?}: {ab} {ba}"))?;
        ensure(haversine_m(a, a) == 0.0, || format!("self distance of {a:?}"))?;
        let reference = support::great_circle_km(a, b) * 1000.0;
        ensure((ab - reference).abs() < 1.0, || format!("{a:?}->{b:?}: {ab} vs {reference}"))?;
    }
    let d = haversine_m(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
    Ok(format!("1 degree = {:.3} km; 1000 random pairs symmetric, self distance 0", d / 1000.0))
}

fn persistence() -> Outcome {
    let mut r = rng(9);
    let user = UserId::from("u1");
    let mut tombstones_seen = 0;
    for round in 0..100 {
        let dir = tempfile::tempdir().unwrap();
        let start = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
        let (engine, _) = support::stub_engine(dir.path(), start);
        let n = r.gen_range(0..40);
        let eps: Vec<SeedEpisode> = support::random_drafts(&mut r, n, "u1")
            .into_iter()
            .map(|(id, draft)| SeedEpisode { id, draft })
            .collect();
        engine.seed(&user, eps).map_err(|e| e.to_string())?;
        let ids: Vec<_> = engine.memories(&user).unwrap().into_iter().map(|m| m.id).collect();
        let mut deleted = 0;
        for id in ids.iter().filter(|_| r.gen_bool(0.3)) {
            let out = engine
                .handle_forget(&ForgetRequest { user_id: user.clone(), query_text: None, memory_id: Some(id.clone()) })
                .map_err(|e| e.to_string())?;
            let vid = out.verification_id().unwrap().clone();
            engine
                .verify(&VerifyRequest { user_id: None, verification_id: vid, accept: true, replacement_answer: None })
                .map_err(|e| e.to_string())?;
            deleted += 1;
        }
        let expected = engine.memories(&user).unwrap();
        let path = memlog_path(dir.path(), &user);
        let scan = store::scan(&path).map_err(|e| e.to_string())?;
        ensure(scan.bad_line.is_none(), || format!("round {round}: {:?}", scan.bad_line))?;
        ensure(scan.tombstones == deleted, || format!("round {round}: {} tombstones, {deleted} deletes", scan.tombstones))?;
        tombstones_seen += scan.tombstones;
        ensure(scan.entries == expected, || format!("round {round}: scan differs"))?;
        let reopened = MemoryStore::open(dir.path(), &user, 256).map_err(|e| e.to_string())?;
        ensure(reopened.list() == expected, || format!("round {round}: reopen differs"))?;
        drop(engine);
        let (again, _) = support::stub_engine(dir.path(), start);
        ensure(again.memories(&user).unwrap() == expected, || format!("round {round}: engine reload differs"))?;
        again.flush().map_err(|e| e.to_string())?;
        ensure(store::load(&path).map_err(|e| e.to_string())? == expected, || format!("round {round}: compacted differs"))?;
    }

    // Torn final write.
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = support::stub_engine(dir.path(), Utc::now());
    let eps: Vec<SeedEpisode> = support::random_drafts(&mut r, 12, "u1")
        .into_iter()
        .map(|(id, draft)| SeedEpisode { id, draft })
        .collect();
    engine.seed(&user, eps).map_err(|e| e.to_string())?;
    let all = engine.memories(&user).unwrap();
    drop(engine);
    let path = memlog_path(dir.path(), &user);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 25]).unwrap();
    let scan = store::scan(&path).map_err(|e| e.to_string())?;
    // Header on line 1, then one line per memory.
    let last_line = all.len() + 1;
    ensure(scan.entries == all[..all.len() - 1], || format!("{} intact of {}", scan.entries.len(), all.len()))?;
    ensure(scan.bad_line.as_ref().map(|b| b.0) == Some(last_line), || format!("bad line {:?}", scan.bad_line))?;
    match MemoryStore::open(dir.path(), &user, 256) {
        Err(Error::Corrupt { line, .. }) if line == last_line => {}
        other => return Err(format!("strict open gave {:?}", other.map(|s| s.len()))),
    }
    Ok(format!(
        "100 corpora round-trip with {tombstones_seen} tombstones; torn tail keeps {} records, reports line {last_line}",
        scan.entries.len()
    ))
}

fn live_engine(dir: &std::path::Path, providers: ProviderSuite) -> Result<(Engine, UserId), String> {
    let start = Utc.with_ymd_and_hms(2024, 1, 9, 12, 0, 0).unwrap();
    let clock = Arc::new(ManualClock::new(start));
    let e = Engine::new(EngineConfig::new(dir), providers, clock).map_err(|e| e.to_string())?;
    let p = persona::load_persona(&support::fixtures().join("persona_a.jsonl"), &e.config().lexicon).unwrap();
    e.seed(&p.user_id, p.episodes).map_err(|e| e.to_string())?;
    Ok((e, p.user_id))
}

fn hours_question(user: &UserId) -> RawCapture {
    RawCapture {
        user_id: user.clone(),
        transcript: Some("hours?".into()),
        scene_text: Some("bistro entrance with a sign on the door".into()),
        image: None,
        space_label: Some("Bistro".into()),
        gps: GeoPoint::new(40.7712, -73.96),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 9, 12, 35, 0).unwrap(),
    }
}

fn live_refresh() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let counter = Arc::new(CountingSearch::new(Arc::new(StubWebSearch::new(Arc::new(StubFixtures::builtin())))));
    let (engine, user) = live_engine(dir.path(), ProviderSuite::stub().with_web_search(counter.clone()))?;
    let before = counter.calls();
    let out = engine.handle_query(&hours_question(&user)).map_err(|e| e.to_string())?;
    let resp = out.response().ok_or("no answer")?;
    ensure(resp.routing == SourceKind::Live, || format!("routed {:?}", resp.routing))?;
    ensure(counter.calls() - before == 1, || format!("{} search calls", counter.calls() - before))?;
    ensure(resp.answer_text.contains("The bistro is open until 9 PM today"), || resp.answer_text.clone())?;

    let dir = tempfile::tempdir().unwrap();
    let (engine, user) = live_engine(dir.path(), ProviderSuite::stub().with_web_search(Arc::new(UnavailableSearch)))?;
    let out = engine.handle_query(&hours_question(&user)).map_err(|e| e.to_string())?;
    let stale = out.response().ok_or("no answer")?;
    ensure(stale.routing == SourceKind::Live, || format!("routed {:?}", stale.routing))?;
    ensure(stale.rationale.contains("Live update unavailable") && stale.rationale.contains("may be stale"), || {
        stale.rationale.clone()
    })?;
    ensure(stale.answer_text == "The bistro closes at 8 PM.", || stale.answer_text.clone())?;
    Ok(format!("1 search call, answer {:?}; outage falls back to the saved answer", resp.answer_text))
}

fn reduction() -> Outcome {
    let log = ReplayLog::load(&support::fixtures().join("reduction_log.jsonl")).map_err(|e| e.to_string())?;
    let rep = report::build_report(&log);
    // Counted by hand: 10 -> 1, 8 -> 2, 6 -> 3 words, i.e. 90%, 75%, 50%.
    let pairs: Vec<(usize, usize)> = rep.reductions.iter().map(|p| (p.full_words, p.partial_words)).collect();
    ensure(pairs == [(10, 1), (8, 2), (6, 3)], || format!("{pairs:?}"))?;
    let expected = (90.0 + 75.0 + 50.0) / 3.0;
    let mean = rep.mean_reduction().ok_or("no pairs")?;
    ensure((mean - expected).abs() < 1e-12, || format!("mean {mean}"))?;
    let text = report::render(&rep, false);
    ensure(text.contains("71.7%"), || text.clone())?;
    Ok(format!("mean reduction {mean:.1}% over {} pairs", pairs.len()))
}

fn canonical_render(dir: &std::path::Path) -> Result<String, String> {
    let sc = scenario::load_scenario(&support::fixtures().join("scenario_a.jsonl")).map_err(|e| e.to_string())?;
    let log = replay_in_process(&sc, EngineConfig::new(dir), ProviderSuite::stub()).map_err(|e| e.to_string())?;
    Ok(report::render(&report::build_report(&log), false))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = canonical_render(a.path())?;
    let second = canonical_render(b.path())?;
    ensure(first == second, || format!("reports differ:\n{first}\n---\n{second}"))?;
    Ok(format!("two fresh replays render {} identical bytes", first.len()))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("rrf oracle equivalence", rrf_oracle),
        ("retrieval scenario suite", scenario_suite),
        ("brevity invariant", brevity),
        ("confidence gating", confidence_gating),
        ("temporal filter", tuesday_filter),
        ("k=5 cap", k_cap),
        ("haversine", haversine),
        ("persistence", persistence),
        ("live refresh", live_refresh),
        ("word-count reduction", reduction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
