//! Brute-force reference computations and fixtures shared by the
//! integration tests. Nothing here calls the retriever.
#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc, Weekday};
use rand::seq::SliceRandom;
use rand::Rng;

use spatial_recall::api::{ForgetRequest, MemoryView, QueryOutcome, VerifyRequest};
use spatial_recall::decoder;
use spatial_recall::harness::client::{Client, ClientResult, InProcess};
use spatial_recall::harness::replay::{self, ReplayLog};
use spatial_recall::harness::{persona, scenario};
use spatial_recall::store::EpisodeDraft;
use spatial_recall::verification::Resolution;
use spatial_recall::{
    Confidence, DimensionSketch, Engine, EngineConfig, GeoPoint, Granularity, ManualClock,
    MemoryId, ProviderSuite, QueryClassification, RawCapture, SourceKind, SpatialMemory, UserId,
};

pub const K: usize = 5;
pub const C: f64 = 60.0;
pub const RADIUS_M: f64 = 150.0;
pub const CORPUS_CAP: usize = 1000;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Great-circle distance in km from the atan2 form of the spherical law,
/// a different formula from the one the engine uses.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2)
        + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2))
    .sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0 * y.atan2(x)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

/// Weekday named in an utterance, by plain word scan.
pub fn spoken_weekday(transcript: Option<&str>) -> Option<Weekday> {
    let t = transcript?.to_lowercase();
    let days = [
        ("monday", Weekday::Mon),
        ("tuesday", Weekday::Tue),
        ("wednesday", Weekday::Wed),
        ("thursday", Weekday::Thu),
        ("friday", Weekday::Fri),
        ("saturday", Weekday::Sat),
        ("sunday", Weekday::Sun),
    ];
    for word in t.split(|c: char| !c.is_alphanumeric()) {
        let w = word.strip_suffix('s').unwrap_or(word);
        if let Some((_, d)) = days.iter().find(|(n, _)| *n == w) {
            return Some(*d);
        }
    }
    None
}

/// Brute-force fusion: score every key that appears anywhere, sort, cut.
pub fn oracle_fuse(
    lists: &[Vec<String>],
    created: &HashMap<String, DateTime<Utc>>,
) -> Vec<(String, f64)> {
    let positions: Vec<HashMap<&String, usize>> = lists
        .iter()
        .map(|l| l.iter().enumerate().map(|(p, k)| (k, p)).collect())
        .collect();
    let mut keys: Vec<String> = lists.iter().flatten().cloned().collect();
    keys.sort();
    keys.dedup();
    let mut scored: Vec<(String, f64)> = keys
        .into_iter()
        .map(|k| {
            let mut s = 0.0;
            for pos in &positions {
                if let Some(p) = pos.get(&k) {
                    s += 1.0 / (C + (p + 1) as f64);
                }
            }
            (k, s)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(created[&b.0].cmp(&created[&a.0]))
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(K);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAnswer {
    pub fused: Vec<(String, f64)>,
    pub routing: SourceKind,
}

impl OracleAnswer {
    pub fn top1(&self) -> Option<String> {
        match self.routing {
            SourceKind::Fresh => None,
            _ => self.fused.first().map(|(k, _)| k.clone()),
        }
    }
}

/// Recomputes retrieval from scratch for one decoded query.
pub fn oracle_retrieve(
    sketch: &DimensionSketch,
    cls: &QueryClassification,
    corpus: &[SpatialMemory],
    providers: &ProviderSuite,
) -> OracleAnswer {
    let engages = match cls.granularity {
        Some(Granularity::Partial) | Some(Granularity::Zero) => true,
        Some(Granularity::Full) => decoder::has_memory_marker(sketch.transcript_text()),
        None => false,
    };
    if !engages {
        return OracleAnswer {
            fused: vec![],
            routing: SourceKind::Fresh,
        };
    }
    let day = spoken_weekday(sketch.transcript_text());
    let by_day: Vec<&SpatialMemory> = corpus
        .iter()
        .filter(|m| day.map_or(true, |d| m.created_at.weekday() == d))
        .collect();
    let dist = |m: &SpatialMemory| great_circle_km(sketch.gps, m.sketch.gps) * 1000.0;
    let near: Vec<&SpatialMemory> = by_day.iter().copied().filter(|m| dist(m) <= RADIUS_M).collect();
    let pool = if near.is_empty() { by_day } else { near };

    let newer_then_id = |a: &SpatialMemory, b: &SpatialMemory| {
        b.created_at.cmp(&a.created_at).then(a.id.cmp(&b.id))
    };
    let mut lists: Vec<Vec<String>> = Vec::new();

    let mut gps: Vec<(f64, &SpatialMemory)> =
        pool.iter().map(|m| (dist(m), *m)).filter(|(d, _)| *d <= RADIUS_M).collect();
    gps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(newer_then_id(a.1, b.1)));
    lists.push(gps.iter().map(|(_, m)| m.id.as_str().to_owned()).collect());

    let nonblank = |s: Option<&str>| s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned);
    let fields: [(Option<String>, fn(&SpatialMemory) -> &[f32]); 3] = [
        (nonblank(sketch.transcript.as_deref()), |m| m.embeddings.text.as_slice()),
        (nonblank(Some(&sketch.scene_description)), |m| m.embeddings.scene.as_slice()),
        (nonblank(sketch.referent.as_deref()), |m| m.embeddings.referent.as_slice()),
    ];
    for (text, stored) in fields {
        let Some(text) = text else {
            lists.push(vec![]);
            continue;
        };
        let q = providers.embed(&text).unwrap();
        let mut hits: Vec<(f64, &SpatialMemory)> = pool
            .iter()
            .map(|m| (dot(q.as_slice(), stored(m)), *m))
            .filter(|(c, _)| *c > 0.0)
            .collect();
        hits.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(newer_then_id(a.1, b.1)));
        lists.push(hits.iter().map(|(_, m)| m.id.as_str().to_owned()).collect());
    }

    let surfaced: Vec<&String> = lists.iter().flatten().collect();
    let mut timed: Vec<&SpatialMemory> = pool
        .iter()
        .copied()
        .filter(|m| surfaced.contains(&&m.id.as_str().to_owned()))
        .collect();
    timed.sort_by(|a, b| newer_then_id(a, b));
    lists.push(timed.iter().map(|m| m.id.as_str().to_owned()).collect());

    let created: HashMap<String, DateTime<Utc>> =
        pool.iter().map(|m| (m.id.as_str().to_owned(), m.created_at)).collect();
    let fused = oracle_fuse(&lists, &created);
    let floor = 1.0 / (C + (K * CORPUS_CAP) as f64);
    let routing = match fused.first() {
        None => SourceKind::Fresh,
        Some((_, s)) if *s < floor => SourceKind::Fresh,
        Some((id, _)) => match pool.iter().find(|m| m.id.as_str() == id).unwrap().source_kind {
            SourceKind::Live => SourceKind::Live,
            _ => SourceKind::Static,
        },
    };
    OracleAnswer { fused, routing }
}

/// Wraps the in-process client and records the oracle's view of every query
/// against the corpus as it stood just before the call.
pub struct OracleClient {
    pub inner: InProcess,
    pub seen: RefCell<Vec<Option<OracleAnswer>>>,
}

impl Client for OracleClient {
    fn query(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        let e = &self.inner.engine;
        let answer = e.decode(capture).ok().and_then(|(sketch, cls)| {
            cls.is_question().then(|| {
                let corpus = e.memories(&capture.user_id).unwrap();
                oracle_retrieve(&sketch, &cls, &corpus, e.providers())
            })
        });
        self.seen.borrow_mut().push(answer);
        self.inner.query(capture)
    }
    fn remember(&self, capture: &RawCapture) -> ClientResult<QueryOutcome> {
        self.inner.remember(capture)
    }
    fn forget(&self, req: &ForgetRequest) -> ClientResult<QueryOutcome> {
        self.inner.forget(req)
    }
    fn verify(&self, req: &VerifyRequest) -> ClientResult<Resolution> {
        self.inner.verify(req)
    }
    fn memories(&self, user: &UserId) -> ClientResult<Vec<MemoryView>> {
        self.inner.memories(user)
    }
    fn set_time(&self, t: DateTime<Utc>) {
        self.inner.set_time(t)
    }
}

pub fn stub_engine(dir: &Path, start: DateTime<Utc>) -> (Arc<Engine>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start));
    let e = Engine::new(EngineConfig::new(dir), ProviderSuite::stub(), clock.clone()).unwrap();
    (Arc::new(e), clock)
}

/// Seeds the persona, replays the scenario through the oracle client, and
/// returns the log with one oracle answer per query step.
pub fn replay_with_oracle(
    sc: &scenario::Scenario,
    dir: &Path,
) -> (ReplayLog, Vec<Option<OracleAnswer>>) {
    let start = sc.steps.iter().find_map(|s| s.at).unwrap();
    let (engine, clock) = stub_engine(dir, start);
    if let Some(p) = sc.persona_path() {
        let p = persona::load_persona(&p, &engine.config().lexicon).unwrap();
        engine.seed(&p.user_id, p.episodes).unwrap();
    }
    let client = OracleClient {
        inner: InProcess { engine, clock },
        seen: RefCell::new(vec![]),
    };
    let log = replay::replay(sc, &client).unwrap();
    (log, client.seen.into_inner())
}

/// Memory id a `@step` reference resolves to in a finished log.
pub fn resolve_ref(log: &ReplayLog, sc: &scenario::Scenario, r: &str) -> Option<String> {
    let Some(step) = r.strip_prefix('@') else {
        return Some(r.to_owned());
    };
    if let Some(id) = log.steps.iter().find(|s| s.step == step).and_then(|s| s.memory_id.clone()) {
        return Some(id.as_str().to_owned());
    }
    let closer = sc
        .steps
        .iter()
        .find(|s| s.verification.as_deref() == Some(r) && s.accept == Some(true))?;
    log.steps
        .iter()
        .find(|s| s.step == closer.id)
        .and_then(|s| s.memory_id.as_ref().map(|m| m.as_str().to_owned()))
}

/// Per graded step: (step id, failures). Empty failures means the frozen
/// expectation, the oracle and the engine all agree.
pub fn oracle_agreement(sc: &scenario::Scenario, log: &ReplayLog, seen: &[Option<OracleAnswer>]) -> Vec<(String, Vec<String>)> {
    let query_steps: Vec<_> = sc
        .steps
        .iter()
        .filter(|s| s.action == scenario::Action::Query)
        .collect();
    assert_eq!(query_steps.len(), seen.len(), "one oracle answer per query step");
    let mut out = Vec::new();
    for (step, oracle) in query_steps.iter().zip(seen) {
        let e = &step.expect;
        if e.top1.is_none() && e.routing.is_none() {
            continue;
        }
        let got = log.steps.iter().find(|s| s.step == step.id).unwrap();
        let mut f = Vec::new();
        let Some(oracle) = oracle else {
            f.push("oracle saw no question".to_owned());
            out.push((step.id.clone(), f));
            continue;
        };
        if let Some(want) = &e.top1 {
            let want = want.as_deref().and_then(|r| resolve_ref(log, sc, r));
            if oracle.top1() != want {
                f.push(format!("expected top1 {want:?}, oracle {:?}", oracle.top1()));
            }
        }
        if let Some(want) = e.routing {
            if oracle.routing != want {
                f.push(format!("expected routing {want:?}, oracle {:?}", oracle.routing));
            }
        }
        let actual = got.top1.as_ref().map(|m| m.as_str().to_owned());
        if actual != oracle.top1() {
            f.push(format!("engine top1 {actual:?}, oracle {:?}", oracle.top1()));
        }
        if got.routing != Some(oracle.routing) {
            f.push(format!("engine routing {:?}, oracle {:?}", got.routing, oracle.routing));
        }
        out.push((step.id.clone(), f));
    }
    out
}

const WORDS: &[&str] = &[
    "plant", "water", "bus", "stop", "coffee", "machine", "printer", "paper", "locker", "key",
    "shelf", "sauce", "wasabi", "bread", "window", "door", "panel", "wire", "desk", "lamp",
    "fridge", "milk", "umbrella", "badge", "meeting", "room", "receipt", "parcel", "bike", "rack",
];

pub const CENTERS: [(f64, f64); 4] = [
    (40.7736, -73.9566),
    (40.7750, -73.9540),
    (40.7712, -73.9600),
    (51.5072, -0.1276),
];

pub fn phrase<R: Rng>(rng: &mut R, len: std::ops::Range<usize>) -> String {
    let n = rng.gen_range(len);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn near<R: Rng>(rng: &mut R, center: (f64, f64), spread_deg: f64) -> GeoPoint {
    GeoPoint::new(
        center.0 + rng.gen_range(-spread_deg..=spread_deg),
        center.1 + rng.gen_range(-spread_deg..=spread_deg),
    )
}

/// Random episodes spread over a few places and six weeks, oldest first.
pub fn random_drafts<R: Rng>(rng: &mut R, n: usize, user: &str) -> Vec<(MemoryId, EpisodeDraft)> {
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut out: Vec<(MemoryId, EpisodeDraft)> = (0..n)
        .map(|i| {
            let ts = base + Duration::minutes(rng.gen_range(0..60 * 24 * 42));
            let center = *CENTERS.choose(rng).unwrap();
            let scene = phrase(rng, 2..6);
            let referent = rng.gen_bool(0.7).then(|| phrase(rng, 1..3));
            let kind = match rng.gen_range(0..10) {
                0 => SourceKind::Live,
                1 => SourceKind::Fresh,
                _ => SourceKind::Static,
            };
            let draft = EpisodeDraft {
                user_id: user.into(),
                sketch: DimensionSketch {
                    space_label: "Somewhere".into(),
                    scene_description: scene,
                    referent,
                    timestamp: ts,
                    gps: near(rng, center, 0.002),
                    intent: None,
                    transcript: None,
                },
                query_text: format!("{}?", phrase(rng, 1..8)),
                response_text: format!("{}.", phrase(rng, 3..12)),
                source_kind: kind,
                confidence: Confidence::new(rng.gen_range(1..=10)).unwrap(),
            };
            (MemoryId::new(format!("r{i:04}")), draft)
        })
        .collect();
    out.sort_by(|a, b| a.1.sketch.timestamp.cmp(&b.1.sketch.timestamp).then(a.0.cmp(&b.0)));
    out
}

pub fn random_corpus<R: Rng>(rng: &mut R, n: usize, providers: &ProviderSuite) -> Vec<SpatialMemory> {
    random_drafts(rng, n, "u1")
        .into_iter()
        .map(|(id, d)| d.into_memory(id, providers).unwrap())
        .collect()
}
