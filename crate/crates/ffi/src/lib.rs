//! C ABI over the spatial-recall engine.
//!
//! Requests and responses are the JSON bodies of the HTTP API. Every call
//! returns an [`SrStatus`]; on failure the message is available from
//! [`sr_last_error`] on the same thread. Strings handed out by this library
//! must be released with [`sr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use spatial_recall::api::{MemoryView, PendingView};
use spatial_recall::config::Settings;
use spatial_recall::harness::persona;
use spatial_recall::{
    Engine, EngineConfig, Error, ForgetRequest, RawCapture, SystemClock, UserId, VerifyRequest,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    InvalidArgument = 1,
    NotFound = 2,
    Conflict = 3,
    Gated = 4,
    Persistence = 5,
    CorruptRecord = 6,
    Migration = 7,
    MissingContext = 8,
    Unanswerable = 9,
    Transport = 10,
    MalformedOutput = 11,
    UnsupportedInput = 12,
    RevisionUnavailable = 13,
    Precondition = 14,
    WrongEndpoint = 15,
    Config = 16,
    /// A required pointer argument was NULL.
    NullPointer = 17,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 18,
    /// The library panicked; the engine may be unusable.
    Panic = 19,
}

impl From<&Error> for SrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => SrStatus::InvalidArgument,
            Error::NotFound(_) => SrStatus::NotFound,
            Error::Conflict(_) => SrStatus::Conflict,
            Error::Gated(_) => SrStatus::Gated,
            Error::Persistence { .. } => SrStatus::Persistence,
            Error::Corrupt { .. } => SrStatus::CorruptRecord,
            Error::Migration { .. } => SrStatus::Migration,
            Error::MissingContext(_) => SrStatus::MissingContext,
            Error::Unanswerable { .. } => SrStatus::Unanswerable,
            Error::Transport(_) => SrStatus::Transport,
            Error::MalformedOutput(_) => SrStatus::MalformedOutput,
            Error::UnsupportedInput(_) => SrStatus::UnsupportedInput,
            Error::RevisionUnavailable(_) => SrStatus::RevisionUnavailable,
            Error::Precondition(_) => SrStatus::Precondition,
            Error::WrongEndpoint(_) => SrStatus::WrongEndpoint,
            Error::Config(_) => SrStatus::Config,
        }
    }
}

/// Opaque engine handle.
pub struct SrEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SrStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(SrStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn engine_arg<'a>(e: *const SrEngine) -> FfiResult<&'a Engine> {
    e.as_ref()
        .map(|h| &h.engine)
        .ok_or_else(|| Failure(SrStatus::NullPointer, "engine is NULL".into()))
}

fn parse_json<T: DeserializeOwned>(text: &str) -> FfiResult<T> {
    serde_json::from_str(text)
        .map_err(|e| Failure(SrStatus::InvalidArgument, format!("request body: {e}")))
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(SrStatus::NullPointer, "out is NULL".into()));
    }
    let text = serde_json::to_string(value)
        .map_err(|e| Failure(SrStatus::MalformedOutput, e.to_string()))?;
    let c = CString::new(text).map_err(|e| Failure(SrStatus::MalformedOutput, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Opens an engine. `config_path` names an optional TOML settings file and
/// `data_dir` overrides its data directory; either may be NULL. Environment
/// variables prefixed `SPATIAL_RECALL_` apply as for the CLI.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_engine_open(
    config_path: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut SrEngine,
) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(SrStatus::NullPointer, "out is NULL".into()));
        }
        let config = opt_str_arg(config_path, "config_path")?.map(PathBuf::from);
        let mut settings = Settings::load(config.as_deref())?;
        if let Some(d) = opt_str_arg(data_dir, "data_dir")? {
            settings.data_dir = PathBuf::from(d);
        }
        let engine = Engine::new(
            EngineConfig::from_settings(&settings),
            settings.provider_suite()?,
            Arc::new(SystemClock),
        )?;
        *out = Box::into_raw(Box::new(SrEngine { engine }));
        Ok(())
    })
}

/// Compacts the loaded corpora and releases the engine. NULL is a no-op.
///
/// # Safety
/// `engine` must come from [`sr_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_engine_free(engine: *mut SrEngine) {
    if engine.is_null() {
        return;
    }
    let handle = Box::from_raw(engine);
    if let Err(e) = handle.engine.flush() {
        set_last_error(e.to_string());
    }
}

/// Compacts every loaded corpus and pending queue to disk.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_engine_flush(engine: *const SrEngine) -> SrStatus {
    guard(|| Ok(engine_arg(engine)?.flush()?))
}

/// Answers, queues a note, or starts a removal, depending on how the
/// utterance classifies. `capture_json` is a capture body; `*out` receives
/// the outcome.
///
/// # Safety
/// `engine` must be a live handle, `capture_json` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_query(
    engine: *const SrEngine,
    capture_json: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let c: RawCapture = parse_json(str_arg(capture_json, "capture_json")?)?;
        write_json(out, &e.handle_query(&c)?)
    })
}

/// Queues a note for confirmation. Fails with `WrongEndpoint` when the
/// utterance is not a note.
///
/// # Safety
/// As for [`sr_query`].
#[no_mangle]
pub unsafe extern "C" fn sr_remember(
    engine: *const SrEngine,
    capture_json: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let c: RawCapture = parse_json(str_arg(capture_json, "capture_json")?)?;
        write_json(out, &e.handle_remember(&c)?)
    })
}

/// Queues a removal for confirmation.
///
/// # Safety
/// As for [`sr_query`].
#[no_mangle]
pub unsafe extern "C" fn sr_forget(
    engine: *const SrEngine,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let r: ForgetRequest = parse_json(str_arg(request_json, "request_json")?)?;
        write_json(out, &e.handle_forget(&r)?)
    })
}

/// Accepts or rejects a pending entry.
///
/// # Safety
/// As for [`sr_query`].
#[no_mangle]
pub unsafe extern "C" fn sr_verify(
    engine: *const SrEngine,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let r: VerifyRequest = parse_json(str_arg(request_json, "request_json")?)?;
        write_json(out, &e.verify(&r)?)
    })
}

/// Lists a user's memories, oldest first, without embeddings.
///
/// # Safety
/// `engine` must be a live handle, `user_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_memories(
    engine: *const SrEngine,
    user_id: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let user = UserId::from(str_arg(user_id, "user_id")?);
        let views: Vec<MemoryView> = e.memories(&user)?.iter().map(MemoryView::from).collect();
        write_json(out, &views)
    })
}

/// Lists a user's unexpired pending entries.
///
/// # Safety
/// As for [`sr_memories`].
#[no_mangle]
pub unsafe extern "C" fn sr_pending(
    engine: *const SrEngine,
    user_id: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let user = UserId::from(str_arg(user_id, "user_id")?);
        let views: Vec<PendingView> = e.pending(&user)?.iter().map(PendingView::from).collect();
        write_json(out, &views)
    })
}

/// Stores every memory of a persona file. `*count` receives the number stored.
///
/// # Safety
/// `engine` must be a live handle, `persona_path` NUL-terminated, `count`
/// writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn sr_seed(
    engine: *const SrEngine,
    persona_path: *const c_char,
    count: *mut usize,
) -> SrStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let path = PathBuf::from(str_arg(persona_path, "persona_path")?);
        let p = persona::load_persona(&path, &e.config().lexicon)?;
        let n = e.seed(&p.user_id, p.episodes)?;
        if !count.is_null() {
            *count = n;
        }
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on this thread; do not free.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Whitespace-separated word count, or -1 for NULL or non-UTF-8 input.
///
/// # Safety
/// `text` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sr_word_count(text: *const c_char) -> i64 {
    match str_arg(text, "text") {
        Ok(t) => spatial_recall::domain::word_count(t) as i64,
        Err(_) => -1,
    }
}

/// Great-circle distance in meters.
#[no_mangle]
pub extern "C" fn sr_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    spatial_recall::retriever::haversine_m(
        spatial_recall::GeoPoint::new(lat1, lon1),
        spatial_recall::GeoPoint::new(lat2, lon2),
    )
}

/// Percentage decrease in words from a full utterance to a partial one.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_reduction_percent(full_words: usize, partial_words: usize, out: *mut f64) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(SrStatus::NullPointer, "out is NULL".into()));
        }
        *out = spatial_recall::domain::reduction_percent(full_words, partial_words)?;
        Ok(())
    })
}
