//! Per-user spatial memory for wearable assistants.
//!
//! A capture (utterance, scene, place, time) is encoded into a
//! [`DimensionSketch`], classified, and either answered from the user's
//! corpus through reciprocal rank fusion, queued as a note to remember, or
//! turned into a removal request. Every write to the corpus passes a
//! verification gate.

pub mod api;
pub mod composer;
pub mod config;
pub mod decoder;
pub mod domain;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod harness;
pub mod linelog;
pub mod providers;
pub mod retriever;
pub mod server;
pub mod store;
pub mod text;
pub mod verification;

pub use api::{ForgetRequest, QueryOutcome, VerifyRequest};
pub use domain::{
    ComposedResponse, Confidence, DimensionSketch, Embedding, GeoPoint, Granularity, MemoryId,
    PendingVerification, QueryClassification, QueryType, SourceKind, SpatialMemory, UserId,
    VerificationId, VerificationKind,
};
pub use encoder::RawCapture;
pub use engine::{Clock, Engine, EngineConfig, ManualClock, SeedEpisode, SystemClock};
pub use error::{Error, Result};
pub use providers::ProviderSuite;
