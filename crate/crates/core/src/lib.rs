//! Online speaker diarization engine.
//!
//! The pipeline applies overlap-aware local segmentation to a 5s rolling
//! buffer every 500ms, extracts one weighted-pooled embedding per locally
//! active speaker, maps local speakers to global centroids with cannot-link
//! constrained incremental clustering, and emits diarization output at an
//! adjustable latency between one hop and one full buffer.
//!
//! Modules follow the processing order:
//!
//! - [`timebase`]: frame/time arithmetic, segments and annotations
//! - [`ingest`]: rolling-buffer windowing over frame-feature streams
//! - [`segmentation`]: per-window speaker activity matrices (oracle/file)
//! - [`pooling`]: overlap-aware weights and weighted statistics pooling
//! - [`clustering`]: centroid pool, constrained assignment, updates
//! - [`output`]: latency-controlled aggregation, binarization, RTTM
//! - [`metrics`]: DER scoring with optimal label mapping
//! - [`pipeline`]: orchestration, tuning, benchmarking
//! - [`fixtures`]: synthetic conversations and oracle features for testing

pub mod assignment;
pub mod clustering;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod ingest;
pub mod metrics;
pub mod output;
pub mod pipeline;
pub mod pooling;
pub mod segmentation;
pub mod timebase;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
