//! Training-free compositional text-to-image generation by search.
//!
//! A prompt is turned into an explicit object layout by a language model,
//! `N` layout-grounded drafts are sampled, and candidates are re-ranked by a
//! hybrid of whole-scene and per-object embedding similarity. The best
//! candidates are then repeatedly refined by low-strength partial denoising
//! and re-ranked again.
//!
//! * [`layout`]: box geometry, validation, margin shrinking, overlap repair
//!   and parsing of layout documents.
//! * [`scoring`]: similarity, scene/object/hybrid scores and top-K
//!   re-ranking.
//! * [`backends`]: the model-service traits, an HTTP client for the shim
//!   protocol and deterministic simulations.
//! * [`engine`]: the pipeline driver and its run manifest.

pub mod backends;
pub mod engine;
pub mod layout;
pub mod scoring;
pub mod seed;

pub use backends::{
    BackendError, Backends, EmbeddingProvider, ImageGenerator, ImageRefiner, LayoutProvider,
};
pub use engine::{run_pipeline, select_final, EngineError, PipelineConfig, RunManifest, RunOutput};
pub use layout::{BBox, Layout, LayoutError, ObjectSpec, Violation};
pub use scoring::{Candidate, CandidateId, Embedding, HybridScore, ScoringError};
