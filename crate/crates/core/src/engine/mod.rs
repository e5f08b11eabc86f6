//! Orchestration of a full run: layout, drafts, and the re-rank/refine loop.

mod config;
mod manifest;
mod pipeline;

pub use config::{ConfigError, PipelineConfig};
pub use manifest::{
    image_relpath, CandidateRecord, FailureRecord, ManifestError, Phase, PhaseTimings,
    RoundRecord, RunManifest, IMAGES_DIR, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use pipeline::{
    draft_seed, generate_drafts, refine_round, refine_seed, run_pipeline, score_image,
    select_final, Batch, EngineError, RunOutput,
};
