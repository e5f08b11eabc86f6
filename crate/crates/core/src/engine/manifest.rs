//! Persisted record of a pipeline run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::layout::WireLayout;
use crate::scoring::{CandidateId, HybridScore, Ranked};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: CandidateId,
    pub seed: u64,
    pub round: u32,
    pub parent_id: Option<CandidateId>,
    /// Path relative to the run directory.
    pub image_path: String,
    pub score: HybridScore,
}

impl Ranked for CandidateRecord {
    fn rank_id(&self) -> &CandidateId {
        &self.id
    }
    fn combined_score(&self) -> Option<f64> {
        Some(self.score.combined)
    }
    fn round(&self) -> u32 {
        self.round
    }
    fn seed(&self) -> u64 {
        self.seed
    }
}

/// One pass of the loop. Round 0 records the drafts: nothing is input or
/// kept and the drafts are the produced set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub input_candidate_ids: Vec<CandidateId>,
    pub kept_candidate_ids: Vec<CandidateId>,
    pub produced_candidate_ids: Vec<CandidateId>,
    /// Best of kept and produced.
    pub best_candidate_id: CandidateId,
    pub best_score: HybridScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Layout,
    Generate,
    Refine,
    Score,
}

/// A skipped attempt or item, with the backend's error text verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub phase: Phase,
    pub round: u32,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub layout_secs: f64,
    pub drafts_secs: f64,
    pub rounds_secs: Vec<f64>,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub prompt: String,
    pub layout_template_version: String,
    pub raw_layout_response: String,
    pub layout: WireLayout,
    pub config: PipelineConfig,
    pub candidates: Vec<CandidateRecord>,
    pub rounds: Vec<RoundRecord>,
    pub failures: Vec<FailureRecord>,
    pub final_candidate_id: CandidateId,
    pub timings: PhaseTimings,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parsing {path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest schema version {0}")]
    Version(u32),
}

impl RunManifest {
    pub fn candidate(&self, id: &CandidateId) -> Option<&CandidateRecord> {
        self.candidates.iter().find(|c| &c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization is infallible")
    }

    /// JSON with the wall-clock timings removed; equal for replayed runs.
    pub fn to_json_without_timings(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serialization is infallible");
        if let Some(map) = value.as_object_mut() {
            map.remove("timings");
        }
        serde_json::to_string_pretty(&value).expect("manifest serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Format {
                path: path.to_path_buf(),
                source,
            })?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(ManifestError::Version(manifest.schema_version));
        }
        Ok(manifest)
    }
}

pub fn image_relpath(id: &CandidateId) -> String {
    format!("{IMAGES_DIR}/{id}.png")
}
