use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{DEFAULT_DELTA, MAX_DELTA};
use crate::scoring::MIN_IMAGE_SIDE;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {field} {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

/// Every knob of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drafts sampled from the layout-grounded generator.
    pub n_drafts: usize,
    /// Candidates kept by each re-ranking.
    pub k_keep: usize,
    /// Refined variants produced per round, spread over the kept set.
    pub m_variants: usize,
    /// Weight of the scene score in the hybrid score.
    pub lambda: f64,
    /// Layout border margin.
    pub delta: f64,
    /// Number of re-rank/refine rounds.
    pub rounds: u32,
    /// Denoising strength of the refiner.
    pub alpha_refine: f64,
    pub gen_steps: u32,
    pub gen_guidance: f64,
    pub refine_guidance: f64,
    pub base_seed: u64,
    /// Extra layout-provider attempts after a parse or repair failure.
    pub retry_budget: u32,
    /// Keep the re-ranked survivors in the next round's pool.
    pub incumbent_retention: bool,
    pub width: u32,
    pub height: u32,
    /// Maximum concurrent backend calls within a phase.
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_drafts: 4,
            k_keep: 1,
            m_variants: 4,
            lambda: 0.5,
            delta: DEFAULT_DELTA,
            rounds: 2,
            alpha_refine: 0.5,
            gen_steps: 50,
            gen_guidance: 7.5,
            refine_guidance: 0.0,
            base_seed: 0,
            retry_budget: 3,
            incumbent_retention: true,
            width: 512,
            height: 512,
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_drafts == 0 {
            return Err(ConfigError::new("n_drafts", "must be at least 1"));
        }
        if self.k_keep == 0 {
            return Err(ConfigError::new("k_keep", "must be at least 1"));
        }
        if self.k_keep > self.n_drafts {
            return Err(ConfigError::new(
                "k_keep",
                format!("({}) must not exceed n_drafts ({})", self.k_keep, self.n_drafts),
            ));
        }
        if self.m_variants == 0 {
            return Err(ConfigError::new("m_variants", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::new(
                "lambda",
                format!("{} outside [0, 1]", self.lambda),
            ));
        }
        if !(0.0..MAX_DELTA).contains(&self.delta) {
            return Err(ConfigError::new(
                "delta",
                format!("{} outside [0, {MAX_DELTA})", self.delta),
            ));
        }
        if !(self.alpha_refine > 0.0 && self.alpha_refine < 1.0) {
            return Err(ConfigError::new(
                "alpha_refine",
                format!("{} outside (0, 1)", self.alpha_refine),
            ));
        }
        if !self.gen_guidance.is_finite() || !self.refine_guidance.is_finite() {
            return Err(ConfigError::new("guidance", "must be finite"));
        }
        if self.width < MIN_IMAGE_SIDE || self.height < MIN_IMAGE_SIDE {
            return Err(ConfigError::new(
                "width/height",
                format!("must be at least {MIN_IMAGE_SIDE}"),
            ));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::new("parallelism", "must be at least 1"));
        }
        Ok(())
    }
}
