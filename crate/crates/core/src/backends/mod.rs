//! The four pluggable model services the pipeline talks to.
//!
//! * [`LayoutProvider`] turns a prompt into raw layout text (an LLM).
//! * [`ImageGenerator`] renders a layout-grounded draft from a seed.
//! * [`ImageRefiner`] partially re-noises and denoises an image.
//! * [`EmbeddingProvider`] embeds images and text into a shared space.
//!
//! [`http`] adapts all four to the shim wire protocol; [`sim`] provides
//! deterministic simulations used for testing and offline runs.

use std::sync::Arc;

use image::RgbImage;
use thiserror::Error;

use crate::layout::Layout;
use crate::scoring::Embedding;

pub mod http;
pub mod sim;
pub mod template;
pub mod wire;

pub use http::{BackendEndpoint, HttpBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// The request violates a documented precondition.
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Connection, timeout or I/O failure.
    #[error("transport error: {0}")]
    Transport(String),
    /// The service answered with an error status.
    #[error("service error {status} ({code}): {message}")]
    Service {
        status: u16,
        code: String,
        message: String,
    },
    /// The response could not be decoded.
    #[error("malformed response: {0}")]
    Decode(String),
    /// The backend ran but could not produce a result.
    #[error("backend failed: {0}")]
    Failed(String),
}

impl BackendError {
    /// Transport failures and 5xx responses may succeed on retry; 4xx
    /// responses are caller bugs.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Service { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub layout: &'a Layout,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineRequest<'a> {
    pub image: &'a RgbImage,
    pub prompt: &'a str,
    pub seed: u64,
    pub strength: f64,
    pub guidance: f64,
}

impl RefineRequest<'_> {
    pub fn check(&self) -> Result<(), BackendError> {
        if !(self.strength > 0.0 && self.strength < 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "strength {} outside (0, 1)",
                self.strength
            )));
        }
        Ok(())
    }
}

pub trait LayoutProvider: Send + Sync {
    /// Raw provider text expected to contain one layout document.
    fn propose(&self, prompt: &str) -> Result<String, BackendError>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<RgbImage, BackendError>;
}

pub trait ImageRefiner: Send + Sync {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<RgbImage, BackendError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
}

/// The full set of services a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    pub layout: Arc<dyn LayoutProvider>,
    pub generator: Arc<dyn ImageGenerator>,
    pub refiner: Arc<dyn ImageRefiner>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Backends {
    /// Point every role at its own HTTP endpoint.
    pub fn http(
        layout: BackendEndpoint,
        generator: BackendEndpoint,
        refiner: BackendEndpoint,
        embedder: BackendEndpoint,
    ) -> Self {
        Self {
            layout: Arc::new(HttpBackend::new(layout)),
            generator: Arc::new(HttpBackend::new(generator)),
            refiner: Arc::new(HttpBackend::new(refiner)),
            embedder: Arc::new(HttpBackend::new(embedder)),
        }
    }
}
