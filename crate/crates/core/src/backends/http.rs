//! Blocking HTTP client for the shim protocol.

use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::wire::{
    self, EmbedBody, EmbedResponse, ErrorBody, GenerateBody, ImageResponse, LayoutRequest,
    LayoutResponse, RefineBody,
};
use super::{
    template, BackendError, EmbeddingProvider, GenerateRequest, ImageGenerator, ImageRefiner,
    LayoutProvider, RefineRequest,
};
use crate::scoring::Embedding;

/// Environment variable holding the bearer token for HTTP backends.
pub const AUTH_TOKEN_ENV: &str = "REFOCUS_AUTH_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub retry_budget: u32,
    pub auth_token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            retry_budget: 2,
            auth_token: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retry_budget(mut self, retry_budget: u32) -> Self {
        self.retry_budget = retry_budget;
        self
    }

    /// Pick up the token from [`AUTH_TOKEN_ENV`] if set.
    pub fn with_env_token(mut self) -> Self {
        self.auth_token = std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// One shim endpoint set. Implements all four backend roles; the engine can
/// use one instance per role to reach different hosts.
pub struct HttpBackend {
    endpoint: BackendEndpoint,
    agent: Agent,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Self {
        let timeout = if endpoint.timeout.is_zero() {
            Duration::from_secs(1)
        } else {
            endpoint.timeout
        };
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    /// POST `body` and decode the reply, retrying retryable failures up to
    /// the endpoint's retry budget. The last error is returned unchanged.
    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = self.endpoint.url(path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.endpoint.retry_budget => {
                    attempt += 1;
                    log::debug!("retrying {url} ({attempt}/{}): {e}", self.endpoint.retry_budget);
                }
                other => return other,
            }
        }
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let mut request = self.agent.post(url);
        if let Some(token) = &self.endpoint.auth_token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
                Ok(err) => (err.code, err.message),
                Err(_) => ("unknown".to_string(), text),
            };
            return Err(BackendError::Service {
                status,
                code,
                message,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Decode(e.to_string()))
    }
}

impl LayoutProvider for HttpBackend {
    fn propose(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let body = LayoutRequest {
            prompt: prompt.to_string(),
            template_version: template::TEMPLATE_VERSION.to_string(),
            template: template::template_text().to_string(),
        };
        let resp: LayoutResponse = self.post(wire::LAYOUT_PATH, &body)?;
        Ok(resp.raw)
    }
}

impl ImageGenerator for HttpBackend {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<RgbImage, BackendError> {
        let body = GenerateBody {
            prompt: request.prompt.to_string(),
            layout: request.layout.to_wire(),
            seed: request.seed,
            steps: request.steps,
            guidance: request.guidance,
            width: request.width,
            height: request.height,
        };
        let resp: ImageResponse = self.post(wire::GENERATE_PATH, &body)?;
        wire::base64_to_image(&resp.png_base64)
    }
}

impl ImageRefiner for HttpBackend {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<RgbImage, BackendError> {
        request.check()?;
        let body = RefineBody {
            png_base64: wire::png_to_base64(request.image)?,
            prompt: request.prompt.to_string(),
            seed: request.seed,
            strength: request.strength,
            guidance: request.guidance,
        };
        let resp: ImageResponse = self.post(wire::REFINE_PATH, &body)?;
        wire::base64_to_image(&resp.png_base64)
    }
}

fn to_embedding(resp: EmbedResponse) -> Result<Embedding, BackendError> {
    if resp.values.len() != resp.dim {
        return Err(BackendError::Decode(format!(
            "dim {} but {} values",
            resp.dim,
            resp.values.len()
        )));
    }
    Embedding::new(resp.values).map_err(|e| BackendError::Decode(e.to_string()))
}

impl EmbeddingProvider for HttpBackend {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, BackendError> {
        let body = EmbedBody::Image {
            png_base64: wire::png_to_base64(image)?,
        };
        to_embedding(self.post(wire::EMBED_PATH, &body)?)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let body = EmbedBody::Text {
            text: text.to_string(),
        };
        to_embedding(self.post(wire::EMBED_PATH, &body)?)
    }
}
