//! Request and response bodies of the shim protocol.
//!
//! All endpoints take `POST` with a JSON body:
//!
//! | path        | request                                                  | response              |
//! |-------------|----------------------------------------------------------|-----------------------|
//! | `/layout`   | `{prompt, template_version, template}`                   | `{raw}`               |
//! | `/generate` | `{prompt, layout, seed, steps, guidance, width, height}` | `{png_base64}`        |
//! | `/refine`   | `{png_base64, prompt, seed, strength, guidance}`         | `{png_base64}`        |
//! | `/embed`    | `{png_base64}` or `{text}`                               | `{values, dim}`       |
//!
//! Errors come back as `{code, message}` with a 4xx (caller bug) or 5xx
//! (backend fault, retryable) status. Images travel as base64 PNG.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::layout::WireLayout;

pub const LAYOUT_PATH: &str = "/layout";
pub const GENERATE_PATH: &str = "/generate";
pub const REFINE_PATH: &str = "/refine";
pub const EMBED_PATH: &str = "/embed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRequest {
    pub prompt: String,
    pub template_version: String,
    /// Instruction template text; `{prompt}` marks the prompt slot.
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResponse {
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateBody {
    pub prompt: String,
    pub layout: WireLayout,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineBody {
    pub png_base64: String,
    pub prompt: String,
    pub seed: u64,
    pub strength: f64,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbedBody {
    Image { png_base64: String },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub values: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, BackendError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| BackendError::Failed(format!("png encode: {e}")))?;
    Ok(buf.into_inner())
}

pub fn png_to_base64(image: &RgbImage) -> Result<String, BackendError> {
    Ok(STANDARD.encode(encode_png(image)?))
}

pub fn base64_to_image(data: &str) -> Result<RgbImage, BackendError> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| BackendError::Decode(format!("png: {e}")))?;
    Ok(img.to_rgb8())
}
