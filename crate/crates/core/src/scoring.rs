//! Scene-level, object-level and hybrid preference scores, and top-K
//! re-ranking of candidates.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, EmbeddingProvider};
use crate::layout::{BBox, Layout};

/// Smallest candidate image side, in pixels.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(&'static str),
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("candidate {0} has no score")]
    UnscoredCandidate(CandidateId),
    #[error("k_keep must be at least 1")]
    InvalidTopK,
    #[error("candidate image {width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("lineage: {0}")]
    Lineage(&'static str),
    #[error("embedding {}: {source}", match .object_index { Some(i) => format!("object {i}"), None => "scene".to_string() })]
    Embedder {
        object_index: Option<usize>,
        #[source]
        source: BackendError,
    },
}

/// Non-zero real vector produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = ScoringError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoringError> {
        if values.is_empty() {
            return Err(ScoringError::InvalidEmbedding("empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ScoringError::InvalidEmbedding("non-finite component"));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(ScoringError::InvalidEmbedding("zero vector"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64, ScoringError> {
    if a.dim() != b.dim() {
        return Err(ScoringError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

/// Whole-image alignment with the full prompt.
pub fn scene_score(image_emb: &Embedding, prompt_emb: &Embedding) -> Result<f64, ScoringError> {
    similarity(image_emb, prompt_emb)
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covered by a normalized box:
/// min edges floor, max edges ceil, clamped to the image and to at least
/// one pixel.
pub fn crop_rect(width: u32, height: u32, bbox: &BBox) -> (u32, u32, u32, u32) {
    fn span(lo: f64, hi: f64, size: u32) -> (u32, u32) {
        let size_f = f64::from(size);
        let start = (lo * size_f).floor().clamp(0.0, size_f - 1.0) as u32;
        let end = (hi * size_f).ceil().clamp(0.0, size_f) as u32;
        (start, end.max(start + 1))
    }
    let (x0, x1) = span(bbox.x_min, bbox.x_max, width);
    let (y0, y1) = span(bbox.y_min, bbox.y_max, height);
    (x0, y0, x1, y1)
}

/// Copy out the pixels under `bbox`. No resampling.
pub fn crop_region(image: &RgbImage, bbox: &BBox) -> RgbImage {
    let (x0, y0, x1, y1) = crop_rect(image.width(), image.height(), bbox);
    image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image()
}

/// Text embeddings a run needs, computed once and reused for every
/// candidate.
#[derive(Debug, Clone)]
pub struct TextEmbeddings {
    pub prompt: Embedding,
    pub objects: Vec<Embedding>,
}

impl TextEmbeddings {
    pub fn compute(
        layout: &Layout,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, ScoringError> {
        let prompt = embedder
            .embed_text(&layout.source_prompt)
            .map_err(|source| ScoringError::Embedder {
                object_index: None,
                source,
            })?;
        let objects = layout
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                embedder
                    .embed_text(&o.description)
                    .map_err(|source| ScoringError::Embedder {
                        object_index: Some(i),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { prompt, objects })
    }
}

/// Mean crop/description similarity over the layout's objects, or `None`
/// for an empty layout.
pub fn object_score(
    image: &RgbImage,
    layout: &Layout,
    embedder: &dyn EmbeddingProvider,
) -> Result<Option<f64>, ScoringError> {
    let texts = TextEmbeddings::compute(layout, embedder)?;
    object_score_with(image, layout, &texts.objects, embedder)
}

/// [`object_score`] with precomputed description embeddings.
pub fn object_score_with(
    image: &RgbImage,
    layout: &Layout,
    description_embs: &[Embedding],
    embedder: &dyn EmbeddingProvider,
) -> Result<Option<f64>, ScoringError> {
    if layout.is_empty() {
        return Ok(None);
    }
    debug_assert_eq!(description_embs.len(), layout.len());
    let mut sims = Vec::with_capacity(layout.len());
    for (i, (obj, text)) in layout.objects.iter().zip(description_embs).enumerate() {
        let crop = crop_region(image, &obj.bbox);
        let emb = embedder
            .embed_image(&crop)
            .map_err(|source| ScoringError::Embedder {
                object_index: Some(i),
                source,
            })?;
        sims.push(similarity(&emb, text)?);
    }
    // Summing in sorted order makes the mean independent of object order.
    sims.sort_by(f64::total_cmp);
    Ok(Some(sims.iter().sum::<f64>() / sims.len() as f64))
}

/// Scene, object and combined score plus the weight that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridScore {
    pub scene: f64,
    pub object: Option<f64>,
    pub lambda_used: f64,
    pub combined: f64,
}

/// `lambda * scene + (1 - lambda) * object`. Without an object score the
/// result is the scene score and `lambda_used` is 1.
pub fn hybrid_score(
    scene: f64,
    object: Option<f64>,
    lambda: f64,
) -> Result<HybridScore, ScoringError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ScoringError::LambdaOutOfRange(lambda));
    }
    Ok(match object {
        Some(obj) => HybridScore {
            scene,
            object: Some(obj),
            lambda_used: lambda,
            combined: lambda * scene + (1.0 - lambda) * obj,
        },
        None => HybridScore {
            scene,
            object: None,
            lambda_used: 1.0,
            combined: scene,
        },
    })
}

/// Candidate identifier, `r<round>_s<seed>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(String);

impl CandidateId {
    pub fn new(round: u32, seed: u64) -> Self {
        Self(format!("r{round}_s{seed}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CandidateId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A generated image with its provenance and, once scored, its score.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: CandidateId,
    pub image: Arc<RgbImage>,
    pub seed: u64,
    pub round: u32,
    pub parent_id: Option<CandidateId>,
    pub score: Option<HybridScore>,
}

impl Candidate {
    /// Round-0 candidate without a parent.
    pub fn draft(image: RgbImage, seed: u64) -> Result<Self, ScoringError> {
        check_size(&image)?;
        Ok(Self {
            id: CandidateId::new(0, seed),
            image: Arc::new(image),
            seed,
            round: 0,
            parent_id: None,
            score: None,
        })
    }

    /// Refined candidate; `round` must be at least 1.
    pub fn refined(
        image: RgbImage,
        seed: u64,
        round: u32,
        parent: CandidateId,
    ) -> Result<Self, ScoringError> {
        if round == 0 {
            return Err(ScoringError::Lineage("refined candidates need round >= 1"));
        }
        check_size(&image)?;
        Ok(Self {
            id: CandidateId::new(round, seed),
            image: Arc::new(image),
            seed,
            round,
            parent_id: Some(parent),
            score: None,
        })
    }

    pub fn with_score(mut self, score: HybridScore) -> Self {
        self.score = Some(score);
        self
    }
}

fn check_size(image: &RgbImage) -> Result<(), ScoringError> {
    if image.width() < MIN_IMAGE_SIDE || image.height() < MIN_IMAGE_SIDE {
        return Err(ScoringError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(())
}

/// Anything that can be placed in the re-ranking order.
pub trait Ranked {
    fn rank_id(&self) -> &CandidateId;
    fn combined_score(&self) -> Option<f64>;
    fn round(&self) -> u32;
    fn seed(&self) -> u64;
}

impl Ranked for Candidate {
    fn rank_id(&self) -> &CandidateId {
        &self.id
    }
    fn combined_score(&self) -> Option<f64> {
        self.score.map(|s| s.combined)
    }
    fn round(&self) -> u32 {
        self.round
    }
    fn seed(&self) -> u64 {
        self.seed
    }
}

/// Preference order: higher combined score first, then lower round, then
/// lower seed. Equal keys keep their relative input order when used with a
/// stable sort.
pub fn preference_order(a_score: f64, a: (u32, u64), b_score: f64, b: (u32, u64)) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.0.cmp(&b.0))
        .then(a.1.cmp(&b.1))
}

/// Keep the best `k_keep` candidates in preference order. The input is not
/// modified.
pub fn rerank_top_k<T: Ranked + Clone>(
    candidates: &[T],
    k_keep: usize,
) -> Result<Vec<T>, ScoringError> {
    if k_keep == 0 {
        return Err(ScoringError::InvalidTopK);
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s = c
            .combined_score()
            .ok_or_else(|| ScoringError::UnscoredCandidate(c.rank_id().clone()))?;
        scored.push((s, c));
    }
    scored.sort_by(|(sa, a), (sb, b)| {
        preference_order(*sa, (a.round(), a.seed()), *sb, (b.round(), b.seed()))
    });
    Ok(scored
        .into_iter()
        .take(k_keep)
        .map(|(_, c)| c.clone())
        .collect())
}
