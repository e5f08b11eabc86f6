use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, PipelineConfig};
use super::manifest::{
    image_relpath, CandidateRecord, FailureRecord, Phase, PhaseTimings, RoundRecord, RunManifest,
    IMAGES_DIR, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
use crate::backends::{
    template, Backends, EmbeddingProvider, GenerateRequest, ImageGenerator, ImageRefiner,
    RefineRequest,
};
use crate::layout::{parse_layout_response, regularize_layout, Layout};
use crate::scoring::{
    hybrid_score, object_score_with, rerank_top_k, scene_score, Candidate, CandidateId,
    HybridScore, ScoringError, TextEmbeddings,
};
use crate::seed;

const REFINE_SEED_SALT: u64 = 0x7365_6564;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("layout phase failed after {attempts} attempt(s): {last_error}")]
    LayoutPhaseFailed { attempts: u32, last_error: String },
    #[error("no draft could be generated and scored ({} failure(s)); first: {}", .failures.len(), .failures.first().map_or("-", |f| f.message.as_str()))]
    AllGenerationFailed { failures: Vec<FailureRecord> },
    #[error("refinement needs at least one kept candidate")]
    EmptyKeptSet,
    #[error("run has no scored candidates")]
    EmptyRun,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("writing run output: {0}")]
    Io(#[from] io::Error),
}

/// Candidates from one phase plus the items that were skipped.
#[derive(Debug, Default)]
pub struct Batch {
    pub candidates: Vec<Candidate>,
    pub failures: Vec<FailureRecord>,
}

/// Seed of the `variant`-th refinement in `round`.
pub fn refine_seed(base_seed: u64, round: u32, variant: usize) -> u64 {
    seed::mix(&[base_seed, u64::from(round), variant as u64, REFINE_SEED_SALT])
}

/// Seed of the `index`-th draft.
pub fn draft_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Map over `items` with at most `parallelism` workers, keeping input order.
fn ordered_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallelism > 1 && items.len() > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => log::warn!("falling back to sequential execution: {e}"),
        }
    }
    items.iter().map(f).collect()
}

/// Sample `n_drafts` layout-grounded drafts with seeds
/// `base_seed .. base_seed + n_drafts`.
///
/// Failed seeds are skipped and recorded; the call fails only if every seed
/// fails.
pub fn generate_drafts(
    prompt: &str,
    layout: &Layout,
    config: &PipelineConfig,
    generator: &dyn ImageGenerator,
) -> Result<Batch, EngineError> {
    let seeds: Vec<u64> = (0..config.n_drafts)
        .map(|i| draft_seed(config.base_seed, i))
        .collect();
    let results = ordered_map(&seeds, config.parallelism, |&seed| {
        let request = GenerateRequest {
            prompt,
            layout,
            seed,
            steps: config.gen_steps,
            guidance: config.gen_guidance,
            width: config.width,
            height: config.height,
        };
        generator
            .generate(&request)
            .map_err(|e| e.to_string())
            .and_then(|img| Candidate::draft(img, seed).map_err(|e| e.to_string()))
    });
    let mut batch = Batch::default();
    for (seed, result) in seeds.into_iter().zip(results) {
        match result {
            Ok(c) => batch.candidates.push(c),
            Err(message) => batch.failures.push(FailureRecord {
                phase: Phase::Generate,
                round: 0,
                seed: Some(seed),
                message,
            }),
        }
    }
    if batch.candidates.is_empty() {
        return Err(EngineError::AllGenerationFailed {
            failures: batch.failures,
        });
    }
    Ok(batch)
}

/// Produce `m_variants` refined children; variant `j` refines
/// `kept[j % kept.len()]`. Failed variants are skipped and recorded.
pub fn refine_round(
    kept: &[Candidate],
    prompt: &str,
    config: &PipelineConfig,
    round_index: u32,
    refiner: &dyn ImageRefiner,
) -> Result<Batch, EngineError> {
    if kept.is_empty() {
        return Err(EngineError::EmptyKeptSet);
    }
    let jobs: Vec<(usize, u64)> = (0..config.m_variants)
        .map(|j| (j, refine_seed(config.base_seed, round_index, j)))
        .collect();
    let results = ordered_map(&jobs, config.parallelism, |&(j, seed)| {
        let parent = &kept[j % kept.len()];
        let request = RefineRequest {
            image: &parent.image,
            prompt,
            seed,
            strength: config.alpha_refine,
            guidance: config.refine_guidance,
        };
        refiner
            .refine(&request)
            .map_err(|e| e.to_string())
            .and_then(|img| {
                Candidate::refined(img, seed, round_index, parent.id.clone())
                    .map_err(|e| e.to_string())
            })
    });
    let mut batch = Batch::default();
    for ((_, seed), result) in jobs.into_iter().zip(results) {
        match result {
            Ok(c) => batch.candidates.push(c),
            Err(message) => batch.failures.push(FailureRecord {
                phase: Phase::Refine,
                round: round_index,
                seed: Some(seed),
                message,
            }),
        }
    }
    Ok(batch)
}

/// Hybrid score of one image: one whole-image embedding plus one per
/// layout object.
pub fn score_image(
    image: &RgbImage,
    layout: &Layout,
    texts: &TextEmbeddings,
    embedder: &dyn EmbeddingProvider,
    lambda: f64,
) -> Result<HybridScore, ScoringError> {
    let image_emb = embedder
        .embed_image(image)
        .map_err(|source| ScoringError::Embedder {
            object_index: None,
            source,
        })?;
    let scene = scene_score(&image_emb, &texts.prompt)?;
    let object = object_score_with(image, layout, &texts.objects, embedder)?;
    hybrid_score(scene, object, lambda)
}

fn score_batch(
    candidates: Vec<Candidate>,
    layout: &Layout,
    texts: &TextEmbeddings,
    embedder: &dyn EmbeddingProvider,
    config: &PipelineConfig,
    failures: &mut Vec<FailureRecord>,
) -> Vec<Candidate> {
    let scores = ordered_map(&candidates, config.parallelism, |c| {
        score_image(&c.image, layout, texts, embedder, config.lambda)
    });
    let mut out = Vec::with_capacity(candidates.len());
    for (c, score) in candidates.into_iter().zip(scores) {
        match score {
            Ok(s) => out.push(c.with_score(s)),
            Err(e) => failures.push(FailureRecord {
                phase: Phase::Score,
                round: c.round,
                seed: Some(c.seed),
                message: format!("{}: {e}", c.id),
            }),
        }
    }
    out
}

/// Ask the provider for a layout, parse and regularize it, retrying up to
/// `retry_budget` extra times.
fn layout_phase(
    prompt: &str,
    config: &PipelineConfig,
    backends: &Backends,
    failures: &mut Vec<FailureRecord>,
) -> Result<(String, Layout), EngineError> {
    let attempts = config.retry_budget + 1;
    let mut last_error = String::new();
    for _ in 0..attempts {
        let outcome = backends
            .layout
            .propose(prompt)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                parse_layout_response(&raw, prompt)
                    .and_then(|l| regularize_layout(&l, config.delta))
                    .map(|l| (raw, l))
                    .map_err(|e| e.to_string())
            });
        match outcome {
            Ok(found) => return Ok(found),
            Err(message) => {
                last_error = message.clone();
                failures.push(FailureRecord {
                    phase: Phase::Layout,
                    round: 0,
                    seed: None,
                    message,
                });
            }
        }
    }
    Err(EngineError::LayoutPhaseFailed {
        attempts,
        last_error,
    })
}

fn ids(cs: &[Candidate]) -> Vec<CandidateId> {
    cs.iter().map(|c| c.id.clone()).collect()
}

fn best_of(cs: &[Candidate]) -> Option<&Candidate> {
    let top = rerank_top_k(cs, 1).ok()?;
    let id = &top.first()?.id;
    cs.iter().find(|c| &c.id == id)
}

fn round_record(
    round_index: u32,
    input: &[Candidate],
    kept: &[Candidate],
    produced: &[Candidate],
) -> Option<RoundRecord> {
    let union: Vec<Candidate> = kept.iter().chain(produced).cloned().collect();
    let best = best_of(&union)?;
    Some(RoundRecord {
        round_index,
        input_candidate_ids: ids(input),
        kept_candidate_ids: ids(kept),
        produced_candidate_ids: ids(produced),
        best_candidate_id: best.id.clone(),
        best_score: best.score.expect("pool candidates are scored"),
    })
}

/// Result of [`run_pipeline`]: the manifest plus every scored candidate
/// with its pixels, in manifest order.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub candidates: Vec<Candidate>,
}

impl RunOutput {
    pub fn final_candidate(&self) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| c.id == self.manifest.final_candidate_id)
            .expect("final candidate is part of the run")
    }

    /// Write `manifest.json` and `images/<id>.png` under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<(), EngineError> {
        let images = dir.join(IMAGES_DIR);
        fs::create_dir_all(&images)?;
        for c in &self.candidates {
            c.image
                .save_with_format(dir.join(image_relpath(&c.id)), image::ImageFormat::Png)
                .map_err(|e| io::Error::other(e.to_string()))?;
        }
        fs::write(dir.join(MANIFEST_FILE), self.manifest.to_json())?;
        Ok(())
    }
}

/// Layout, drafts, then `rounds` passes of re-rank and refine; the final
/// pick is the best candidate ever scored.
pub fn run_pipeline(
    prompt: &str,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<RunOutput, EngineError> {
    config.validate()?;
    let started = Instant::now();
    let mut timings = PhaseTimings::default();
    let mut failures = Vec::new();

    let (raw_layout, layout) = layout_phase(prompt, config, backends, &mut failures)?;
    let texts = TextEmbeddings::compute(&layout, backends.embedder.as_ref())?;
    timings.layout_secs = started.elapsed().as_secs_f64();

    let phase = Instant::now();
    let drafts = generate_drafts(prompt, &layout, config, backends.generator.as_ref())?;
    failures.extend(drafts.failures);
    let scored = score_batch(
        drafts.candidates,
        &layout,
        &texts,
        backends.embedder.as_ref(),
        config,
        &mut failures,
    );
    if scored.is_empty() {
        return Err(EngineError::AllGenerationFailed { failures });
    }
    let mut rounds = vec![round_record(0, &[], &[], &scored).expect("drafts are non-empty")];
    let mut all = scored.clone();
    let mut pool = scored;
    timings.drafts_secs = phase.elapsed().as_secs_f64();

    for round_index in 1..=config.rounds {
        let phase = Instant::now();
        let kept = rerank_top_k(&pool, config.k_keep)?;
        let batch = refine_round(
            &kept,
            prompt,
            config,
            round_index,
            backends.refiner.as_ref(),
        )?;
        failures.extend(batch.failures);
        let produced = score_batch(
            batch.candidates,
            &layout,
            &texts,
            backends.embedder.as_ref(),
            config,
            &mut failures,
        );
        rounds.push(
            round_record(round_index, &pool, &kept, &produced).expect("kept set is non-empty"),
        );
        all.extend(produced.iter().cloned());
        pool = if config.incumbent_retention || produced.is_empty() {
            kept.into_iter().chain(produced).collect()
        } else {
            produced
        };
        timings.rounds_secs.push(phase.elapsed().as_secs_f64());
    }

    let final_id = best_of(&all).ok_or(EngineError::EmptyRun)?.id.clone();
    let records = all
        .iter()
        .map(|c| CandidateRecord {
            id: c.id.clone(),
            seed: c.seed,
            round: c.round,
            parent_id: c.parent_id.clone(),
            image_path: image_relpath(&c.id),
            score: c.score.expect("only scored candidates are kept"),
        })
        .collect();
    timings.total_secs = started.elapsed().as_secs_f64();

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        prompt: prompt.to_string(),
        layout_template_version: template::TEMPLATE_VERSION.to_string(),
        raw_layout_response: raw_layout,
        layout: layout.to_wire(),
        config: config.clone(),
        candidates: records,
        rounds,
        failures,
        final_candidate_id: final_id,
        timings,
    };
    Ok(RunOutput {
        manifest,
        candidates: all,
    })
}

/// Best candidate of a finished run under the re-ranking order.
pub fn select_final(manifest: &RunManifest) -> Result<CandidateRecord, EngineError> {
    rerank_top_k(&manifest.candidates, 1)?
        .into_iter()
        .next()
        .ok_or(EngineError::EmptyRun)
}
