//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Every tolerance and size is pinned below.

use std::process::Command;
use std::time::{Duration, Instant};

use image::RgbImage;
use num::{BigRational, Signed, ToPrimitive, Zero};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use refocus_core::backends::sim::{OracleEmbedder, SimConfig, SimSuite, Vocabulary, COCO_LABELS};
use refocus_core::backends::{EmbeddingProvider, GenerateRequest, ImageGenerator};
use refocus_core::engine::{run_pipeline, RunManifest, RunOutput, MANIFEST_FILE};
use refocus_core::layout::{
    regularize_layout, shrink_box, validate_layout, MAX_DELTA, MIN_BOX_EXTENT,
};
use refocus_core::scoring::{
    hybrid_score, object_score, rerank_top_k, scene_score, CandidateId, Ranked,
};
use refocus_core::{BBox, Embedding, Layout, ObjectSpec, PipelineConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

const GEOMETRY_LAYOUTS: usize = 10_000;
const GEOMETRY_MAX_OBJECTS: usize = 8;
const AREA_LAW_TOL: f64 = 1e-12;
const GEOMETRY_TIME_LIMIT: Duration = Duration::from_secs(5);

const ORACLE_SCENES: usize = 1_000;
const ORACLE_TOL: f64 = 1e-9;
const LAMBDA_GRID: usize = 11;

const RERANK_DRAWS: usize = 500;
const RERANK_MAX_SIZE: usize = 16;

const MONOTONE_SEEDS: u64 = 100;
const BEST_OF_N: [usize; 5] = [1, 2, 4, 8, 16];
const MONOTONE_ROUNDS: u32 = 3;

const EFFICACY_SEEDS: u64 = 200;
const EFFICACY_NOISE: f64 = 0.08;
const EFFICACY_DROPOUT: f64 = 0.15;
const CONFIDENCE: f64 = 0.95;
const EFFICACY_TIME_LIMIT: Duration = Duration::from_secs(60);

/// Image side for simulated runs; similarities in the simulation depend on
/// color fractions, not resolution.
const SIM_SIDE: u32 = 128;

const PROMPTS: [&str; 8] = [
    "a photo of four giraffes",
    "a dog to the left of a cat",
    "two cups and a bottle on a dining table",
    "a red car next to a bicycle",
    "three apples and a banana",
    "a person riding a horse",
    "a laptop, a mouse and a keyboard",
    "two birds above a bench",
];

type Outcome = Result<String, String>;

fn check(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn random_box(rng: &mut StdRng, min_extent: f64) -> BBox {
    let w = rng.random_range(min_extent..=1.0);
    let h = rng.random_range(min_extent..=1.0);
    let x = rng.random_range(0.0..=1.0 - w);
    let y = rng.random_range(0.0..=1.0 - h);
    BBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0))
}

/// A box strictly inside `outer`, to exercise containment repair.
fn nested_box(rng: &mut StdRng, outer: &BBox, min_extent: f64) -> Option<BBox> {
    let w = outer.width() * rng.random_range(0.2..0.9);
    let h = outer.height() * rng.random_range(0.2..0.9);
    if w < min_extent || h < min_extent {
        return None;
    }
    let x = outer.x_min + rng.random_range(0.0..=outer.width() - w);
    let y = outer.y_min + rng.random_range(0.0..=outer.height() - h);
    Some(BBox::new(x, y, x + w, y + h))
}

fn geometry_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x9e0);
    let mut worst_area = 0.0f64;
    let mut boxes_checked = 0usize;
    for n in 0..GEOMETRY_LAYOUTS {
        let k = rng.random_range(0..=GEOMETRY_MAX_OBJECTS);
        let delta = rng.random_range(0.0..MAX_DELTA);
        // Smallest input extent that survives the margin.
        let min_extent = MIN_BOX_EXTENT / (1.0 - 2.0 * delta) * 1.0001;
        let mut objects: Vec<ObjectSpec> = Vec::with_capacity(k);
        for i in 0..k {
            let nested = match objects.last() {
                Some(prev) if rng.random_bool(0.4) => nested_box(&mut rng, &prev.bbox, min_extent),
                _ => None,
            };
            let bbox = nested.unwrap_or_else(|| random_box(&mut rng, min_extent));
            let label = COCO_LABELS[rng.random_range(0..COCO_LABELS.len())];
            objects.push(ObjectSpec::new(label, format!("object {i}"), bbox));
        }
        for o in &objects {
            let shrunk = shrink_box(&o.bbox, delta).map_err(|e| e.to_string())?;
            let expected = o.bbox.area() * (1.0 - 2.0 * delta).powi(2);
            let err = (shrunk.area() - expected).abs();
            worst_area = worst_area.max(err);
            check(err <= AREA_LAW_TOL, || {
                format!("area law off by {err:e} for {} at delta {delta}", o.bbox)
            })?;
            boxes_checked += 1;
        }
        let layout = Layout::new(format!("layout {n}"), objects);
        let regular = regularize_layout(&layout, delta)
            .map_err(|e| format!("layout {n} (delta {delta}): {e}; input {}", layout.to_json()))?;
        let violations = validate_layout(&regular);
        check(violations.is_empty(), || {
            format!("layout {n} (delta {delta}) invalid after regularization: {violations:?}")
        })?;
    }
    let elapsed = started.elapsed();
    check(elapsed < GEOMETRY_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{GEOMETRY_LAYOUTS} layouts, {boxes_checked} boxes, worst area error {worst_area:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Cosine with exact rational dot products; one rounding at the end.
fn exact_cosine(a: &Embedding, b: &Embedding) -> f64 {
    let mut dot = BigRational::zero();
    let mut na = BigRational::zero();
    let mut nb = BigRational::zero();
    for (x, y) in a.values().iter().zip(b.values()) {
        let (x, y) = (rational(*x), rational(*y));
        dot += &x * &y;
        na += &x * &x;
        nb += &y * &y;
    }
    let sign = if dot.is_negative() { -1.0 } else { 1.0 };
    let squared = (&dot * &dot) / (na * nb);
    sign * squared.to_f64().expect("bounded").sqrt()
}

/// Pixels whose unit square overlaps the box interval on each axis; one
/// pixel at least.
fn manual_crop(image: &RgbImage, bbox: &BBox) -> RgbImage {
    let axis = |lo: f64, hi: f64, size: u32| -> Vec<u32> {
        let s = f64::from(size);
        let covered: Vec<u32> = (0..size)
            .filter(|&p| f64::from(p + 1) > lo * s && f64::from(p) < hi * s)
            .collect();
        if covered.is_empty() {
            vec![((lo * s) as u32).min(size - 1)]
        } else {
            covered
        }
    };
    let xs = axis(bbox.x_min, bbox.x_max, image.width());
    let ys = axis(bbox.y_min, bbox.y_max, image.height());
    RgbImage::from_fn(xs.len() as u32, ys.len() as u32, |i, j| {
        *image.get_pixel(xs[i as usize], ys[j as usize])
    })
}

fn scoring_oracle() -> Outcome {
    let suite = SimSuite::new(SimConfig::default());
    let embedder = OracleEmbedder::new(Vocabulary::default());
    let mut rng = StdRng::seed_from_u64(0x5c0);
    let mut worst = 0.0f64;
    let mut scenes = 0;
    while scenes < ORACLE_SCENES {
        let k = rng.random_range(1..=5);
        let objects = (0..k)
            .map(|_| {
                let label = COCO_LABELS[rng.random_range(0..COCO_LABELS.len())];
                let description = if rng.random_bool(0.3) {
                    format!("a large {label}")
                } else {
                    label.to_string()
                };
                ObjectSpec::new(label, description, random_box(&mut rng, 0.05))
            })
            .collect();
        let Ok(layout) = regularize_layout(&Layout::new("a scene", objects), 0.02) else {
            continue;
        };
        let (w, h) = (rng.random_range(64..=192), rng.random_range(64..=192));
        let image = suite
            .generator
            .generate(&GenerateRequest {
                prompt: "a scene",
                layout: &layout,
                seed: rng.random(),
                steps: 50,
                guidance: 7.5,
                width: w,
                height: h,
            })
            .map_err(|e| e.to_string())?;
        let got = object_score(&image, &layout, &embedder)
            .map_err(|e| e.to_string())?
            .ok_or("no object score for a non-empty layout")?;

        let mut sum = BigRational::zero();
        for o in &layout.objects {
            let crop_emb = embedder.embed_image(&manual_crop(&image, &o.bbox)).map_err(|e| e.to_string())?;
            let text_emb = embedder.embed_text(&o.description).map_err(|e| e.to_string())?;
            sum += rational(exact_cosine(&crop_emb, &text_emb));
        }
        let expected = (sum / BigRational::from_integer(layout.len().into()))
            .to_f64()
            .expect("bounded");
        let err = (got - expected).abs();
        worst = worst.max(err);
        check(err <= ORACLE_TOL, || format!("scene {scenes}: {got} vs oracle {expected}"))?;

        let scene = scene_score(
            &embedder.embed_image(&image).map_err(|e| e.to_string())?,
            &embedder.embed_text("a scene").map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        for i in 0..LAMBDA_GRID {
            let lambda = i as f64 / (LAMBDA_GRID - 1) as f64;
            let s = hybrid_score(scene, Some(got), lambda).map_err(|e| e.to_string())?;
            let affine = lambda * scene + (1.0 - lambda) * got;
            check(s.combined == affine && s.lambda_used == lambda, || {
                format!("combined({lambda}) = {} != {affine}", s.combined)
            })?;
            let fallback = hybrid_score(scene, None, lambda).map_err(|e| e.to_string())?;
            check(fallback.combined == scene && fallback.lambda_used == 1.0, || {
                format!("scene-only fallback at {lambda} gave {fallback:?}")
            })?;
        }
        let ends = (
            hybrid_score(scene, Some(got), 0.0).map_err(|e| e.to_string())?.combined,
            hybrid_score(scene, Some(got), 1.0).map_err(|e| e.to_string())?.combined,
        );
        check(ends == (got, scene), || format!("endpoints {ends:?} != ({got}, {scene})"))?;
        scenes += 1;
    }
    Ok(format!(
        "{ORACLE_SCENES} scenes, worst deviation {worst:.1e}, {LAMBDA_GRID}-point lambda grid exact"
    ))
}

#[derive(Debug, Clone)]
struct Item {
    id: CandidateId,
    index: usize,
    score: f64,
    round: u32,
    seed: u64,
}

impl Ranked for Item {
    fn rank_id(&self) -> &CandidateId {
        &self.id
    }
    fn combined_score(&self) -> Option<f64> {
        Some(self.score)
    }
    fn round(&self) -> u32 {
        self.round
    }
    fn seed(&self) -> u64 {
        self.seed
    }
}

/// Repeated selection of the preferred remaining item.
fn brute_force_order(items: &[Item]) -> Vec<usize> {
    let prefers = |a: &Item, b: &Item| {
        a.score > b.score
            || (a.score == b.score
                && (a.round < b.round
                    || (a.round == b.round
                        && (a.seed < b.seed || (a.seed == b.seed && a.index < b.index)))))
    };
    let mut left: Vec<&Item> = items.iter().collect();
    let mut order = Vec::with_capacity(items.len());
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if prefers(left[i], left[best]) {
                best = i;
            }
        }
        order.push(left.remove(best).index);
    }
    order
}

fn rerank_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x7e7);
    let mut comparisons = 0;
    for draw in 0..RERANK_DRAWS {
        // Coarse grids force ties in every tie-break field.
        let coarse = draw % 2 == 0;
        for size in 1..=RERANK_MAX_SIZE {
            let items: Vec<Item> = (0..size)
                .map(|index| Item {
                    id: CandidateId::from(format!("c{index}").as_str()),
                    index,
                    score: if coarse {
                        f64::from(rng.random_range(0..4u8)) / 4.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    },
                    round: rng.random_range(0..if coarse { 2 } else { 4 }),
                    seed: rng.random_range(0..if coarse { 2 } else { 1000 }),
                })
                .collect();
            let oracle = brute_force_order(&items);
            for k in 1..=size + 1 {
                let got: Vec<usize> = rerank_top_k(&items, k)
                    .map_err(|e| e.to_string())?
                    .iter()
                    .map(|c| c.index)
                    .collect();
                let want = &oracle[..k.min(size)];
                check(got == want, || {
                    format!("draw {draw}, size {size}, k {k}: {got:?} != {want:?}")
                })?;
                comparisons += 1;
            }
        }
    }
    Ok(format!("{RERANK_DRAWS} draws x sizes 1..={RERANK_MAX_SIZE}, {comparisons} top-K comparisons"))
}

fn sim_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        base_seed: seed,
        width: SIM_SIDE,
        height: SIM_SIDE,
        ..PipelineConfig::default()
    }
}

fn sim_run(suite: &SimSuite, seed: u64, config: &PipelineConfig) -> Result<RunOutput, String> {
    let prompt = PROMPTS[(seed as usize) % PROMPTS.len()];
    run_pipeline(prompt, config, &suite.backends()).map_err(|e| format!("seed {seed}: {e}"))
}

fn best_combined(m: &RunManifest) -> f64 {
    m.candidates.iter().map(|c| c.score.combined).fold(f64::NEG_INFINITY, f64::max)
}

fn best_of_n_monotone() -> Outcome {
    let suite = SimSuite::new(SimConfig::default());
    for seed in 0..MONOTONE_SEEDS {
        let mut prev: Option<(usize, RunManifest)> = None;
        for n in BEST_OF_N {
            let config = PipelineConfig { n_drafts: n, rounds: 0, ..sim_config(seed) };
            let m = sim_run(&suite, seed, &config)?.manifest;
            if let Some((pn, p)) = &prev {
                check(best_combined(&m) >= best_combined(p), || {
                    format!("seed {seed}: best at N={n} below N={pn}")
                })?;
                check(m.candidates[..*pn] == p.candidates[..], || {
                    format!("seed {seed}: N={n} does not extend the N={pn} drafts")
                })?;
            }
            prev = Some((n, m));
        }
    }
    Ok(format!("{MONOTONE_SEEDS} seeds, N in {BEST_OF_N:?}"))
}

fn round_monotone() -> Outcome {
    let suite = SimSuite::new(SimConfig::default());
    let mut improved = 0;
    for seed in 0..MONOTONE_SEEDS {
        let config = PipelineConfig { rounds: MONOTONE_ROUNDS, ..sim_config(seed) };
        let m = sim_run(&suite, seed, &config)?.manifest;
        let score_of = |id: &CandidateId| m.candidate(id).map(|c| c.score.combined);
        let mut prev = f64::NEG_INFINITY;
        for r in &m.rounds {
            let pool_best = r
                .kept_candidate_ids
                .iter()
                .chain(&r.produced_candidate_ids)
                .filter_map(score_of)
                .fold(f64::NEG_INFINITY, f64::max);
            check(pool_best >= prev, || {
                format!("seed {seed}: round {} best {pool_best} < {prev}", r.round_index)
            })?;
            prev = pool_best;
        }
        if prev > m.rounds[0].best_score.combined {
            improved += 1;
        }
    }
    Ok(format!(
        "{MONOTONE_SEEDS} seeds, rounds 0..={MONOTONE_ROUNDS}; strictly improved in {improved}"
    ))
}

struct Budget {
    runs: usize,
    violations: Vec<String>,
}

impl Budget {
    fn audit(&mut self, suite: &SimSuite, config: &PipelineConfig, m: &RunManifest) {
        self.runs += 1;
        let k = m.layout.objects.len() as u64;
        let generated = suite.generator.calls.get();
        let refined = suite.refiner.calls.get();
        let embedded = suite.embedder.image_calls.get();
        let refine_cap = u64::from(config.rounds) * config.m_variants as u64;
        let expected_embeds = m.candidates.len() as u64 * (1 + k);
        if generated != config.n_drafts as u64 || refined > refine_cap || embedded != expected_embeds {
            self.violations.push(format!(
                "seed {}: generator {generated}/{}, refiner {refined}/<={refine_cap}, embed-image {embedded}/{expected_embeds}",
                config.base_seed, config.n_drafts
            ));
        }
    }
}

/// One-sided paired t-test; returns (mean difference, lower confidence
/// bound).
fn paired_lower_bound(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("n > 1").inverse_cdf(CONFIDENCE);
    (mean, mean - t * (var / n).sqrt())
}

fn efficacy_and_budget() -> (Outcome, Outcome) {
    let started = Instant::now();
    let sim = SimConfig {
        placement_noise: EFFICACY_NOISE,
        dropout: EFFICACY_DROPOUT,
    };
    let mut budget = Budget { runs: 0, violations: Vec::new() };
    let mut vs_single = Vec::new();
    let mut vs_best_of_4 = Vec::new();
    let mut means = [0.0f64; 3];
    let final_object = |m: &RunManifest| {
        m.candidate(&m.final_candidate_id)
            .and_then(|c| c.score.object)
            .ok_or_else(|| format!("final candidate without object score for {:?}", m.prompt))
    };
    let body = (|| -> Result<(), String> {
        for seed in 0..EFFICACY_SEEDS {
            let full = PipelineConfig {
                n_drafts: 4,
                rounds: 2,
                k_keep: 1,
                m_variants: 4,
                lambda: 0.5,
                ..sim_config(seed)
            };
            let single = PipelineConfig { n_drafts: 1, rounds: 0, ..full.clone() };
            let best_of_4 = PipelineConfig { rounds: 0, ..full.clone() };
            let mut scores = [0.0; 3];
            for (slot, config) in [&full, &single, &best_of_4].into_iter().enumerate() {
                let suite = SimSuite::new(sim.clone());
                let m = sim_run(&suite, seed, config)?.manifest;
                budget.audit(&suite, config, &m);
                scores[slot] = final_object(&m)?;
            }
            for (mean, s) in means.iter_mut().zip(scores) {
                *mean += s / EFFICACY_SEEDS as f64;
            }
            vs_single.push(scores[0] - scores[1]);
            vs_best_of_4.push(scores[0] - scores[2]);
        }
        Ok(())
    })();
    let elapsed = started.elapsed();
    if let Err(e) = body {
        return (Err(e.clone()), Err(e));
    }

    let (d1, lb1) = paired_lower_bound(&vs_single);
    let (d2, lb2) = paired_lower_bound(&vs_best_of_4);
    let summary = format!(
        "mean object score {:.4} (refined) vs {:.4} (single draft) vs {:.4} (best-of-4); \
         diffs {d1:.4} [lb {lb1:.4}], {d2:.4} [lb {lb2:.4}] at {CONFIDENCE}; {:.1}s",
        means[0],
        means[1],
        means[2],
        elapsed.as_secs_f64()
    );
    let efficacy = if lb1 > 0.0 && lb2 > 0.0 && elapsed < EFFICACY_TIME_LIMIT {
        Ok(summary)
    } else {
        Err(summary)
    };
    let budget = if budget.violations.is_empty() {
        Ok(format!("{} runs audited", budget.runs))
    } else {
        Err(budget.violations.join("; "))
    };
    (efficacy, budget)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_refocus"))
            .args(["run", "--backend", "sim", "--seed", "7", "--prompt", PROMPTS[0], "--out-dir"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let text = std::fs::read_to_string(out.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        value
            .as_object_mut()
            .ok_or("manifest is not an object")?
            .remove("timings")
            .ok_or("manifest has no timings")?;
        manifests.push(serde_json::to_vec(&value).map_err(|e| e.to_string())?);
    }
    check(manifests[0] == manifests[1], || "manifests differ".into())?;
    Ok(format!("{} manifest bytes identical without timings", manifests[0].len()))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("geometry fuzz", geometry_suite()),
        ("scoring oracle", scoring_oracle()),
        ("rerank brute force", rerank_equivalence()),
        ("best-of-N monotone", best_of_n_monotone()),
        ("round monotone", round_monotone()),
    ];
    let (efficacy, budget) = efficacy_and_budget();
    results.push(("directional efficacy", efficacy));
    results.push(("determinism", cli_determinism()));
    results.push(("budget accounting", budget));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
