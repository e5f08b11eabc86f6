//! Deterministic stand-ins for the four model services.
//!
//! The simulated generator paints each layout object as a solid rectangle in
//! its label's palette color over a seeded near-white canvas. Two failure
//! modes are modeled: misplacement (every box edge is offset by a seeded
//! standard normal scaled by the placement noise) and omission (an object is
//! dropped with a fixed probability). An object is only painted inside its
//! intended box, so misplacement shows up as lost coverage of that box.
//!
//! The simulated refiner keeps the scene's standardized offsets, scales the
//! placement noise by `1 - strength` and restores each dropped object with
//! probability `strength`. When intended boxes are pairwise disjoint, the
//! painted part of every object can therefore only grow under refinement.
//!
//! The oracle embedder maps an image to the vector of square-rooted color
//! fractions (one axis per vocabulary label, one for background, one for
//! anything else), which has unit norm. Text maps to the normalized sum of
//! the axes of the labels it mentions. Cosine similarity between a crop and
//! a single label is thus exactly `sqrt(fraction of the crop in that label's
//! color)`.
//!
//! Every generated or refined image is remembered together with its
//! [`SceneDescriptor`] so the refiner (and tests) can recover the scene from
//! pixels. The per-image canvas texture makes distinct scenes produce
//! distinct images.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Backends, EmbeddingProvider, GenerateRequest, ImageGenerator, ImageRefiner,
    LayoutProvider, RefineRequest,
};
use crate::layout::{validate_layout, BBox, Layout, ObjectSpec, WireLayout};
use crate::scoring::Embedding;
use crate::seed;

mod vocab;

pub use vocab::{tokenize, Mention, Vocabulary, BACKGROUND_FLOOR, COCO_LABELS, MISC_COLOR};

/// Most objects the simulated layout provider will place.
pub const MAX_SIM_OBJECTS: usize = 8;

const GENERATE_SALT: u64 = 0x6765_6e65;
const REFINE_SALT: u64 = 0x7265_6669;
const CANVAS_SALT: u64 = 0x6361_6e76;
const LAYOUT_SALT: u64 = 0x6c61_796f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Standard deviation of each box-edge offset, in normalized units.
    pub placement_noise: f64,
    /// Probability that a drafted object is omitted.
    pub dropout: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            placement_noise: 0.08,
            dropout: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub intended: BBox,
    /// Where the object was drawn; `None` iff it was dropped.
    pub rendered: Option<BBox>,
    pub color: [u8; 3],
    /// Standardized edge offsets; the rendered box is
    /// `intended + placement_noise * offsets`.
    pub offsets: [f64; 4],
}

impl SceneObject {
    pub fn dropped(&self) -> bool {
        self.rendered.is_none()
    }

    /// Part of the rendered box that is actually painted.
    pub fn painted(&self) -> Option<BBox> {
        self.rendered.map(|r| {
            BBox::new(
                r.x_min.max(self.intended.x_min),
                r.y_min.max(self.intended.y_min),
                r.x_max.min(self.intended.x_max),
                r.y_max.min(self.intended.y_max),
            )
        })
    }
}

/// Everything needed to re-render a simulated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub seed: u64,
    pub placement_noise: f64,
    pub width: u32,
    pub height: u32,
    /// Number of refinements since the draft.
    pub generation: u32,
    pub objects: Vec<SceneObject>,
}

fn perturb(intended: &BBox, offsets: &[f64; 4], noise: f64) -> BBox {
    BBox::new(
        intended.x_min + noise * offsets[0],
        intended.y_min + noise * offsets[1],
        intended.x_max + noise * offsets[2],
        intended.y_max + noise * offsets[3],
    )
}

/// Pixel index range whose centers fall in `[lo, hi)`.
fn pixel_span(lo: f64, hi: f64, size: u32) -> std::ops::Range<u32> {
    let s = f64::from(size);
    let start = (lo * s - 0.5).ceil().clamp(0.0, s) as u32;
    let end = (hi * s - 0.5).ceil().clamp(0.0, s) as u32;
    start..end.max(start)
}

impl SceneDescriptor {
    pub fn render(&self) -> RgbImage {
        let mut canvas = vec![0u8; self.width as usize * self.height as usize * 3];
        seed::rng(&[self.seed, u64::from(self.generation), CANVAS_SALT]).fill_bytes(&mut canvas);
        let span = 256 - u16::from(BACKGROUND_FLOOR);
        for b in canvas.iter_mut() {
            *b = BACKGROUND_FLOOR + (u16::from(*b) % span) as u8;
        }
        let mut img = RgbImage::from_raw(self.width, self.height, canvas)
            .expect("buffer sized to the image");
        for obj in &self.objects {
            let Some(p) = obj.painted() else { continue };
            for y in pixel_span(p.y_min, p.y_max, self.height) {
                for x in pixel_span(p.x_min, p.x_max, self.width) {
                    img.put_pixel(x, y, Rgb(obj.color));
                }
            }
        }
        img
    }
}

fn image_key(image: &RgbImage) -> u64 {
    let mut h = DefaultHasher::new();
    image.dimensions().hash(&mut h);
    image.as_raw().hash(&mut h);
    h.finish()
}

/// Shared memory of every simulated image and the scene behind it.
#[derive(Debug)]
pub struct SimStudio {
    config: SimConfig,
    vocabulary: Vocabulary,
    scenes: Mutex<HashMap<u64, SceneDescriptor>>,
}

impl SimStudio {
    pub fn new(config: SimConfig, vocabulary: Vocabulary) -> Self {
        Self {
            config,
            vocabulary,
            scenes: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    /// Scene that produced `image`, if this studio rendered it.
    pub fn descriptor_for(&self, image: &RgbImage) -> Option<SceneDescriptor> {
        self.scenes
            .lock()
            .expect("scene registry poisoned")
            .get(&image_key(image))
            .cloned()
    }

    fn publish(&self, scene: SceneDescriptor) -> RgbImage {
        let img = scene.render();
        self.scenes
            .lock()
            .expect("scene registry poisoned")
            .entry(image_key(&img))
            .or_insert(scene);
        img
    }

    fn color_for(&self, obj: &ObjectSpec) -> [u8; 3] {
        let v = &self.vocabulary;
        v.index_of(&obj.label)
            .or_else(|| v.find_mentions(&obj.label).first().map(|m| m.index))
            .or_else(|| v.find_mentions(&obj.description).first().map(|m| m.index))
            .map_or(MISC_COLOR, |i| v.color(i))
    }

    /// Draft scene for a layout and seed.
    pub fn draft_scene(&self, layout: &Layout, seed: u64, width: u32, height: u32) -> SceneDescriptor {
        let noise = self.config.placement_noise;
        let objects = layout
            .objects
            .iter()
            .enumerate()
            .map(|(i, obj)| {
                let mut rng = seed::rng(&[seed, i as u64, GENERATE_SALT]);
                let offsets: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let dropped = rng.random::<f64>() < self.config.dropout;
                SceneObject {
                    label: obj.label.clone(),
                    intended: obj.bbox,
                    rendered: (!dropped).then(|| perturb(&obj.bbox, &offsets, noise)),
                    color: self.color_for(obj),
                    offsets,
                }
            })
            .collect();
        SceneDescriptor {
            seed,
            placement_noise: noise,
            width,
            height,
            generation: 0,
            objects,
        }
    }

    /// Refined child of `parent`.
    pub fn refined_scene(&self, parent: &SceneDescriptor, seed: u64, strength: f64) -> SceneDescriptor {
        let noise = parent.placement_noise * (1.0 - strength);
        let objects = parent
            .objects
            .iter()
            .enumerate()
            .map(|(i, obj)| {
                let mut rng = seed::rng(&[seed, i as u64, REFINE_SALT]);
                let restored = rng.random::<f64>() < strength;
                let visible = !obj.dropped() || restored;
                SceneObject {
                    rendered: visible.then(|| perturb(&obj.intended, &obj.offsets, noise)),
                    ..obj.clone()
                }
            })
            .collect();
        SceneDescriptor {
            seed,
            placement_noise: noise,
            width: parent.width,
            height: parent.height,
            generation: parent.generation + 1,
            objects,
        }
    }

    /// Canned layout for a prompt: mentioned objects (with counts) placed on
    /// a grid with margins and a prompt-seeded jitter.
    pub fn canned_layout(&self, prompt: &str) -> WireLayout {
        let mut objects = Vec::new();
        'outer: for m in self.vocabulary.find_mentions(prompt) {
            let label = self.vocabulary.label(m.index).to_string();
            let mut description = String::from("a ");
            for a in &m.attributes {
                description.push_str(a);
                description.push(' ');
            }
            description.push_str(&label);
            for _ in 0..m.count {
                if objects.len() == MAX_SIM_OBJECTS {
                    break 'outer;
                }
                objects.push((label.clone(), description.clone()));
            }
        }
        let n = objects.len();
        let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
        let rows = n.div_ceil(cols).max(1);
        let (cw, ch) = (1.0 / cols as f64, 1.0 / rows as f64);
        let mut rng = seed::rng(&[prompt_hash(prompt), LAYOUT_SALT]);
        let objects = objects
            .into_iter()
            .enumerate()
            .map(|(i, (label, description))| {
                let (c, r) = ((i % cols) as f64, (i / cols) as f64);
                let mut inset = || 0.08 + 0.06 * rng.random::<f64>();
                let bbox = BBox::new(
                    (c + inset()) * cw,
                    (r + inset()) * ch,
                    (c + 1.0 - inset()) * cw,
                    (r + 1.0 - inset()) * ch,
                );
                ObjectSpec::new(label, description, bbox)
            })
            .collect();
        WireLayout { objects }
    }
}

fn prompt_hash(prompt: &str) -> u64 {
    let mut h = DefaultHasher::new();
    prompt.hash(&mut h);
    h.finish()
}

/// Call counter shared by the simulated backends.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Layout provider answering with [`SimStudio::canned_layout`] wrapped in
/// chatty prose, the way an LLM would.
pub struct SimLayoutProvider {
    studio: Arc<SimStudio>,
    pub calls: CallCounter,
}

impl LayoutProvider for SimLayoutProvider {
    fn propose(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.bump();
        if prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let doc = serde_json::to_string_pretty(&self.studio.canned_layout(prompt))
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        Ok(format!("Here is the layout for your prompt.\n```json\n{doc}\n```\n"))
    }
}

pub struct SimGenerator {
    studio: Arc<SimStudio>,
    pub calls: CallCounter,
}

impl ImageGenerator for SimGenerator {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<RgbImage, BackendError> {
        self.calls.bump();
        let violations = validate_layout(request.layout);
        if let Some(v) = violations.first() {
            return Err(BackendError::InvalidRequest(format!("invalid layout: {v}")));
        }
        if request.width == 0 || request.height == 0 {
            return Err(BackendError::InvalidRequest("zero image size".into()));
        }
        let scene = self
            .studio
            .draft_scene(request.layout, request.seed, request.width, request.height);
        Ok(self.studio.publish(scene))
    }
}

pub struct SimRefiner {
    studio: Arc<SimStudio>,
    pub calls: CallCounter,
}

impl ImageRefiner for SimRefiner {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<RgbImage, BackendError> {
        self.calls.bump();
        request.check()?;
        let parent = self.studio.descriptor_for(request.image).ok_or_else(|| {
            BackendError::Failed("image was not produced by this simulation".into())
        })?;
        let child = self
            .studio
            .refined_scene(&parent, request.seed, request.strength);
        Ok(self.studio.publish(child))
    }
}

/// Embedder with hand-computable similarities; see the module docs.
pub struct OracleEmbedder {
    vocabulary: Vocabulary,
    pub image_calls: CallCounter,
    pub text_calls: CallCounter,
}

impl OracleEmbedder {
    pub fn new(vocabulary: Vocabulary) -> Self {
        Self {
            vocabulary,
            image_calls: CallCounter::default(),
            text_calls: CallCounter::default(),
        }
    }

    /// Fraction of pixels on each embedding axis.
    pub fn axis_fractions(&self, image: &RgbImage) -> Vec<f64> {
        let mut counts = vec![0u64; self.vocabulary.embedding_dim()];
        for p in image.pixels() {
            counts[self.vocabulary.axis_of_color(p.0)] += 1;
        }
        let total = (image.width() as f64) * (image.height() as f64);
        counts.into_iter().map(|c| c as f64 / total).collect()
    }
}

impl EmbeddingProvider for OracleEmbedder {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, BackendError> {
        self.image_calls.bump();
        if image.width() == 0 || image.height() == 0 {
            return Err(BackendError::InvalidRequest("empty image".into()));
        }
        let values = self.axis_fractions(image).into_iter().map(f64::sqrt).collect();
        Embedding::new(values).map_err(|e| BackendError::Failed(e.to_string()))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        self.text_calls.bump();
        let mut values = vec![0.0; self.vocabulary.embedding_dim()];
        let labels = self.vocabulary.labels_in(text);
        if labels.is_empty() {
            values[self.vocabulary.misc_axis()] = 1.0;
        } else {
            let w = 1.0 / (labels.len() as f64).sqrt();
            for i in labels {
                values[i] = w;
            }
        }
        Embedding::new(values).map_err(|e| BackendError::Failed(e.to_string()))
    }
}

/// A full set of simulated backends sharing one studio.
pub struct SimSuite {
    pub studio: Arc<SimStudio>,
    pub layout: Arc<SimLayoutProvider>,
    pub generator: Arc<SimGenerator>,
    pub refiner: Arc<SimRefiner>,
    pub embedder: Arc<OracleEmbedder>,
}

impl SimSuite {
    pub fn new(config: SimConfig) -> Self {
        Self::with_vocabulary(config, Vocabulary::default())
    }

    pub fn with_vocabulary(config: SimConfig, vocabulary: Vocabulary) -> Self {
        let studio = Arc::new(SimStudio::new(config, vocabulary.clone()));
        Self {
            layout: Arc::new(SimLayoutProvider {
                studio: Arc::clone(&studio),
                calls: CallCounter::default(),
            }),
            generator: Arc::new(SimGenerator {
                studio: Arc::clone(&studio),
                calls: CallCounter::default(),
            }),
            refiner: Arc::new(SimRefiner {
                studio: Arc::clone(&studio),
                calls: CallCounter::default(),
            }),
            embedder: Arc::new(OracleEmbedder::new(vocabulary)),
            studio,
        }
    }

    pub fn backends(&self) -> Backends {
        Backends {
            layout: self.layout.clone(),
            generator: self.generator.clone(),
            refiner: self.refiner.clone(),
            embedder: self.embedder.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{parse_layout_response, regularize_layout};
    use crate::scoring::{crop_region, object_score, similarity};

    fn suite(noise: f64, dropout: f64) -> SimSuite {
        SimSuite::new(SimConfig {
            placement_noise: noise,
            dropout,
        })
    }

    fn layout_for(s: &SimSuite, prompt: &str) -> Layout {
        let raw = s.layout.propose(prompt).unwrap();
        regularize_layout(&parse_layout_response(&raw, prompt).unwrap(), 0.02).unwrap()
    }

    fn gen_req<'a>(prompt: &'a str, layout: &'a Layout, seed: u64) -> GenerateRequest<'a> {
        GenerateRequest {
            prompt,
            layout,
            seed,
            steps: 50,
            guidance: 7.5,
            width: 128,
            height: 128,
        }
    }

    #[test]
    fn canned_layout_for_four_giraffes() {
        let s = suite(0.0, 0.0);
        let raw = s.layout.propose("a photo of four giraffes").unwrap();
        let l = parse_layout_response(&raw, "a photo of four giraffes").unwrap();
        assert_eq!(l.len(), 4);
        assert!(l.objects.iter().all(|o| o.label == "giraffe"));
        assert!(validate_layout(&l).is_empty());
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (a, b) = (&l.objects[i].bbox, &l.objects[j].bbox);
                let disjoint = a.x_max <= b.x_min || b.x_max <= a.x_min || a.y_max <= b.y_min || b.y_max <= a.y_min;
                assert!(disjoint, "{a} overlaps {b}");
            }
        }
        assert!(matches!(s.layout.propose("  "), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn noiseless_generation_renders_intended_boxes() {
        let s = suite(0.0, 0.0);
        let prompt = "a cat and a dog";
        let layout = layout_for(&s, prompt);
        let img = s.generator.generate(&gen_req(prompt, &layout, 3)).unwrap();
        let scene = s.studio.descriptor_for(&img).unwrap();
        for obj in &scene.objects {
            assert_eq!(obj.rendered, Some(obj.intended));
        }
        let again = s.generator.generate(&gen_req(prompt, &layout, 3)).unwrap();
        assert_eq!(img.as_raw(), again.as_raw());
        let other = s.generator.generate(&gen_req(prompt, &layout, 4)).unwrap();
        assert_ne!(img.as_raw(), other.as_raw());
    }

    #[test]
    fn refinement_scales_noise() {
        let s = suite(0.1, 0.0);
        let prompt = "a cat";
        let layout = layout_for(&s, prompt);
        let img = s.generator.generate(&gen_req(prompt, &layout, 1)).unwrap();
        let child = s
            .refiner
            .refine(&RefineRequest {
                image: &img,
                prompt,
                seed: 9,
                strength: 0.5,
                guidance: 0.0,
            })
            .unwrap();
        let scene = s.studio.descriptor_for(&child).unwrap();
        assert!((scene.placement_noise - 0.05).abs() < 1e-15);
        assert_eq!(scene.generation, 1);

        let near_one = s
            .refiner
            .refine(&RefineRequest {
                image: &img,
                prompt,
                seed: 9,
                strength: 1.0 - 1e-12,
                guidance: 0.0,
            })
            .unwrap();
        let scene = s.studio.descriptor_for(&near_one).unwrap();
        let (r, i) = (scene.objects[0].rendered.unwrap(), scene.objects[0].intended);
        assert!((r.x_min - i.x_min).abs() < 1e-9 && (r.y_max - i.y_max).abs() < 1e-9);

        let bad = RefineRequest {
            image: &img,
            prompt,
            seed: 9,
            strength: 0.0,
            guidance: 0.0,
        };
        assert!(matches!(s.refiner.refine(&bad), Err(BackendError::InvalidRequest(_))));
        let foreign = RgbImage::new(64, 64);
        let unknown = RefineRequest {
            image: &foreign,
            strength: 0.5,
            ..bad
        };
        assert!(matches!(s.refiner.refine(&unknown), Err(BackendError::Failed(_))));
    }

    #[test]
    fn oracle_embedder_examples() {
        let v = Vocabulary::default();
        let e = OracleEmbedder::new(v.clone());
        let full = RgbImage::from_pixel(64, 64, Rgb(v.color_for_label("giraffe")));
        let sim = similarity(&e.embed_image(&full).unwrap(), &e.embed_text("giraffe").unwrap()).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);

        let blank = RgbImage::from_pixel(64, 64, Rgb([250, 250, 250]));
        let sim = similarity(&e.embed_image(&blank).unwrap(), &e.embed_text("giraffe").unwrap()).unwrap();
        assert!(sim <= 0.1);

        let sim = similarity(&e.embed_text("a giraffe").unwrap(), &e.embed_text("a zebra").unwrap()).unwrap();
        assert_eq!(sim, 0.0);
    }

    #[test]
    fn oracle_similarity_increases_with_coverage() {
        let v = Vocabulary::default();
        let e = OracleEmbedder::new(v.clone());
        let color = v.color_for_label("dog");
        let text = e.embed_text("a dog").unwrap();
        let mut last = -1.0;
        for cols in 0..=64u32 {
            let img = RgbImage::from_fn(64, 64, |x, _| if x < cols { Rgb(color) } else { Rgb([255, 255, 255]) });
            let s = similarity(&e.embed_image(&img).unwrap(), &text).unwrap();
            assert!(s > last, "coverage {cols}: {s} <= {last}");
            assert!((s - (f64::from(cols) / 64.0).sqrt()).abs() < 1e-12);
            last = s;
        }
    }

    #[test]
    fn refined_children_never_score_below_parents() {
        let prompts = ["a photo of four giraffes", "a chair and a zebra", "three cups", "a purple elephant and a brown sports ball"];
        for trial in 0..200u64 {
            let s = suite(0.08, 0.15);
            let prompt = prompts[(trial % 4) as usize];
            let layout = layout_for(&s, prompt);
            let parent = s.generator.generate(&gen_req(prompt, &layout, trial)).unwrap();
            let child = s
                .refiner
                .refine(&RefineRequest {
                    image: &parent,
                    prompt,
                    seed: trial + 1000,
                    strength: 0.5,
                    guidance: 0.0,
                })
                .unwrap();
            let e = s.embedder.as_ref();
            let ps = object_score(&parent, &layout, e).unwrap().unwrap();
            let cs = object_score(&child, &layout, e).unwrap().unwrap();
            assert!(cs >= ps - 1e-9, "trial {trial}: child {cs} < parent {ps}");
        }
    }

    #[test]
    fn dropped_crop_scores_low() {
        let s = suite(0.0, 1.0);
        let prompt = "a cat";
        let layout = layout_for(&s, prompt);
        let img = s.generator.generate(&gen_req(prompt, &layout, 0)).unwrap();
        assert!(s.studio.descriptor_for(&img).unwrap().objects[0].dropped());
        let crop = crop_region(&img, &layout.objects[0].bbox);
        let e = s.embedder.as_ref();
        let sim = similarity(&e.embed_image(&crop).unwrap(), &e.embed_text("cat").unwrap()).unwrap();
        assert!(sim <= 0.1);
    }
}
