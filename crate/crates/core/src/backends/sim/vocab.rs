//! Object vocabulary shared by the simulated generator and the oracle
//! embedder: every known label owns one embedding axis and one paint color.

use std::collections::BTreeSet;

/// The 80 COCO object classes.
pub const COCO_LABELS: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich",
    "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book",
    "clock", "vase", "scissors", "teddy bear", "hair drier", "toothbrush",
];

/// Paint color for objects whose label is not in the vocabulary.
pub const MISC_COLOR: [u8; 3] = [128, 128, 128];

/// Every background channel is at least this bright; palette channels never
/// are.
pub const BACKGROUND_FLOOR: u8 = 241;

const PALETTE_LEVELS: [u8; 5] = [40, 90, 140, 190, 240];
const MAX_PALETTE: usize = 125;

const COUNT_WORDS: [(&str, usize); 11] = [
    ("a", 1),
    ("an", 1),
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
];

const STOPWORDS: [&str; 16] = [
    "a", "an", "the", "of", "and", "photo", "picture", "image", "with", "on", "in", "left",
    "right", "above", "below", "next",
];

/// A label occurrence found in free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub index: usize,
    pub count: usize,
    /// Attribute words preceding the label, e.g. `["purple"]`.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    labels: Vec<String>,
    tokens: Vec<Vec<String>>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(COCO_LABELS.iter().copied()).expect("COCO fits the palette")
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn count_word(token: &str) -> Option<usize> {
    COUNT_WORDS
        .iter()
        .find(|(w, _)| *w == token)
        .map(|(_, n)| *n)
        .or_else(|| token.parse::<usize>().ok().filter(|n| (1..=99).contains(n)))
}

fn token_matches(token: &str, label_token: &str) -> bool {
    if token == label_token {
        return true;
    }
    let irregular = [("people", "person"), ("mice", "mouse"), ("knives", "knife")];
    if irregular.iter().any(|(pl, sg)| *pl == token && *sg == label_token) {
        return true;
    }
    token
        .strip_suffix("es")
        .is_some_and(|stem| stem == label_token)
        || token.strip_suffix('s').is_some_and(|stem| stem == label_token)
}

impl Vocabulary {
    /// Returns `None` if there are more labels than distinct palette colors.
    pub fn new<'a>(labels: impl IntoIterator<Item = &'a str>) -> Option<Self> {
        let labels: Vec<String> = labels.into_iter().map(|l| l.trim().to_lowercase()).collect();
        if labels.len() > MAX_PALETTE {
            return None;
        }
        let tokens = labels.iter().map(|l| tokenize(l)).collect();
        Some(Self { labels, tokens })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Embedding width: one axis per label, then background, then misc.
    pub fn embedding_dim(&self) -> usize {
        self.labels.len() + 2
    }

    pub fn background_axis(&self) -> usize {
        self.labels.len()
    }

    pub fn misc_axis(&self) -> usize {
        self.labels.len() + 1
    }

    /// Index of a label, matching the whole phrase with plural tolerance.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let toks = tokenize(label);
        self.tokens.iter().position(|lt| {
            lt.len() == toks.len()
                && lt.iter().zip(&toks).enumerate().all(|(i, (l, t))| {
                    if i + 1 == lt.len() {
                        token_matches(t, l)
                    } else {
                        t == l
                    }
                })
        })
    }

    pub fn color(&self, index: usize) -> [u8; 3] {
        [
            PALETTE_LEVELS[index % 5],
            PALETTE_LEVELS[(index / 5) % 5],
            PALETTE_LEVELS[(index / 25) % 5],
        ]
    }

    pub fn color_for_label(&self, label: &str) -> [u8; 3] {
        self.index_of(label).map_or(MISC_COLOR, |i| self.color(i))
    }

    /// Embedding axis a pixel color belongs to.
    pub fn axis_of_color(&self, c: [u8; 3]) -> usize {
        if c.iter().all(|v| *v >= BACKGROUND_FLOOR) {
            return self.background_axis();
        }
        let level = |v: u8| PALETTE_LEVELS.iter().position(|l| *l == v);
        match (level(c[0]), level(c[1]), level(c[2])) {
            (Some(r), Some(g), Some(b)) => {
                let i = r + 5 * g + 25 * b;
                if i < self.labels.len() {
                    i
                } else {
                    self.misc_axis()
                }
            }
            _ => self.misc_axis(),
        }
    }

    /// Label mentions in document order, with counts and attributes.
    pub fn find_mentions(&self, text: &str) -> Vec<Mention> {
        let toks = tokenize(text);
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by_key(|i| std::cmp::Reverse(self.tokens[*i].len()));

        let mut out = Vec::new();
        let mut pos = 0;
        let mut consumed_until = 0;
        while pos < toks.len() {
            let hit = order.iter().copied().find(|&i| {
                let lt = &self.tokens[i];
                pos + lt.len() <= toks.len()
                    && lt.iter().enumerate().all(|(k, l)| {
                        let t = &toks[pos + k];
                        if k + 1 == lt.len() {
                            token_matches(t, l)
                        } else {
                            t == l
                        }
                    })
            });
            let Some(index) = hit else {
                pos += 1;
                continue;
            };
            let mut count = 1;
            let mut attributes = Vec::new();
            let lookback_start = pos.saturating_sub(3).max(consumed_until);
            for back in (lookback_start..pos).rev() {
                let t = toks[back].as_str();
                if let Some(n) = count_word(t) {
                    count = n;
                    break;
                }
                if STOPWORDS.contains(&t) {
                    break;
                }
                attributes.insert(0, t.to_string());
            }
            out.push(Mention {
                index,
                count,
                attributes,
            });
            pos += self.tokens[index].len();
            consumed_until = pos;
        }
        out
    }

    /// Distinct label indices mentioned in `text`.
    pub fn labels_in(&self, text: &str) -> BTreeSet<usize> {
        self.find_mentions(text).into_iter().map(|m| m.index).collect()
    }
}
