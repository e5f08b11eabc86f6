//! Object layouts: normalized boxes, validation, margin shrinking, overlap
//! repair, and parsing of provider responses.
//!
//! A [`Layout`] is an ordered list of [`ObjectSpec`]s, each pairing a short
//! label with a longer object-wise description and a normalized [`BBox`].
//! Everything here is a pure function over immutable values.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Smallest admissible box width or height, as a fraction of the image side.
pub const MIN_BOX_EXTENT: f64 = 0.01;

/// Default border margin applied by [`regularize_layout`].
pub const DEFAULT_DELTA: f64 = 0.02;

/// Margins outside this range are accepted but logged as unusual.
pub const RECOMMENDED_DELTA: (f64, f64) = (0.02, 0.04);

/// Exclusive upper bound on the margin accepted by [`shrink_box`].
pub const MAX_DELTA: f64 = 0.25;

/// Number of full sweeps over all box pairs the overlap repair may take.
pub const MAX_REPAIR_PASSES: usize = 8;

/// How far past the containing box's edge a translated box must reach, and
/// how far inside the contained box a trimmed edge must end.
const REPAIR_CLEARANCE: f64 = MIN_BOX_EXTENT;

/// Clearance of the minimal move used for boxes too small to trim.
const NUDGE_CLEARANCE: f64 = 1e-6;

/// Cap on single-pair fixes after the sweeps; only reached by layouts of
/// many minimum-size duplicates.
const MAX_TRIM_STEPS: usize = 10_000;

/// Smaller trim clearances tried when the default one would leave a box
/// below the minimum extent.
const TRIM_CLEARANCES: [f64; 4] = [REPAIR_CLEARANCE, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("margin {0} outside [0, {MAX_DELTA})")]
    InvalidDelta(f64),
    #[error("no layout document found: {0}")]
    ParseFailed(String),
    #[error("bad coordinates for object {index}: {reason}")]
    CoordinateError { index: usize, reason: String },
    #[error("layout repair failed: {0}")]
    RepairFailed(String),
}

/// Axis-aligned box in normalized image coordinates.
///
/// Construction does not validate; use [`BBox::is_valid`] or
/// [`validate_layout`] to check the invariants. This lets malformed provider
/// output be represented and reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

impl BBox {
    pub const FULL: BBox = BBox {
        x_min: 0.0,
        y_min: 0.0,
        x_max: 1.0,
        y_max: 1.0,
    };

    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// True when `other` lies entirely inside `self` (boundaries may touch).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
    }

    pub fn is_valid(&self) -> bool {
        box_violation(self).is_none()
    }

    /// Clamp every coordinate into `[0, 1]`.
    pub fn clamped(&self) -> BBox {
        BBox::new(
            self.x_min.clamp(0.0, 1.0),
            self.y_min.clamp(0.0, 1.0),
            self.x_max.clamp(0.0, 1.0),
            self.y_max.clamp(0.0, 1.0),
        )
    }

    fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Shift the box back inside the unit frame without resizing it.
    fn shifted_into_frame(&self) -> BBox {
        let dx = if self.x_min < 0.0 {
            -self.x_min
        } else if self.x_max > 1.0 {
            1.0 - self.x_max
        } else {
            0.0
        };
        let dy = if self.y_min < 0.0 {
            -self.y_min
        } else if self.y_max > 1.0 {
            1.0 - self.y_max
        } else {
            0.0
        };
        self.translated(dx, dy)
    }
}

/// One object of a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub description: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl ObjectSpec {
    /// An empty description falls back to the label.
    pub fn new(label: impl Into<String>, description: impl Into<String>, bbox: BBox) -> Self {
        let label = label.into();
        let mut description = description.into();
        if description.trim().is_empty() {
            description = label.clone();
        }
        Self {
            label,
            description,
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub objects: Vec<ObjectSpec>,
    pub source_prompt: String,
}

impl Layout {
    pub fn new(source_prompt: impl Into<String>, objects: Vec<ObjectSpec>) -> Self {
        Self {
            objects,
            source_prompt: source_prompt.into(),
        }
    }

    pub fn empty(source_prompt: impl Into<String>) -> Self {
        Self::new(source_prompt, Vec::new())
    }

    /// Number of objects.
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BBox> {
        self.objects.iter().map(|o| &o.bbox)
    }

    pub fn to_wire(&self) -> WireLayout {
        WireLayout {
            objects: self.objects.clone(),
        }
    }

    /// Serialize to the compact wire document.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("layout serialization is infallible")
    }
}

/// The structured layout document exchanged with providers and stored in
/// run manifests: `{"objects": [{"label", "description", "box"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireLayout {
    pub objects: Vec<ObjectSpec>,
}

impl WireLayout {
    pub fn into_layout(self, source_prompt: impl Into<String>) -> Layout {
        Layout::new(source_prompt, self.objects)
    }
}

/// A broken layout rule, tagged with the offending object index (or pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Violation {
    NonFinite(usize),
    OutOfRange(usize),
    InvertedExtent(usize),
    BelowMinExtent(usize),
    EmptyLabel(usize),
    EmptyDescription(usize),
    /// One of the two boxes contains the other. Indices are ordered `i < j`.
    CompleteOverlap(usize, usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite(i) => write!(f, "object {i}: non-finite coordinate"),
            Violation::OutOfRange(i) => write!(f, "object {i}: coordinate outside [0, 1]"),
            Violation::InvertedExtent(i) => write!(f, "object {i}: min coordinate >= max"),
            Violation::BelowMinExtent(i) => {
                write!(f, "object {i}: extent below {MIN_BOX_EXTENT}")
            }
            Violation::EmptyLabel(i) => write!(f, "object {i}: empty label"),
            Violation::EmptyDescription(i) => write!(f, "object {i}: empty description"),
            Violation::CompleteOverlap(i, j) => {
                write!(f, "objects {i} and {j}: one box contains the other")
            }
        }
    }
}

// At most one geometric violation per box; the first failing rule wins.
fn box_violation_kind(b: &BBox) -> Option<fn(usize) -> Violation> {
    if !b.is_finite() {
        return Some(Violation::NonFinite);
    }
    let coords = [b.x_min, b.y_min, b.x_max, b.y_max];
    if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Some(Violation::OutOfRange);
    }
    if b.x_min >= b.x_max || b.y_min >= b.y_max {
        return Some(Violation::InvertedExtent);
    }
    if b.width() < MIN_BOX_EXTENT || b.height() < MIN_BOX_EXTENT {
        return Some(Violation::BelowMinExtent);
    }
    None
}

fn box_violation(b: &BBox) -> Option<Violation> {
    box_violation_kind(b).map(|v| v(0))
}

/// Check every box invariant and the no-containment rule.
///
/// Returns an empty list iff the layout is valid. Containment is only checked
/// between boxes that are individually well formed.
pub fn validate_layout(layout: &Layout) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut well_formed = Vec::with_capacity(layout.len());
    for (i, obj) in layout.objects.iter().enumerate() {
        if obj.label.trim().is_empty() {
            out.push(Violation::EmptyLabel(i));
        }
        if obj.description.trim().is_empty() {
            out.push(Violation::EmptyDescription(i));
        }
        match box_violation_kind(&obj.bbox) {
            Some(kind) => {
                out.push(kind(i));
                well_formed.push(false);
            }
            None => well_formed.push(true),
        }
    }
    for i in 0..layout.len() {
        for j in (i + 1)..layout.len() {
            if !(well_formed[i] && well_formed[j]) {
                continue;
            }
            let (a, b) = (&layout.objects[i].bbox, &layout.objects[j].bbox);
            if a.contains(b) || b.contains(a) {
                out.push(Violation::CompleteOverlap(i, j));
            }
        }
    }
    out
}

/// Inset a box by `delta` times its own width and height on every side.
pub fn shrink_box(bbox: &BBox, delta: f64) -> Result<BBox, LayoutError> {
    if !(0.0..MAX_DELTA).contains(&delta) {
        return Err(LayoutError::InvalidDelta(delta));
    }
    let dx = delta * bbox.width();
    let dy = delta * bbox.height();
    Ok(BBox::new(
        bbox.x_min + dx,
        bbox.y_min + dy,
        bbox.x_max - dx,
        bbox.y_max - dy,
    ))
}

/// Shrink every box by `delta`, then repair complete overlaps.
///
/// Object order, labels and descriptions are preserved. Repair only
/// translates boxes within the frame or shrinks them, so no output box is
/// larger than its shrunk input.
pub fn regularize_layout(layout: &Layout, delta: f64) -> Result<Layout, LayoutError> {
    if !(0.0..MAX_DELTA).contains(&delta) {
        return Err(LayoutError::InvalidDelta(delta));
    }
    if delta < RECOMMENDED_DELTA.0 || delta > RECOMMENDED_DELTA.1 {
        log::warn!(
            "layout margin {delta} outside the recommended range [{}, {}]",
            RECOMMENDED_DELTA.0,
            RECOMMENDED_DELTA.1
        );
    }
    let mut out = layout.clone();
    for (i, obj) in out.objects.iter_mut().enumerate() {
        if obj.label.trim().is_empty() {
            return Err(LayoutError::RepairFailed(format!("object {i} has an empty label")));
        }
        if obj.description.trim().is_empty() {
            obj.description = obj.label.clone();
        }
        if let Some(kind) = box_violation_kind(&obj.bbox) {
            return Err(LayoutError::RepairFailed(format!(
                "degenerate input box {}: {}",
                obj.bbox,
                kind(i)
            )));
        }
        let shrunk = shrink_box(&obj.bbox, delta)?;
        if let Some(kind) = box_violation_kind(&shrunk) {
            return Err(LayoutError::RepairFailed(format!(
                "box {} too small after a {delta} margin: {}",
                obj.bbox,
                kind(i)
            )));
        }
        obj.bbox = shrunk;
    }
    repair_overlaps(&out)
}

/// Resolve complete overlaps without applying a margin.
///
/// Pairs are visited in index order. The contained box is translated along
/// the vector from the container's center to its own center until it reaches
/// past the container's edge, staying inside the frame; if that fails, the
/// shortest feasible axis-aligned escape is used; if none exists the boxes
/// are trimmed (see `trim_container`). Translations can chase each other in
/// crowded layouts, so after [`MAX_REPAIR_PASSES`] sweeps only trims are
/// used, falling back to a minimal nudge only for boxes too small to trim. A
/// trimmed box cannot contain anything it did not contain before and loses
/// at least a fixed clearance, so that phase terminates. A layout
/// that already satisfies the overlap rule is returned unchanged.
pub fn repair_overlaps(layout: &Layout) -> Result<Layout, LayoutError> {
    let mut out = layout.clone();
    let n = out.len();
    for _pass in 0..MAX_REPAIR_PASSES {
        let mut changed = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let Some((outer, inner)) = containment(&out, i, j) else {
                    continue;
                };
                changed = true;
                let outer_box = out.objects[outer].bbox;
                let inner_box = out.objects[inner].bbox;
                match escape_containment(&outer_box, &inner_box) {
                    Some(moved) => out.objects[inner].bbox = moved,
                    None => {
                        let (o, i) = trim_container(&out, outer, inner)?;
                        out.objects[outer].bbox = o;
                        out.objects[inner].bbox = i;
                    }
                }
            }
        }
        if !changed {
            return Ok(out);
        }
    }
    for _step in 0..MAX_TRIM_STEPS {
        let Some((outer, inner)) = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .find_map(|(i, j)| containment(&out, i, j))
        else {
            return Ok(out);
        };
        match trim_container(&out, outer, inner) {
            Ok((o, i)) => {
                out.objects[outer].bbox = o;
                out.objects[inner].bbox = i;
            }
            Err(e) => {
                let (o, i) = (out.objects[outer].bbox, out.objects[inner].bbox);
                out.objects[inner].bbox = axis_escape(&o, &i, NUDGE_CLEARANCE).ok_or(e)?;
            }
        }
    }
    Err(LayoutError::RepairFailed(format!(
        "unresolved after {MAX_TRIM_STEPS} trim steps"
    )))
}

/// `(outer, inner)` if one of boxes `i` and `j` contains the other.
fn containment(layout: &Layout, i: usize, j: usize) -> Option<(usize, usize)> {
    let (a, b) = (&layout.objects[i].bbox, &layout.objects[j].bbox);
    if a.contains(b) {
        Some((i, j))
    } else if b.contains(a) {
        Some((j, i))
    } else {
        None
    }
}

/// Pull one edge of the container inside the contained box. If no single
/// trim works (identical boxes, say), trim opposite edges of both so they
/// cross. Returns the new `(outer, inner)` boxes.
fn trim_container(layout: &Layout, outer: usize, inner: usize) -> Result<(BBox, BBox), LayoutError> {
    let (o, i) = (layout.objects[outer].bbox, layout.objects[inner].bbox);
    let feasible = |(a, b): &(BBox, BBox)| {
        box_violation(a).is_none() && box_violation(b).is_none() && breaks_containment(a, b)
    };
    let largest = |options: [(BBox, BBox); 4]| {
        options
            .into_iter()
            .filter(feasible)
            .max_by(|x, y| (x.0.area() + x.1.area()).total_cmp(&(y.0.area() + y.1.area())))
    };
    for c in TRIM_CLEARANCES {
        let single = [
            BBox::new(o.x_min, o.y_min, i.x_max - c, o.y_max),
            BBox::new(i.x_min + c, o.y_min, o.x_max, o.y_max),
            BBox::new(o.x_min, o.y_min, o.x_max, i.y_max - c),
            BBox::new(o.x_min, i.y_min + c, o.x_max, o.y_max),
        ];
        if let Some(found) = largest(single.map(|t| (t, i))) {
            return Ok(found);
        }
    }
    for c in TRIM_CLEARANCES {
        let crossed = [
            (BBox::new(o.x_min, o.y_min, i.x_max - c, o.y_max), BBox::new(i.x_min + c, i.y_min, i.x_max, i.y_max)),
            (BBox::new(i.x_min + c, o.y_min, o.x_max, o.y_max), BBox::new(i.x_min, i.y_min, i.x_max - c, i.y_max)),
            (BBox::new(o.x_min, o.y_min, o.x_max, i.y_max - c), BBox::new(i.x_min, i.y_min + c, i.x_max, i.y_max)),
            (BBox::new(o.x_min, i.y_min + c, o.x_max, o.y_max), BBox::new(i.x_min, i.y_min, i.x_max, i.y_max - c)),
        ];
        if let Some(found) = largest(crossed) {
            return Ok(found);
        }
    }
    Err(LayoutError::RepairFailed(format!(
        "objects {outer} and {inner} are too small to separate"
    )))
}

fn breaks_containment(outer: &BBox, moved: &BBox) -> bool {
    !outer.contains(moved) && !moved.contains(outer)
}

fn escape_containment(outer: &BBox, inner: &BBox) -> Option<BBox> {
    let (ocx, ocy) = outer.center();
    let (icx, icy) = inner.center();
    let (dx, dy) = (icx - ocx, icy - ocy);
    let len = dx.hypot(dy);
    if len > 1e-12 {
        let (ux, uy) = (dx / len, dy / len);
        let mut t = f64::INFINITY;
        if ux > 0.0 {
            t = t.min((outer.x_max + REPAIR_CLEARANCE - inner.x_max) / ux);
        } else if ux < 0.0 {
            t = t.min((inner.x_min - outer.x_min + REPAIR_CLEARANCE) / -ux);
        }
        if uy > 0.0 {
            t = t.min((outer.y_max + REPAIR_CLEARANCE - inner.y_max) / uy);
        } else if uy < 0.0 {
            t = t.min((inner.y_min - outer.y_min + REPAIR_CLEARANCE) / -uy);
        }
        let moved = inner.translated(t * ux, t * uy).shifted_into_frame();
        if breaks_containment(outer, &moved) {
            return Some(moved);
        }
    }

    axis_escape(outer, inner, REPAIR_CLEARANCE)
}

/// Shortest of the left, right, up and down moves that takes `inner`
/// `clearance` past an edge of `outer` while staying in the frame.
fn axis_escape(outer: &BBox, inner: &BBox, clearance: f64) -> Option<BBox> {
    let options = [
        (outer.x_min - clearance >= 0.0)
            .then_some((inner.x_min - outer.x_min + clearance, (-1.0, 0.0))),
        (outer.x_max + clearance <= 1.0)
            .then_some((outer.x_max + clearance - inner.x_max, (1.0, 0.0))),
        (outer.y_min - clearance >= 0.0)
            .then_some((inner.y_min - outer.y_min + clearance, (0.0, -1.0))),
        (outer.y_max + clearance <= 1.0)
            .then_some((outer.y_max + clearance - inner.y_max, (0.0, 1.0))),
    ];
    let mut best: Option<(f64, BBox)> = None;
    for (dist, (sx, sy)) in options.into_iter().flatten() {
        let moved = inner.translated(dist * sx, dist * sy).shifted_into_frame();
        if !breaks_containment(outer, &moved) {
            continue;
        }
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, moved));
        }
    }
    best.map(|(_, b)| b)
}

/// Extract a layout from free-form provider text.
///
/// The first JSON object carrying an `"objects"` key is used; surrounding
/// prose and code fences are ignored. Coordinates are clamped to `[0, 1]`.
/// A missing or blank description defaults to the label.
pub fn parse_layout_response(raw: &str, prompt: &str) -> Result<Layout, LayoutError> {
    let doc = find_layout_document(raw).ok_or_else(|| {
        LayoutError::ParseFailed("no JSON object with an \"objects\" field".to_string())
    })?;
    let objects = doc
        .get("objects")
        .and_then(Value::as_array)
        .ok_or_else(|| LayoutError::ParseFailed("\"objects\" is not an array".to_string()))?;

    let mut specs = Vec::with_capacity(objects.len());
    for (index, entry) in objects.iter().enumerate() {
        let entry = entry
            .as_object()
            .ok_or_else(|| LayoutError::ParseFailed(format!("object {index} is not a map")))?;
        let label = entry
            .get("label")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                LayoutError::ParseFailed(format!("object {index} lacks a non-empty label"))
            })?;
        let description = match entry.get("description") {
            None | Some(Value::Null) => "",
            Some(Value::String(s)) => s.trim(),
            Some(_) => {
                return Err(LayoutError::ParseFailed(format!(
                    "object {index} description is not a string"
                )))
            }
        };
        let coords = entry
            .get("box")
            .ok_or_else(|| LayoutError::ParseFailed(format!("object {index} lacks a box")))?;
        let bbox = parse_box(coords, index)?;
        specs.push(ObjectSpec::new(label, description, bbox.clamped()));
    }
    Ok(Layout::new(prompt, specs))
}

fn parse_box(value: &Value, index: usize) -> Result<BBox, LayoutError> {
    let items = value.as_array().ok_or_else(|| LayoutError::CoordinateError {
        index,
        reason: "box is not an array".to_string(),
    })?;
    if items.len() != 4 {
        return Err(LayoutError::CoordinateError {
            index,
            reason: format!("expected 4 coordinates, found {}", items.len()),
        });
    }
    let mut c = [0.0; 4];
    for (slot, item) in c.iter_mut().zip(items) {
        *slot = item.as_f64().ok_or_else(|| LayoutError::CoordinateError {
            index,
            reason: format!("non-numeric coordinate {item}"),
        })?;
    }
    Ok(BBox::from(c))
}

fn find_layout_document(raw: &str) -> Option<Value> {
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.get("objects").is_some() {
                return Some(value);
            }
        }
    }
    None
}
