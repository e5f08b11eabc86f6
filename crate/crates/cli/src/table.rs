//! Tab-separated candidate/score table printed by `inspect` and `rerank`.
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a printed
//! table recovers the exact values. Lines starting with `#` are comments.

use refocus_core::engine::CandidateRecord;
use refocus_core::scoring::CandidateId;
use refocus_core::HybridScore;

pub const HEADER: [&str; 9] = [
    "id", "round", "seed", "parent", "scene", "object", "lambda", "combined", "image",
];
const NONE: &str = "-";

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub id: CandidateId,
    pub round: u32,
    pub seed: u64,
    pub parent_id: Option<CandidateId>,
    pub score: HybridScore,
    pub image_path: String,
}

impl From<&CandidateRecord> for TableRow {
    fn from(c: &CandidateRecord) -> Self {
        Self {
            id: c.id.clone(),
            round: c.round,
            seed: c.seed,
            parent_id: c.parent_id.clone(),
            score: c.score,
            image_path: c.image_path.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("table line {line}: {message}")]
pub struct TableError {
    pub line: usize,
    pub message: String,
}

pub fn render(rows: &[TableRow]) -> String {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for r in rows {
        let object = r.score.object.map_or(NONE.to_string(), |o| o.to_string());
        let parent = r.parent_id.as_ref().map_or(NONE, |p| p.as_str());
        let fields = [
            r.id.to_string(),
            r.round.to_string(),
            r.seed.to_string(),
            parent.to_string(),
            r.score.scene.to_string(),
            object,
            r.score.lambda_used.to_string(),
            r.score.combined.to_string(),
            r.image_path.clone(),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

fn field<T: std::str::FromStr>(value: &str, name: &str, line: usize) -> Result<T, TableError> {
    value.parse().map_err(|_| TableError {
        line,
        message: format!("bad {name} {value:?}"),
    })
}

pub fn parse(text: &str) -> Result<Vec<TableRow>, TableError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.split('\t').eq(HEADER) => {}
        Some((line, _)) => {
            return Err(TableError {
                line,
                message: "missing header".into(),
            })
        }
        None => return Ok(Vec::new()),
    }
    lines
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != HEADER.len() {
                return Err(TableError {
                    line,
                    message: format!("expected {} columns, found {}", HEADER.len(), cols.len()),
                });
            }
            let optional_id = |s: &str| (s != NONE).then(|| CandidateId::from(s));
            let object = if cols[5] == NONE {
                None
            } else {
                Some(field(cols[5], "object", line)?)
            };
            Ok(TableRow {
                id: CandidateId::from(cols[0]),
                round: field(cols[1], "round", line)?,
                seed: field(cols[2], "seed", line)?,
                parent_id: optional_id(cols[3]),
                score: HybridScore {
                    scene: field(cols[4], "scene", line)?,
                    object,
                    lambda_used: field(cols[6], "lambda", line)?,
                    combined: field(cols[7], "combined", line)?,
                },
                image_path: cols[8].to_string(),
            })
        })
        .collect()
}
