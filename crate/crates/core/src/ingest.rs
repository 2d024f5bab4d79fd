//! Dataset loading, corpus statistics and seeded train/test splits.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes,
//! so they line up with what other tooling reports for the same text.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{LabelVector, TaskKind, WellnessDimension};

/// Version tag written into every canonical post record.
pub const POSTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("row {row}: explanation {span:?} not found in post")]
    SpanAlignment { row: usize, span: String },
    #[error("split error: {0}")]
    Split(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.display().to_string(), source }
    }
}

/// Gold explanation span, `[start, end)` in chars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Span {
    pub fn contains(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPost {
    pub id: String,
    pub text: String,
    pub gold: LabelVector,
    #[serde(default)]
    pub spans: Vec<Span>,
}

impl AnnotatedPost {
    /// Checks span bounds and that every span's text equals its slice.
    pub fn validate_spans(&self) -> Result<(), String> {
        let len = self.text.chars().count();
        for s in &self.spans {
            if !(s.start < s.end && s.end <= len) {
                return Err(format!("span [{}, {}) out of bounds for length {len}", s.start, s.end));
            }
            if char_slice(&self.text, s.start, s.end) != s.text {
                return Err(format!("span [{}, {}) does not match its text", s.start, s.end));
            }
        }
        Ok(())
    }
}

/// Slice by char offsets; out-of-range ends are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}

/// Char offset of the first exact occurrence of `needle`.
pub fn find_char_offset(text: &str, needle: &str) -> Option<usize> {
    text.find(needle).map(|byte| text[..byte].chars().count())
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    let raw = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    Ok(raw.strip_prefix('\u{feff}').map(str::to_owned).unwrap_or(raw))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn parse(content: &str) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(content.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| IngestError::Format(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IngestError::Format(e.to_string()))?;
        Ok(Table { headers, rows })
    }

    fn column(&self, aliases: &[&str]) -> Option<usize> {
        aliases
            .iter()
            .find_map(|a| self.headers.iter().position(|h| h.eq_ignore_ascii_case(a)))
    }

    fn require(&self, aliases: &[&str]) -> Result<usize, IngestError> {
        self.column(aliases)
            .ok_or_else(|| IngestError::Format(format!("missing column `{}`", aliases[0])))
    }
}

const TEXT_COLUMNS: &[&str] = &["text", "post", "Text"];
const ID_COLUMNS: &[&str] = &["id", "post_id"];

fn row_text(record: &csv::StringRecord, col: usize, row: usize) -> Result<String, IngestError> {
    let text = record.get(col).unwrap_or_default();
    if text.trim().is_empty() {
        return Err(IngestError::Validation { row, message: "empty text".into() });
    }
    Ok(text.to_string())
}

fn row_id(record: &csv::StringRecord, col: Option<usize>, prefix: &str, row: usize) -> String {
    col.and_then(|c| record.get(c))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .unwrap_or_else(|| format!("{prefix}-{row}"))
}

/// Loads the multi-label corpus: a text column plus one 0/1 column per
/// base dimension code.
pub fn load_multiwd(path: impl AsRef<Path>) -> Result<Vec<AnnotatedPost>, IngestError> {
    parse_multiwd(&read_text(path.as_ref())?)
}

pub fn parse_multiwd(content: &str) -> Result<Vec<AnnotatedPost>, IngestError> {
    let table = Table::parse(content)?;
    let text_col = table.require(TEXT_COLUMNS)?;
    let id_col = table.column(ID_COLUMNS);
    let label_cols = WellnessDimension::BASE
        .iter()
        .map(|d| table.require(&[d.code()]))
        .collect::<Result<Vec<_>, _>>()?;

    let mut posts = Vec::with_capacity(table.rows.len());
    for (row, record) in table.rows.iter().enumerate() {
        let text = row_text(record, text_col, row)?;
        let mut values = Vec::with_capacity(6);
        for (&col, dim) in label_cols.iter().zip(WellnessDimension::BASE) {
            let cell = record.get(col).unwrap_or_default().trim();
            let bit = match cell {
                "0" | "0.0" => false,
                "1" | "1.0" => true,
                other => {
                    return Err(IngestError::Validation {
                        row,
                        message: format!("non-binary value {other:?} in column {dim}"),
                    })
                }
            };
            values.push(bit);
        }
        posts.push(AnnotatedPost {
            id: row_id(record, id_col, "multiwd", row),
            text,
            gold: LabelVector::MultiLabel { values },
            spans: Vec::new(),
        });
    }
    Ok(posts)
}

/// Loads the explained multi-class corpus. Class labels in the file are
/// 1-based (1..=4) and stored 0-based. Without offset columns, the span is
/// placed at the first exact occurrence of the explanation text.
pub fn load_wellxplain(path: impl AsRef<Path>) -> Result<Vec<AnnotatedPost>, IngestError> {
    parse_wellxplain(&read_text(path.as_ref())?)
}

pub fn parse_wellxplain(content: &str) -> Result<Vec<AnnotatedPost>, IngestError> {
    let table = Table::parse(content)?;
    let text_col = table.require(TEXT_COLUMNS)?;
    let label_col = table.require(&["label", "class", "aspect", "wd"])?;
    let expl_col = table.require(&["explanation", "explanations", "span"])?;
    let id_col = table.column(ID_COLUMNS);
    let start_col = table.column(&["span_start", "start"]);
    let end_col = table.column(&["span_end", "end"]);

    let mut posts = Vec::with_capacity(table.rows.len());
    for (row, record) in table.rows.iter().enumerate() {
        let text = row_text(record, text_col, row)?;
        let raw_label = record.get(label_col).unwrap_or_default().trim();
        let class = match raw_label.parse::<usize>() {
            Ok(c @ 1..=4) => c - 1,
            _ => {
                return Err(IngestError::Validation {
                    row,
                    message: format!("class label {raw_label:?} not in 1..=4"),
                })
            }
        };
        let explanation = record.get(expl_col).unwrap_or_default().trim().to_string();
        if explanation.is_empty() {
            return Err(IngestError::Validation { row, message: "empty explanation".into() });
        }
        let offsets = match (start_col, end_col) {
            (Some(s), Some(e)) => {
                let parse = |c: usize| record.get(c).unwrap_or_default().trim().parse::<usize>();
                match (parse(s), parse(e)) {
                    (Ok(a), Ok(b)) => Some((a, b)),
                    _ => None,
                }
            }
            _ => None,
        };
        let span = match offsets {
            Some((start, end)) => Span { start, end, text: explanation },
            None => {
                let start = find_char_offset(&text, &explanation)
                    .ok_or(IngestError::SpanAlignment { row, span: explanation.clone() })?;
                let end = start + explanation.chars().count();
                Span { start, end, text: explanation }
            }
        };
        let post = AnnotatedPost {
            id: row_id(record, id_col, "wellxplain", row),
            text,
            gold: LabelVector::MultiClass { class },
            spans: vec![span],
        };
        post.validate_spans().map_err(|message| IngestError::Validation { row, message })?;
        posts.push(post);
    }
    Ok(posts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sample_count: usize,
    pub avg_words_per_post: f64,
}

/// Sample count and mean number of whitespace-delimited words per post.
pub fn dataset_stats(posts: &[AnnotatedPost]) -> DatasetStats {
    if posts.is_empty() {
        return DatasetStats { sample_count: 0, avg_words_per_post: 0.0 };
    }
    let words: usize = posts.iter().map(|p| p.text.split_whitespace().count()).sum();
    DatasetStats { sample_count: posts.len(), avg_words_per_post: words as f64 / posts.len() as f64 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded shuffle followed by a prefix/suffix cut at `round(fraction * N)`.
pub fn split(
    posts: &[AnnotatedPost],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::Split(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    if posts.len() < 2 {
        return Err(IngestError::Split(format!("need at least 2 posts, got {}", posts.len())));
    }
    let mut ids: Vec<String> = posts.iter().map(|p| p.id.clone()).collect();
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(IngestError::Split("duplicate post ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let cut = (train_fraction * ids.len() as f64).round() as usize;
    let test = ids.split_off(cut);
    Ok(DatasetSplit { train: ids, test, seed, train_fraction })
}

#[derive(Serialize, Deserialize)]
struct PostRecord {
    version: u32,
    id: String,
    text: String,
    labels: LabelVector,
    spans: Vec<Span>,
}

/// Writes posts as canonical JSON lines.
pub fn write_posts_jsonl(posts: &[AnnotatedPost], mut out: impl Write) -> std::io::Result<()> {
    for p in posts {
        let rec = PostRecord {
            version: POSTS_FORMAT_VERSION,
            id: p.id.clone(),
            text: p.text.clone(),
            labels: p.gold.clone(),
            spans: p.spans.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_posts_jsonl(input: impl BufRead) -> Result<Vec<AnnotatedPost>, IngestError> {
    let mut posts = Vec::new();
    for (row, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PostRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::Validation { row, message: e.to_string() })?;
        if rec.version != POSTS_FORMAT_VERSION {
            return Err(IngestError::Validation {
                row,
                message: format!("unsupported posts format version {}", rec.version),
            });
        }
        let post = AnnotatedPost { id: rec.id, text: rec.text, gold: rec.labels, spans: rec.spans };
        post.validate_spans().map_err(|message| IngestError::Validation { row, message })?;
        posts.push(post);
    }
    Ok(posts)
}

const FILLER: &[&str] = &[
    "today", "really", "just", "feel", "think", "maybe", "again", "week", "people", "always",
    "never", "thing", "sometimes", "around", "still", "tired", "long", "day", "night", "morning",
    "something", "everyone", "nothing", "honestly", "about", "with", "after", "before", "because",
    "little", "much", "more", "very", "lately", "things", "time", "know", "want", "said", "went",
];

/// Three-word cue phrases per base dimension, in base order.
const CUES: [[&str; 3]; 6] = [
    ["chronic back pain", "cannot sleep anymore", "stopped eating properly"],
    ["failed every exam", "quit my classes", "cannot focus studying"],
    ["lost my job", "boss fired me", "hate my career"],
    ["no real friends", "family ignores me", "completely alone socially"],
    ["lost my faith", "life feels meaningless", "no greater purpose"],
    ["constant panic attacks", "crying every night", "overwhelmed with anxiety"],
];

/// Base-dimension groups behind each class of the four-class synthetic task.
const CLASS_GROUPS: [&[usize]; 4] = [&[0], &[1, 2], &[3], &[4, 5]];

/// Keyword-separable synthetic corpus.
///
/// Multi-class posts carry one cue phrase from their class's dimensions
/// (PA, IA/VA, SA, SpA/EA) and a gold span over it. Multi-label posts carry
/// one to three base dimensions over the six-label schema, each with a cue
/// phrase.
pub fn synthetic_keyword_posts(n: usize, task: TaskKind, seed: u64) -> Vec<AnnotatedPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let dims: Vec<usize> = match task {
                TaskKind::MultiClass => {
                    let group = CLASS_GROUPS[i % 4];
                    vec![group[rng.random_range(0..group.len())]]
                }
                TaskKind::MultiLabel => {
                    let mut all: Vec<usize> = (0..6).collect();
                    all.shuffle(&mut rng);
                    let k = rng.random_range(1..=3);
                    let mut d = all[..k].to_vec();
                    d.sort_unstable();
                    d
                }
            };
            let mut words: Vec<String> = (0..rng.random_range(8..16))
                .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
                .collect();
            let mut cues = Vec::new();
            for &d in &dims {
                let cue = CUES[d][rng.random_range(0..3)];
                let at = rng.random_range(0..=words.len());
                words.insert(at, cue.to_string());
                cues.push(cue);
            }
            let text = words.join(" ");
            let gold = match task {
                TaskKind::MultiClass => LabelVector::MultiClass { class: i % 4 },
                TaskKind::MultiLabel => {
                    LabelVector::MultiLabel { values: (0..6).map(|d| dims.contains(&d)).collect() }
                }
            };
            let spans = match task {
                TaskKind::MultiClass => {
                    let cue = cues[0];
                    let start = find_char_offset(&text, cue).expect("cue was inserted");
                    vec![Span { start, end: start + cue.chars().count(), text: cue.to_string() }]
                }
                TaskKind::MultiLabel => Vec::new(),
            };
            AnnotatedPost { id: format!("syn-{i:05}"), text, gold, spans }
        })
        .collect()
}
