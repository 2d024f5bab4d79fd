//! Attention maps: the original post with per-token intensity highlighting
//! and gold spans underlined.

use serde::{Deserialize, Serialize};

use super::AttentionRecord;
use crate::ingest::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFormat {
    Ansi,
    Html,
}

const LEVELS: usize = 5;
/// xterm-256 background ramp from pale to saturated red.
const ANSI_RAMP: [u8; LEVELS] = [224, 217, 210, 203, 196];

#[derive(Clone, Copy, PartialEq, Eq)]
struct Style {
    level: usize,
    underline: bool,
}

fn intensity(score: f64, max: f64) -> usize {
    if max <= 0.0 || score <= 0.0 {
        0
    } else {
        ((score / max) * LEVELS as f64).round().clamp(0.0, LEVELS as f64) as usize
    }
}

fn styled_runs(rec: &AttentionRecord, text: &str, scores: &[f64], spans: &[Span]) -> Vec<(Style, String)> {
    let chars: Vec<char> = text.chars().collect();
    let max = rec
        .tokens
        .iter()
        .zip(scores)
        .filter(|(t, _)| !t.special)
        .map(|(_, &s)| s)
        .fold(0.0, f64::max);
    let mut levels = vec![0usize; chars.len()];
    for (t, &s) in rec.tokens.iter().zip(scores) {
        if t.special {
            continue;
        }
        let level = intensity(s, max);
        for slot in levels.iter_mut().take(t.end.min(chars.len())).skip(t.start) {
            *slot = level;
        }
    }
    let mut runs: Vec<(Style, String)> = Vec::new();
    for (pos, &ch) in chars.iter().enumerate() {
        let style = Style { level: levels[pos], underline: spans.iter().any(|s| s.start <= pos && pos < s.end) };
        match runs.last_mut() {
            Some((last, buf)) if *last == style => buf.push(ch),
            _ => runs.push((style, ch.to_string())),
        }
    }
    runs
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders `text` with the record's token scores. Intensity is the score
/// relative to the highest content-token score, quantized to five levels;
/// level 0 is left unhighlighted.
pub fn render_attention_map(
    rec: &AttentionRecord,
    text: &str,
    scores: &[f64],
    gold_spans: &[Span],
    format: RenderFormat,
) -> String {
    let runs = styled_runs(rec, text, scores, gold_spans);
    match format {
        RenderFormat::Ansi => {
            let mut out = String::new();
            for (style, chunk) in runs {
                let mut codes = Vec::new();
                if style.underline {
                    codes.push("4".to_string());
                }
                if style.level > 0 {
                    codes.push(format!("48;5;{}", ANSI_RAMP[style.level - 1]));
                }
                if codes.is_empty() {
                    out.push_str(&chunk);
                } else {
                    out.push_str(&format!("\x1b[{}m{chunk}\x1b[0m", codes.join(";")));
                }
            }
            out.push('\n');
            out
        }
        RenderFormat::Html => {
            let mut body = String::new();
            for (style, chunk) in runs {
                let mut piece = escape_html(&chunk);
                if style.level > 0 {
                    piece = format!("<span class=\"a{}\">{piece}</span>", style.level);
                }
                if style.underline {
                    piece = format!("<u>{piece}</u>");
                }
                body.push_str(&piece);
            }
            let mut css = String::new();
            for level in 1..=LEVELS {
                css.push_str(&format!(
                    ".a{level} {{ background-color: rgba(220, 40, 40, {:.1}); }}\n",
                    level as f64 / LEVELS as f64
                ));
            }
            format!(
                "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>attention: {}</title>\n<style>\n{css}u {{ text-decoration-color: #1f4fbf; text-decoration-thickness: 2px; }}\n</style>\n</head>\n<body>\n<p class=\"post\">{body}</p>\n</body>\n</html>\n",
                escape_html(&rec.sample_id)
            )
        }
    }
}
