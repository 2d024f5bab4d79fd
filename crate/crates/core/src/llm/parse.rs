use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum ParseError {
    #[error("no [label, explanation] list in reply")]
    NoList,
    #[error("label {0} is not one of 1, 2, 3, 4")]
    InvalidLabel(i64),
    #[error("explanation is empty")]
    EmptyExplanation,
}

/// A reply reduced to its label (1..=4) and explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLLMResponse {
    pub label: u8,
    pub explanation: String,
    pub raw: String,
}

impl ParsedLLMResponse {
    /// 0-based class index.
    pub fn class_index(&self) -> usize {
        usize::from(self.label) - 1
    }
}

/// Canonical reply text: `[label, "explanation"]`.
pub fn format_response(label: usize, explanation: &str) -> String {
    format!("[{label}, {}]", serde_json::Value::String(explanation.to_string()))
}

fn list_head() -> &'static Regex {
    static HEAD: OnceLock<Regex> = OnceLock::new();
    HEAD.get_or_init(|| Regex::new(r#"\[\s*["']?\s*([+-]?\d+)\s*["']?\s*,\s*"#).expect("static pattern"))
}

/// Reads one explanation value from the start of `rest`, returning it and
/// whether a closing `]` followed.
fn explanation_value(rest: &str) -> Option<String> {
    let first = rest.chars().next()?;
    let closes = |tail: &str| tail.trim_start().starts_with(']');
    match first {
        '"' => {
            let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
            if let Some(Ok(s)) = stream.next() {
                if closes(&rest[stream.byte_offset()..]) {
                    return Some(s);
                }
            }
            // not valid JSON: take everything up to the last quote before `]`
            let end = rest.find(']')?;
            let inner = rest[1..end].trim_end();
            Some(inner.strip_suffix('"').unwrap_or(inner).to_string())
        }
        '[' => {
            let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Vec<String>>();
            match stream.next() {
                Some(Ok(parts)) if closes(&rest[stream.byte_offset()..]) => Some(parts.join(" ")),
                _ => {
                    let end = rest.find("]]")?;
                    Some(rest[1..end].to_string())
                }
            }
        }
        '\'' | '\u{201c}' | '\u{2018}' => {
            let close = match first {
                '\'' => '\'',
                '\u{201c}' => '\u{201d}',
                _ => '\u{2019}',
            };
            let body = &rest[first.len_utf8()..];
            // closing quote immediately followed by `]`
            let mut search = 0;
            while let Some(pos) = body[search..].find(close) {
                let at = search + pos;
                if closes(&body[at + close.len_utf8()..]) {
                    return Some(body[..at].to_string());
                }
                search = at + close.len_utf8();
            }
            let end = body.find(']')?;
            Some(body[..end].to_string())
        }
        _ => {
            let end = rest.find(']')?;
            Some(rest[..end].to_string())
        }
    }
}

/// Finds the first bracketed `[label, explanation]` list. The explanation
/// may be double-, single- or curly-quoted, bare, or a list of strings
/// (joined with spaces).
pub fn parse_response(raw: &str) -> Result<ParsedLLMResponse, ParseError> {
    for caps in list_head().captures_iter(raw) {
        let whole = caps.get(0).expect("match");
        let Some(explanation) = explanation_value(&raw[whole.end()..]) else {
            continue;
        };
        let label: i64 = caps[1].parse().map_err(|_| ParseError::InvalidLabel(i64::MAX))?;
        if !(1..=4).contains(&label) {
            return Err(ParseError::InvalidLabel(label));
        }
        let explanation = explanation.trim().to_string();
        if explanation.is_empty() {
            return Err(ParseError::EmptyExplanation);
        }
        return Ok(ParsedLLMResponse { label: label as u8, explanation, raw: raw.to_string() });
    }
    Err(ParseError::NoList)
}
