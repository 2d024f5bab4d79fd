use serde::{Deserialize, Serialize};

use super::{AttentionError, AttentionToken, ExplanationEstimate};
use crate::ingest::Span;

/// When the selected tokens count as overlapping a gold explanation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// At least half of the selected tokens lie fully inside some span.
    #[default]
    TokenCount,
    /// At least half of the selected tokens' characters lie inside spans.
    CharMass,
}

/// Whether the estimated explanation overlaps the gold spans by at least
/// 50% under `mode`. Token containment uses char intervals only.
pub fn overlaps_gold(
    est: &ExplanationEstimate,
    tokens: &[AttentionToken],
    spans: &[Span],
    mode: OverlapMode,
) -> Result<bool, AttentionError> {
    if spans.is_empty() {
        return Err(AttentionError::Evaluation(format!("sample {} has no gold spans", est.sample_id)));
    }
    let selected = est
        .top_tokens
        .iter()
        .map(|&(i, _)| {
            tokens.get(i).ok_or_else(|| {
                AttentionError::Domain(format!("token index {i} out of range for sample {}", est.sample_id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if selected.is_empty() {
        return Ok(false);
    }
    match mode {
        OverlapMode::TokenCount => {
            let inside = selected.iter().filter(|t| spans.iter().any(|s| s.contains(t.start, t.end))).count();
            Ok(2 * inside >= selected.len())
        }
        OverlapMode::CharMass => {
            let (mut inside, mut total) = (0usize, 0usize);
            for t in &selected {
                for pos in t.start..t.end {
                    total += 1;
                    if spans.iter().any(|s| s.start <= pos && pos < s.end) {
                        inside += 1;
                    }
                }
            }
            Ok(total > 0 && 2 * inside >= total)
        }
    }
}

/// `O / T`: the fraction of true flags.
pub fn ao_score(flags: &[bool]) -> Result<f64, AttentionError> {
    if flags.is_empty() {
        return Err(AttentionError::Domain("attention-overlap needs at least one sample".into()));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}
