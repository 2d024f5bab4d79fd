use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    ao_score, overlaps_gold, svd_rank, token_scores, top_k_tokens, Aggregation, AttentionError,
    AttentionRecord, OverlapMode, DEFAULT_TOP_K,
};
use crate::ingest::Span;

/// Which matrix the rank is computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// The record's main (head-averaged) matrix.
    #[default]
    Averaged,
    /// All per-head matrices concatenated row-wise; falls back to the main
    /// matrix when no heads are recorded.
    Stacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidelityOptions {
    pub aggregation: Aggregation,
    pub k: usize,
    pub overlap_mode: OverlapMode,
    /// `None` selects `max(m, n) * epsilon`.
    pub rel_tol: Option<f64>,
    pub rank_mode: RankMode,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        FidelityOptions {
            aggregation: Aggregation::ColumnMean,
            k: DEFAULT_TOP_K,
            overlap_mode: OverlapMode::TokenCount,
            rel_tol: None,
            rank_mode: RankMode::Averaged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFidelity {
    pub sample_id: String,
    /// `None` when the sample has no gold span to compare against.
    pub overlap: Option<bool>,
    pub rank: usize,
    pub top_tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    /// Mean of the overlap flags over scorable samples; `None` if no sample
    /// carries gold spans.
    pub ao_score: Option<f64>,
    pub avg_rank: f64,
    pub unscorable: usize,
    pub per_sample: Vec<SampleFidelity>,
}

fn rank_matrix(rec: &AttentionRecord, mode: RankMode) -> DMatrix<f64> {
    match mode {
        RankMode::Stacked if !rec.heads.is_empty() => {
            let cols = rec.matrix.ncols();
            let rows: usize = rec.heads.iter().map(|h| h.nrows()).sum();
            let mut stacked = DMatrix::zeros(rows, cols);
            let mut at = 0;
            for h in &rec.heads {
                stacked.rows_mut(at, h.nrows()).copy_from(h);
                at += h.nrows();
            }
            stacked
        }
        _ => rec.matrix.clone(),
    }
}

/// Per-sample overlap and rank plus dataset-level AO and mean rank.
/// `gold_spans` must have an entry for every record id; an empty span list
/// marks a sample as unscorable for AO.
pub fn fidelity_report(
    records: &[AttentionRecord],
    gold_spans: &HashMap<String, Vec<Span>>,
    options: &FidelityOptions,
) -> Result<FidelityResult, AttentionError> {
    if records.is_empty() {
        return Err(AttentionError::Evaluation("no attention records".into()));
    }
    let mut per_sample = Vec::with_capacity(records.len());
    for rec in records {
        let spans = gold_spans
            .get(&rec.sample_id)
            .ok_or_else(|| AttentionError::Alignment(format!("no gold entry for sample {}", rec.sample_id)))?;
        let scores = token_scores(rec, options.aggregation)?;
        let est = top_k_tokens(&rec.sample_id, &scores, &rec.tokens, options.k)?;
        let overlap = if spans.is_empty() {
            None
        } else {
            Some(overlaps_gold(&est, &rec.tokens, spans, options.overlap_mode)?)
        };
        let rank = svd_rank(&rank_matrix(rec, options.rank_mode), options.rel_tol)?;
        per_sample.push(SampleFidelity {
            sample_id: rec.sample_id.clone(),
            overlap,
            rank,
            top_tokens: est.top_tokens.iter().map(|t| t.0).collect(),
        });
    }
    let flags: Vec<bool> = per_sample.iter().filter_map(|s| s.overlap).collect();
    let ao = if flags.is_empty() { None } else { Some(ao_score(&flags)?) };
    let avg_rank = per_sample.iter().map(|s| s.rank as f64).sum::<f64>() / per_sample.len() as f64;
    Ok(FidelityResult { ao_score: ao, avg_rank, unscorable: per_sample.len() - flags.len(), per_sample })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionToken;

    fn identity_record() -> AttentionRecord {
        // "ab cd ef gh ij"
        let tokens = (0..5)
            .map(|i| AttentionToken { text: "xx".into(), start: 3 * i, end: 3 * i + 2, special: false })
            .collect();
        AttentionRecord {
            sample_id: "one".into(),
            tokens,
            matrix: DMatrix::identity(5, 5),
            heads: vec![],
            provenance: String::new(),
        }
    }

    #[test]
    fn perfect_single_sample() {
        let gold = HashMap::from([("one".to_string(), vec![Span { start: 0, end: 14, text: String::new() }])]);
        let res = fidelity_report(&[identity_record()], &gold, &FidelityOptions::default()).unwrap();
        assert_eq!(res.ao_score, Some(1.0));
        assert_eq!(res.avg_rank, 5.0);
        assert_eq!(res.per_sample[0].top_tokens, vec![0, 1, 2, 3]);
    }

    #[test]
    fn errors_and_unscorable() {
        let gold = HashMap::new();
        assert!(fidelity_report(&[], &gold, &FidelityOptions::default()).is_err());
        assert!(matches!(
            fidelity_report(&[identity_record()], &gold, &FidelityOptions::default()),
            Err(AttentionError::Alignment(_))
        ));
        let gold = HashMap::from([("one".to_string(), vec![])]);
        let res = fidelity_report(&[identity_record()], &gold, &FidelityOptions::default()).unwrap();
        assert_eq!(res.ao_score, None);
        assert_eq!(res.unscorable, 1);
    }

    #[test]
    fn stacked_rank_uses_heads() {
        let mut rec = identity_record();
        let e = |j: usize| DMatrix::from_fn(5, 5, |_, c| if c == j { 1.0 } else { 0.0 });
        rec.heads = vec![e(0), e(1)];
        let gold = HashMap::from([("one".to_string(), vec![])]);
        let opts = FidelityOptions { rank_mode: RankMode::Stacked, ..Default::default() };
        assert_eq!(fidelity_report(&[rec], &gold, &opts).unwrap().avg_rank, 2.0);
    }
}
