//! Explanation-fidelity analytics over attention matrices: per-token
//! scores, top-k explanation tokens, attention-overlap against gold spans,
//! numerical rank, map rendering, and the on-disk dump format.

mod dump;
mod fidelity;
mod overlap;
mod rank;
mod render;
mod scores;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dump::{read_attention_dump, write_attention_dump, DumpIndexEntry, ATTENTION_INDEX_FILE};
pub use fidelity::{fidelity_report, FidelityOptions, FidelityResult, RankMode, SampleFidelity};
pub use overlap::{ao_score, overlaps_gold, OverlapMode};
pub use rank::{default_rel_tol, svd_rank};
pub use render::{render_attention_map, RenderFormat};
pub use scores::{token_scores, top_k_tokens, Aggregation, ExplanationEstimate, DEFAULT_TOP_K};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("invalid attention record {sample_id}: {message}")]
    InvalidRecord { sample_id: String, message: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("dump error: {0}")]
    Dump(String),
}

/// One token of an attention record; offsets are chars into the post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub special: bool,
}

/// Tokens plus a row-stochastic attention matrix (rows are queries,
/// columns are keys) for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub tokens: Vec<AttentionToken>,
    pub matrix: DMatrix<f64>,
    /// Per-head (or per layer x head) matrices the main matrix was reduced
    /// from; empty when unavailable.
    pub heads: Vec<DMatrix<f64>>,
    pub provenance: String,
}

pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

impl AttentionRecord {
    pub fn validate(&self) -> Result<(), AttentionError> {
        let invalid = |message: String| AttentionError::InvalidRecord { sample_id: self.sample_id.clone(), message };
        let n = self.tokens.len();
        if self.matrix.shape() != (n, n) {
            return Err(invalid(format!("matrix {:?} for {n} tokens", self.matrix.shape())));
        }
        for (r, row) in self.matrix.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(format!("row {r} has negative or non-finite entries")));
            }
            if (row.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(invalid(format!("row {r} sums to {}", row.sum())));
            }
        }
        let mut last_end = 0;
        for t in self.tokens.iter().filter(|t| !t.special) {
            if t.start >= t.end || t.start < last_end {
                return Err(invalid(format!("token {:?} at [{}, {}) overlaps or is out of order", t.text, t.start, t.end)));
            }
            last_end = t.end;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Random row-stochastic record with `n` tokens; first and last are
    /// special, content tokens are consecutive 3-char words separated by
    /// single spaces.
    pub fn random_record(rng: &mut impl Rng, id: &str, n: usize) -> AttentionRecord {
        let content = n - 2;
        let mut tokens = vec![AttentionToken { text: "[CLS]".into(), start: 0, end: 0, special: true }];
        for i in 0..content {
            tokens.push(AttentionToken { text: format!("w{i:02}"), start: 4 * i, end: 4 * i + 3, special: false });
        }
        let len = if content == 0 { 0 } else { 4 * content - 1 };
        tokens.push(AttentionToken { text: "[SEP]".into(), start: len, end: len, special: true });
        let mut matrix = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        for mut row in matrix.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        AttentionRecord { sample_id: id.into(), tokens, matrix, heads: vec![], provenance: "test".into() }
    }

    #[test]
    fn random_records_validate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        random_record(&mut rng, "a", 7).validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut rec = random_record(&mut rng, "a", 5);
        rec.matrix[(0, 0)] += 0.1;
        assert!(rec.validate().is_err());
    }
}
