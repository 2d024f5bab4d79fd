use serde::{Deserialize, Serialize};

use super::{AttentionError, AttentionRecord, AttentionToken};

pub const DEFAULT_TOP_K: usize = 4;

/// How a square attention matrix is reduced to one score per token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Attention received: column means over the non-special query rows.
    #[default]
    ColumnMean,
    /// The row of the first special (classification) token.
    ClsRow,
    /// Column means over every query row, special ones included.
    RowMean,
}

pub fn token_scores(rec: &AttentionRecord, aggregation: Aggregation) -> Result<Vec<f64>, AttentionError> {
    rec.validate()?;
    if rec.tokens.iter().all(|t| t.special) {
        return Err(AttentionError::Degenerate(format!("sample {} has only special tokens", rec.sample_id)));
    }
    let n = rec.tokens.len();
    let rows: Vec<usize> = match aggregation {
        Aggregation::ColumnMean => (0..n).filter(|&r| !rec.tokens[r].special).collect(),
        Aggregation::RowMean => (0..n).collect(),
        Aggregation::ClsRow => {
            let cls = rec.tokens.iter().position(|t| t.special).ok_or_else(|| {
                AttentionError::Degenerate(format!("sample {} has no special token", rec.sample_id))
            })?;
            vec![cls]
        }
    };
    let count = rows.len() as f64;
    Ok((0..n).map(|c| rows.iter().map(|&r| rec.matrix[(r, c)]).sum::<f64>() / count).collect())
}

/// The k highest-scoring non-special tokens of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEstimate {
    pub sample_id: String,
    /// `(token index, score)`, scores non-increasing.
    pub top_tokens: Vec<(usize, f64)>,
    pub k: usize,
}

/// Highest scores first, ties toward the smaller token index.
pub fn top_k_tokens(
    sample_id: &str,
    scores: &[f64],
    tokens: &[AttentionToken],
    k: usize,
) -> Result<ExplanationEstimate, AttentionError> {
    if k == 0 {
        return Err(AttentionError::Domain("k must be at least 1".into()));
    }
    if scores.len() != tokens.len() {
        return Err(AttentionError::Domain(format!("{} scores for {} tokens", scores.len(), tokens.len())));
    }
    let mut candidates: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].special).collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    candidates.truncate(k);
    Ok(ExplanationEstimate {
        sample_id: sample_id.to_string(),
        top_tokens: candidates.into_iter().map(|i| (i, scores[i])).collect(),
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_support::random_record;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_tokens(n: usize) -> Vec<AttentionToken> {
        (0..n).map(|i| AttentionToken { text: format!("t{i}"), start: 2 * i, end: 2 * i + 1, special: false }).collect()
    }

    fn record(matrix: DMatrix<f64>) -> AttentionRecord {
        let n = matrix.nrows();
        AttentionRecord { sample_id: "s".into(), tokens: plain_tokens(n), matrix, heads: vec![], provenance: String::new() }
    }

    #[test]
    fn uniform_and_point_mass() {
        let n = 5;
        let scores = token_scores(&record(DMatrix::from_element(n, n, 0.2)), Aggregation::ColumnMean).unwrap();
        assert!(scores.iter().all(|&s| (s - 0.2).abs() < 1e-15));
        let point = DMatrix::from_fn(n, n, |_, c| if c == 3 { 1.0 } else { 0.0 });
        let scores = token_scores(&record(point), Aggregation::ColumnMean).unwrap();
        assert_eq!(scores, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn random_matches_column_mean_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = random_record(&mut rng, "r", 8);
        let scores = token_scores(&rec, Aggregation::ColumnMean).unwrap();
        let queries: Vec<usize> = (0..8).filter(|&r| !rec.tokens[r].special).collect();
        for c in 0..8 {
            let mut acc = 0.0;
            for &r in &queries {
                acc += rec.matrix[(r, c)];
            }
            assert!((scores[c] - acc / queries.len() as f64).abs() < 1e-12);
        }
        let cls = token_scores(&rec, Aggregation::ClsRow).unwrap();
        assert_eq!(cls, rec.matrix.row(0).iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn column_means_sum_to_one_without_specials() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rec = record(random_record(&mut rng, "r", 6).matrix);
        let s: f64 = token_scores(&rec, Aggregation::ColumnMean).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_special_is_degenerate() {
        let mut rec = record(DMatrix::from_element(2, 2, 0.5));
        rec.tokens.iter_mut().for_each(|t| t.special = true);
        assert!(matches!(token_scores(&rec, Aggregation::ColumnMean), Err(AttentionError::Degenerate(_))));
    }

    #[test]
    fn top_k_cases() {
        let toks = plain_tokens(3);
        let est = top_k_tokens("s", &[0.1, 0.5, 0.4], &toks, 4).unwrap();
        assert_eq!(est.top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 2, 0]);
        let toks = plain_tokens(5);
        let est = top_k_tokens("s", &[0.4, 0.3, 0.2, 0.1, 0.05], &toks, 4).unwrap();
        assert_eq!(est.top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let est = top_k_tokens("s", &[0.2, 0.3, 0.3, 0.2, 0.0], &toks, 2).unwrap();
        assert_eq!(est.top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!(top_k_tokens("s", &[0.1], &plain_tokens(1), 0).is_err());
    }

    #[test]
    fn top_k_skips_special_and_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut toks = plain_tokens(50);
            for t in toks.iter_mut().step_by(7) {
                t.special = true;
            }
            let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let est = top_k_tokens("s", &scores, &toks, 4).unwrap();
            let mut oracle: Vec<(f64, usize)> =
                (0..50).filter(|&i| !toks[i].special).map(|i| (scores[i], i)).collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let expect: Vec<usize> = oracle.iter().take(4).map(|p| p.1).collect();
            assert_eq!(est.top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(), expect);
            // strictly increasing transform keeps the selection
            let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) * 10.0 - 2.0).collect();
            assert_eq!(top_k_tokens("s", &cubed, &toks, 4).unwrap().top_tokens.iter().map(|t| t.0).collect::<Vec<_>>(), expect);
        }
    }
}
