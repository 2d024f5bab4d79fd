//! Reservation-based selective evaluation: score only the most confident
//! fraction of the test set.
//!
//! The reservation score `g` is an abstention propensity, so "most
//! confident" means smallest `g`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{multiclass_metrics, multilabel_metrics, Averaging, MetricRow, MetricsError};
use crate::modeling::PredictionRecord;
use crate::schema::{LabelVector, TaskKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstentionError {
    #[error("invalid reservation policy: {0}")]
    Policy(String),
    #[error("record {0} has no reservation score; only gambler's-loss runs can be filtered")]
    Mode(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How a level is turned into a kept subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Keep the `ceil(level * N)` records with the smallest `g`.
    #[default]
    Quantile,
    /// Keep every record with `g <= level`.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservationPolicy {
    pub levels: Vec<f64>,
    pub mode: SelectionMode,
}

pub const DEFAULT_LEVELS: [f64; 4] = [1.0, 0.95, 0.85, 0.75];

impl Default for ReservationPolicy {
    fn default() -> Self {
        ReservationPolicy { levels: DEFAULT_LEVELS.to_vec(), mode: SelectionMode::Quantile }
    }
}

impl ReservationPolicy {
    pub fn new(levels: Vec<f64>) -> Result<Self, AbstentionError> {
        let p = ReservationPolicy { levels, mode: SelectionMode::Quantile };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AbstentionError> {
        if self.levels.is_empty() {
            return Err(AbstentionError::Policy("no levels".into()));
        }
        for &l in &self.levels {
            if !(l > 0.0 && l <= 1.0) {
                return Err(AbstentionError::Policy(format!("level {l} outside (0, 1]")));
            }
        }
        if self.levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(AbstentionError::Policy(format!("levels {:?} must be strictly decreasing", self.levels)));
        }
        Ok(())
    }
}

/// `ceil(res * n)`, robust to products like `0.95 * 100` landing a hair
/// above an integer.
pub fn kept_count(res: f64, n: usize) -> usize {
    ((res * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Splits record indices into (kept, abstained), both in input order.
pub fn select_indices(records: &[PredictionRecord], level: f64, mode: SelectionMode) -> Result<(Vec<usize>, Vec<usize>), AbstentionError> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(AbstentionError::Policy(format!("level {level} outside (0, 1]")));
    }
    let n = records.len();
    if mode == SelectionMode::Quantile && level >= 1.0 {
        return Ok(((0..n).collect(), vec![]));
    }
    let g: Vec<f64> = records
        .iter()
        .map(|r| r.reservation.ok_or_else(|| AbstentionError::Mode(r.sample_id.clone())))
        .collect::<Result<_, _>>()?;
    let mut keep = vec![false; n];
    match mode {
        SelectionMode::Quantile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
            for &i in order.iter().take(kept_count(level, n)) {
                keep[i] = true;
            }
        }
        SelectionMode::Threshold => {
            for i in 0..n {
                keep[i] = g[i] <= level;
            }
        }
    }
    Ok((0..n).partition(|&i| keep[i]))
}

/// Quantile selection: the `ceil(res * N)` records with the smallest `g`,
/// ties broken by input order. Both halves keep input order.
pub fn select_confident(
    records: &[PredictionRecord],
    res: f64,
) -> Result<(Vec<PredictionRecord>, Vec<PredictionRecord>), AbstentionError> {
    let (kept, abstained) = select_indices(records, res, SelectionMode::Quantile)?;
    Ok((kept.into_iter().map(|i| records[i].clone()).collect(), abstained.into_iter().map(|i| records[i].clone()).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationRow {
    pub reservation: f64,
    pub kept_ids: Vec<String>,
    pub abstained_ids: Vec<String>,
    /// `None` when nothing was kept (threshold mode only).
    pub metrics: Option<MetricRow>,
}

/// Metrics over records aligned position-wise with `gold`.
pub fn score_records(
    records: &[&PredictionRecord],
    gold: &[&LabelVector],
    averaging: Averaging,
) -> Result<MetricRow, AbstentionError> {
    let Some(first) = records.first() else {
        return Err(MetricsError::Empty.into());
    };
    let k = first.probs.len();
    match first.task {
        TaskKind::MultiLabel => {
            let mut preds = Vec::with_capacity(records.len());
            let mut golds = Vec::with_capacity(records.len());
            for (r, g) in records.iter().zip(gold) {
                match (r.predicted(), g) {
                    (LabelVector::MultiLabel { values: p }, LabelVector::MultiLabel { values: gv }) => {
                        preds.push(p);
                        golds.push(gv.clone());
                    }
                    _ => return Err(AbstentionError::Alignment(format!("task mismatch for {}", r.sample_id))),
                }
            }
            Ok(multilabel_metrics(&preds, &golds, averaging)?)
        }
        TaskKind::MultiClass => {
            let mut preds = Vec::with_capacity(records.len());
            let mut golds = Vec::with_capacity(records.len());
            for (r, g) in records.iter().zip(gold) {
                match (r.predicted(), g) {
                    (LabelVector::MultiClass { class: p }, LabelVector::MultiClass { class: gc }) => {
                        preds.push(p);
                        golds.push(*gc);
                    }
                    _ => return Err(AbstentionError::Alignment(format!("task mismatch for {}", r.sample_id))),
                }
            }
            Ok(multiclass_metrics(&preds, &golds, k, averaging)?)
        }
    }
}

/// One metric row per reservation level, each computed over the kept
/// records only. Every record must have a gold entry and vice versa.
pub fn selective_evaluate(
    records: &[PredictionRecord],
    gold: &HashMap<String, LabelVector>,
    policy: &ReservationPolicy,
    averaging: Averaging,
) -> Result<Vec<ReservationRow>, AbstentionError> {
    policy.validate()?;
    if records.len() != gold.len() {
        return Err(AbstentionError::Alignment(format!("{} records vs {} gold labels", records.len(), gold.len())));
    }
    let aligned: Vec<&LabelVector> = records
        .iter()
        .map(|r| gold.get(&r.sample_id).ok_or_else(|| AbstentionError::Alignment(format!("no gold label for {}", r.sample_id))))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(policy.levels.len());
    for &level in &policy.levels {
        let (kept, abstained) = select_indices(records, level, policy.mode)?;
        let metrics = if kept.is_empty() {
            None
        } else {
            let recs: Vec<&PredictionRecord> = kept.iter().map(|&i| &records[i]).collect();
            let golds: Vec<&LabelVector> = kept.iter().map(|&i| aligned[i]).collect();
            Some(score_records(&recs, &golds, averaging)?)
        };
        rows.push(ReservationRow {
            reservation: level,
            kept_ids: kept.iter().map(|&i| records[i].sample_id.clone()).collect(),
            abstained_ids: abstained.iter().map(|&i| records[i].sample_id.clone()).collect(),
            metrics,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: usize, g: f64, probs: Vec<f64>) -> PredictionRecord {
        PredictionRecord { sample_id: format!("s{id}"), task: TaskKind::MultiClass, probs, reservation: Some(g), truncated: false }
    }

    fn with_g(gs: &[f64]) -> Vec<PredictionRecord> {
        gs.iter().enumerate().map(|(i, &g)| rec(i, g, vec![0.6, 0.4])).collect()
    }

    #[test]
    fn counts_and_sort_oracle() {
        assert_eq!(kept_count(0.75, 8), 6);
        assert_eq!(kept_count(0.95, 100), 95);
        assert_eq!(kept_count(0.95, 7), 7);
        assert_eq!(kept_count(0.85, 7), 6);
        let (kept, abst) = select_confident(&with_g(&[0.3, 0.1, 0.4, 0.2]), 0.5).unwrap();
        assert_eq!(kept.iter().map(|r| r.sample_id.as_str()).collect::<Vec<_>>(), ["s1", "s3"]);
        assert_eq!(abst.len(), 2);
        let (kept, abst) = select_confident(&with_g(&[0.3, 0.1]), 1.0).unwrap();
        assert_eq!((kept.len(), abst.len()), (2, 0));
    }

    #[test]
    fn ties_follow_input_order() {
        let (kept, _) = select_confident(&with_g(&[0.2, 0.2, 0.2, 0.2]), 0.5).unwrap();
        assert_eq!(kept.iter().map(|r| r.sample_id.as_str()).collect::<Vec<_>>(), ["s0", "s1"]);
    }

    #[test]
    fn missing_reservation_is_mode_error() {
        let mut recs = with_g(&[0.1, 0.2]);
        recs[1].reservation = None;
        assert!(matches!(select_confident(&recs, 0.5), Err(AbstentionError::Mode(_))));
        assert!(select_confident(&recs, 1.0).is_ok());
    }

    #[test]
    fn policy_validation() {
        assert!(ReservationPolicy::new(vec![1.0, 0.9]).is_ok());
        assert!(ReservationPolicy::new(vec![0.9, 1.0]).is_err());
        assert!(ReservationPolicy::new(vec![1.0, 1.0]).is_err());
        assert!(ReservationPolicy::new(vec![1.2]).is_err());
        assert!(ReservationPolicy::new(vec![0.0]).is_err());
        assert!(ReservationPolicy::new(vec![]).is_err());
    }

    fn fixture() -> (Vec<PredictionRecord>, HashMap<String, LabelVector>) {
        // 8 samples, the two errors carry the largest g
        let mut recs = Vec::new();
        let mut gold = HashMap::new();
        for i in 0..8 {
            let wrong = i == 2 || i == 5;
            let g = if wrong { 0.9 + i as f64 * 0.01 } else { 0.1 + i as f64 * 0.01 };
            recs.push(rec(i, g, vec![0.7, 0.2, 0.1]));
            gold.insert(format!("s{i}"), LabelVector::MultiClass { class: if wrong { 1 } else { 0 } });
        }
        (recs, gold)
    }

    #[test]
    fn selective_rows() {
        let (recs, gold) = fixture();
        let rows = selective_evaluate(&recs, &gold, &ReservationPolicy::default(), Averaging::Macro).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.kept_ids.len()).collect::<Vec<_>>(), [8, 8, 7, 6]);
        let acc: Vec<f64> = rows.iter().map(|r| r.metrics.unwrap().accuracy).collect();
        assert_eq!(acc[0], 0.75);
        assert_eq!(acc[3], 1.0);
        let perfect = selective_evaluate(&recs[..2], &HashMap::from([
            ("s0".to_string(), LabelVector::MultiClass { class: 0 }),
            ("s1".to_string(), LabelVector::MultiClass { class: 0 }),
        ]), &ReservationPolicy::new(vec![1.0]).unwrap(), Averaging::Macro).unwrap();
        assert_eq!(perfect[0].metrics.unwrap().accuracy, 1.0);
    }

    #[test]
    fn full_reservation_equals_plain_scoring() {
        let (recs, gold) = fixture();
        let rows = selective_evaluate(&recs, &gold, &ReservationPolicy::new(vec![1.0]).unwrap(), Averaging::Macro).unwrap();
        let refs: Vec<&PredictionRecord> = recs.iter().collect();
        let golds: Vec<&LabelVector> = recs.iter().map(|r| &gold[&r.sample_id]).collect();
        assert_eq!(rows[0].metrics.unwrap(), score_records(&refs, &golds, Averaging::Macro).unwrap());
    }

    #[test]
    fn misaligned_ids_rejected() {
        let (recs, mut gold) = fixture();
        gold.remove("s3");
        gold.insert("other".into(), LabelVector::MultiClass { class: 0 });
        assert!(matches!(
            selective_evaluate(&recs, &gold, &ReservationPolicy::default(), Averaging::Macro),
            Err(AbstentionError::Alignment(_))
        ));
    }

    #[test]
    fn threshold_mode() {
        let recs = with_g(&[0.3, 0.1, 0.4, 0.2]);
        let (kept, abst) = select_indices(&recs, 0.25, SelectionMode::Threshold).unwrap();
        assert_eq!((kept, abst), (vec![1, 3], vec![0, 2]));
    }

    proptest! {
        #[test]
        fn kept_sets_nest_and_separate(gs in proptest::collection::vec(0u8..20, 1..120)) {
            let recs = with_g(&gs.iter().map(|&g| g as f64 / 20.0).collect::<Vec<_>>());
            let n = recs.len();
            let mut previous: Option<Vec<usize>> = None;
            for &res in &DEFAULT_LEVELS {
                let (kept, abst) = select_indices(&recs, res, SelectionMode::Quantile).unwrap();
                prop_assert_eq!(kept.len(), kept_count(res, n));
                prop_assert_eq!(kept.len() + abst.len(), n);
                let max_kept = kept.iter().map(|&i| recs[i].reservation.unwrap()).fold(f64::MIN, f64::max);
                let min_abst = abst.iter().map(|&i| recs[i].reservation.unwrap()).fold(f64::MAX, f64::min);
                prop_assert!(max_kept <= min_abst);
                if let Some(prev) = &previous {
                    prop_assert!(kept.iter().all(|i| prev.contains(i)));
                }
                previous = Some(kept);
            }
        }
    }
}
