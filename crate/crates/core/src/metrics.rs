//! Precision, recall, F1, accuracy and Matthews correlation for multi-label
//! and multi-class predictions.
//!
//! Any ratio with a zero denominator is reported as 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class {class} out of range for {k} classes")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("no samples to score")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn add(self, other: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Weighted,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub averaging: Averaging,
    pub support: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

pub fn binary_metrics(c: ConfusionCounts) -> MetricRow {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    MetricRow {
        precision,
        recall,
        f1: harmonic(precision, recall),
        accuracy: ratio(tp + tn, c.total() as f64),
        mcc: ratio(tp * tn - fp * fn_, den),
        averaging: Averaging::Macro,
        support: c.total() as usize,
    }
}

/// Per-label confusion counts over an N x K pair of binary matrices.
pub fn per_label_counts(
    preds: &[Vec<bool>],
    gold: &[Vec<bool>],
) -> Result<Vec<ConfusionCounts>, MetricsError> {
    if preds.len() != gold.len() {
        return Err(MetricsError::Shape(format!("{} predictions vs {} gold", preds.len(), gold.len())));
    }
    let k = gold.first().map_or(0, Vec::len);
    let mut counts = vec![ConfusionCounts::default(); k];
    for (i, (p, g)) in preds.iter().zip(gold).enumerate() {
        if p.len() != k || g.len() != k {
            return Err(MetricsError::Shape(format!("row {i} has width {}/{}, expected {k}", p.len(), g.len())));
        }
        for (c, (&pv, &gv)) in counts.iter_mut().zip(p.iter().zip(g)) {
            c.record(pv, gv);
        }
    }
    Ok(counts)
}

fn weighted_mean(values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    ratio(values.zip(weights).map(|(v, w)| v * w).sum(), total)
}

fn combine(rows: &[MetricRow], weights: &[f64], averaging: Averaging, support: usize) -> MetricRow {
    let pick = |f: fn(&MetricRow) -> f64| -> f64 {
        match averaging {
            Averaging::Weighted => weighted_mean(rows.iter().map(f), weights),
            _ => ratio(rows.iter().map(f).sum(), rows.len() as f64),
        }
    };
    MetricRow {
        precision: pick(|r| r.precision),
        recall: pick(|r| r.recall),
        f1: pick(|r| r.f1),
        accuracy: pick(|r| r.accuracy),
        mcc: pick(|r| r.mcc),
        averaging,
        support,
    }
}

/// Label-wise binary metrics combined by `averaging`. Accuracy is the
/// per-label (Hamming) accuracy; micro averaging pools the counts.
pub fn multilabel_metrics(
    preds: &[Vec<bool>],
    gold: &[Vec<bool>],
    averaging: Averaging,
) -> Result<MetricRow, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let counts = per_label_counts(preds, gold)?;
    let n = gold.len();
    if averaging == Averaging::Micro {
        let pooled = counts.iter().fold(ConfusionCounts::default(), |a, &c| a.add(c));
        return Ok(MetricRow { averaging, support: n, ..binary_metrics(pooled) });
    }
    let rows: Vec<MetricRow> = counts.iter().map(|&c| binary_metrics(c)).collect();
    let weights: Vec<f64> = counts.iter().map(|c| (c.tp + c.fn_) as f64).collect();
    Ok(combine(&rows, &weights, averaging, n))
}

/// Square confusion table, rows = gold class, columns = predicted class.
///
/// With `with_abstain`, an extra trailing column/row collects samples that
/// produced no usable prediction; it never holds gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    k: usize,
    size: usize,
    cells: Vec<u64>,
}

impl ConfusionTable {
    pub fn new(k: usize, with_abstain: bool) -> Self {
        let size = if with_abstain { k + 1 } else { k };
        ConfusionTable { k, size, cells: vec![0; size * size] }
    }

    pub fn record(&mut self, predicted: Option<usize>, gold: usize) -> Result<(), MetricsError> {
        let k = self.k;
        if gold >= k {
            return Err(MetricsError::ClassOutOfRange { class: gold, k });
        }
        let col = match predicted {
            Some(p) if p < k => p,
            Some(p) => return Err(MetricsError::ClassOutOfRange { class: p, k }),
            None if self.size > k => k,
            None => return Err(MetricsError::Shape("missing prediction without abstain column".into())),
        };
        self.cells[gold * self.size + col] += 1;
        Ok(())
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.cells[gold * self.size + predicted]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        (0..self.size).map(|c| self.get(r, c)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.size).map(|r| self.get(r, c)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// One-vs-rest counts for a real class.
    pub fn one_vs_rest(&self, class: usize) -> ConfusionCounts {
        let tp = self.get(class, class);
        let fp = self.col_sum(class) - tp;
        let fn_ = self.row_sum(class) - tp;
        ConfusionCounts { tp, fp, fn_, tn: self.total() - tp - fp - fn_ }
    }

    /// Multiclass Matthews correlation over the full table.
    pub fn mcc(&self) -> f64 {
        let s = self.total() as f64;
        let c = self.correct() as f64;
        let (mut pt, mut pp, mut tt) = (0.0, 0.0, 0.0);
        for i in 0..self.size {
            let p = self.col_sum(i) as f64;
            let t = self.row_sum(i) as f64;
            pt += p * t;
            pp += p * p;
            tt += t * t;
        }
        ratio(c * s - pt, ((s * s - pp) * (s * s - tt)).sqrt())
    }

    pub fn metrics(&self, averaging: Averaging) -> MetricRow {
        let n = self.total();
        let accuracy = ratio(self.correct() as f64, n as f64);
        let mcc = self.mcc();
        let per_class: Vec<ConfusionCounts> = (0..self.k).map(|c| self.one_vs_rest(c)).collect();
        let (precision, recall, f1) = if averaging == Averaging::Micro {
            let pooled = per_class.iter().fold(ConfusionCounts::default(), |a, &c| a.add(c));
            let row = binary_metrics(pooled);
            (row.precision, row.recall, row.f1)
        } else {
            let rows: Vec<MetricRow> = per_class.iter().map(|&c| binary_metrics(c)).collect();
            let weights: Vec<f64> = per_class.iter().map(|c| (c.tp + c.fn_) as f64).collect();
            let row = combine(&rows, &weights, averaging, n as usize);
            (row.precision, row.recall, row.f1)
        };
        MetricRow { precision, recall, f1, accuracy, mcc, averaging, support: n as usize }
    }
}

/// One-vs-rest P/R/F1 combined by `averaging`; MCC from the full K x K
/// table.
pub fn multiclass_metrics(
    pred: &[usize],
    gold: &[usize],
    k: usize,
    averaging: Averaging,
) -> Result<MetricRow, MetricsError> {
    let pred: Vec<Option<usize>> = pred.iter().copied().map(Some).collect();
    multiclass_metrics_with_abstain(&pred, gold, k, averaging)
}

/// As [`multiclass_metrics`], where `None` marks a sample with no usable
/// prediction. Such samples count as wrong for every metric.
pub fn multiclass_metrics_with_abstain(
    pred: &[Option<usize>],
    gold: &[usize],
    k: usize,
    averaging: Averaging,
) -> Result<MetricRow, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::Shape(format!("{} predictions vs {} gold", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut table = ConfusionTable::new(k, pred.iter().any(Option::is_none));
    for (&p, &g) in pred.iter().zip(gold) {
        table.record(p, g)?;
    }
    Ok(table.metrics(averaging))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn perfect_binary() {
        let row = binary_metrics(ConfusionCounts { tp: 7, ..Default::default() });
        assert_eq!((row.precision, row.recall, row.f1, row.accuracy), (1.0, 1.0, 1.0, 1.0));
        // mcc needs both classes present; with tn = 0 the denominator vanishes
        let row = binary_metrics(ConfusionCounts { tp: 7, tn: 3, ..Default::default() });
        assert_eq!(row.mcc, 1.0);
    }

    #[test]
    fn mcc_hand_value() {
        let row = binary_metrics(ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 6 });
        assert!(close(row.mcc, 11.0 / 21.0));
        assert!(close(row.precision, 2.0 / 3.0));
        assert!(close(row.accuracy, 0.8));
    }

    #[test]
    fn empty_counts_are_zero() {
        let row = binary_metrics(ConfusionCounts::default());
        assert_eq!([row.precision, row.recall, row.f1, row.accuracy, row.mcc], [0.0; 5]);
    }

    #[test]
    fn multilabel_identity_and_single_label() {
        let gold = vec![vec![true, false], vec![false, true], vec![true, true], vec![false, false]];
        for avg in [Averaging::Macro, Averaging::Weighted, Averaging::Micro] {
            let row = multilabel_metrics(&gold, &gold, avg).unwrap();
            assert_eq!([row.precision, row.recall, row.f1, row.accuracy, row.mcc], [1.0; 5]);
        }
        let p = vec![vec![true], vec![true], vec![false], vec![false]];
        let g = vec![vec![true], vec![false], vec![true], vec![false]];
        let row = multilabel_metrics(&p, &g, Averaging::Macro).unwrap();
        let bin = binary_metrics(ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        assert_eq!(row.f1, bin.f1);
        assert_eq!(row.mcc, bin.mcc);
    }

    #[test]
    fn shape_errors() {
        assert!(multilabel_metrics(&[vec![true]], &[vec![true, false]], Averaging::Macro).is_err());
        assert!(multiclass_metrics(&[4], &[0], 4, Averaging::Macro).is_err());
        assert!(multiclass_metrics(&[], &[], 4, Averaging::Macro).is_err());
    }

    #[test]
    fn multiclass_identity_and_constant() {
        let gold = [0, 1, 2, 3, 0, 1, 2, 3];
        let row = multiclass_metrics(&gold, &gold, 4, Averaging::Macro).unwrap();
        assert_eq!((row.mcc, row.accuracy), (1.0, 1.0));
        let row = multiclass_metrics(&[2; 8], &gold, 4, Averaging::Macro).unwrap();
        assert_eq!(row.mcc, 0.0);
        assert_eq!(row.accuracy, 0.25);
    }

    /// Brute-force K x K MCC via the covariance definition over one-hot
    /// indicator vectors.
    fn mcc_covariance(pred: &[usize], gold: &[usize], k: usize) -> f64 {
        let n = pred.len() as f64;
        let onehot = |c: usize| (0..k).map(move |j| if j == c { 1.0 } else { 0.0 });
        let mean = |xs: &[usize]| -> Vec<f64> {
            let mut m = vec![0.0; k];
            for &x in xs {
                for (j, v) in onehot(x).enumerate() {
                    m[j] += v / n;
                }
            }
            m
        };
        let (mp, mg) = (mean(pred), mean(gold));
        let cov = |a: &[usize], ma: &[f64], b: &[usize], mb: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    onehot(x)
                        .zip(onehot(y))
                        .enumerate()
                        .map(|(j, (u, v))| (u - ma[j]) * (v - mb[j]))
                        .sum::<f64>()
                })
                .sum()
        };
        let den = (cov(pred, &mp, pred, &mp) * cov(gold, &mg, gold, &mg)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            cov(pred, &mp, gold, &mg) / den
        }
    }

    #[test]
    fn twenty_sample_fixture_matches_covariance_mcc() {
        let gold = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3];
        let pred = [0, 0, 0, 1, 2, 1, 1, 1, 1, 0, 2, 2, 3, 2, 2, 3, 3, 0, 3, 1];
        let row = multiclass_metrics(&pred, &gold, 4, Averaging::Macro).unwrap();
        assert!(close(row.mcc, mcc_covariance(&pred, &gold, 4)));
        assert!(close(row.accuracy, 14.0 / 20.0));
    }

    #[test]
    fn abstain_counts_as_wrong() {
        let gold = [0, 1, 2, 3];
        let pred = [Some(0), None, Some(2), Some(3)];
        let row = multiclass_metrics_with_abstain(&pred, &gold, 4, Averaging::Macro).unwrap();
        assert_eq!(row.accuracy, 0.75);
        assert!(row.mcc < 1.0);
        let row = multiclass_metrics_with_abstain(&pred, &gold, 4, Averaging::Micro).unwrap();
        assert_eq!(row.precision, 1.0);
        assert_eq!(row.recall, 0.75);
    }

    #[test]
    fn mcc_symmetry_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let a = multiclass_metrics(&pred, &gold, 4, Averaging::Macro).unwrap();
            let b = multiclass_metrics(&gold, &pred, 4, Averaging::Macro).unwrap();
            assert!(close(a.mcc, b.mcc));
            let rev = |v: &[usize]| v.iter().rev().copied().collect::<Vec<_>>();
            let c = multiclass_metrics(&rev(&pred), &rev(&gold), 4, Averaging::Macro).unwrap();
            assert!(close(a.f1, c.f1) && close(a.mcc, c.mcc));
            let hits = pred.iter().zip(&gold).filter(|(p, g)| p == g).count();
            assert!(close(a.accuracy, hits as f64 / n as f64));
        }
    }

    #[test]
    fn label_permutation_keeps_macro() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<bool>> {
            (0..n).map(|_| (0..3).map(|_| rng.random_bool(0.4)).collect()).collect()
        };
        let (p, g) = (gen(&mut rng), gen(&mut rng));
        let perm = |m: &[Vec<bool>]| -> Vec<Vec<bool>> {
            m.iter().map(|r| vec![r[2], r[0], r[1]]).collect()
        };
        let a = multilabel_metrics(&p, &g, Averaging::Macro).unwrap();
        let b = multilabel_metrics(&perm(&p), &perm(&g), Averaging::Macro).unwrap();
        assert!(close(a.f1, b.f1) && close(a.mcc, b.mcc) && close(a.precision, b.precision));
        let counts = per_label_counts(&p, &g).unwrap();
        let permuted = per_label_counts(&perm(&p), &perm(&g)).unwrap();
        assert_eq!(permuted, vec![counts[2], counts[0], counts[1]]);
    }
}
