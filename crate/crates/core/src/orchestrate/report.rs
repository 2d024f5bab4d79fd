use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::OrchestrateError;
use crate::metrics::{Averaging, MetricRow};

/// One (run, seed, reservation level) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_hash: String,
    pub model: String,
    /// Loss for trained models, prompt variant for LLM runs.
    pub loss: String,
    pub label_count: usize,
    pub seed: u64,
    pub reservation: f64,
    pub kept: usize,
    pub abstained: usize,
    /// `None` when nothing was kept.
    pub metrics: Option<MetricRow>,
    /// Fidelity is computed on the full test set and repeated on every
    /// reservation row of a seed.
    pub ao_score: Option<f64>,
    pub avg_rank: Option<f64>,
}

/// Mean over seeds of one (model, loss, label count, reservation) group.
/// Each mean skips seeds where the value is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub loss: String,
    pub label_count: usize,
    pub reservation: f64,
    pub seeds: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub mcc: Option<f64>,
    pub ao_score: Option<f64>,
    pub avg_rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub averaging: Averaging,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

type GroupKey<'a> = (&'a str, &'a str, usize);

fn group_cmp(a: GroupKey, ra: f64, b: GroupKey, rb: f64) -> Ordering {
    a.cmp(&b).then(rb.partial_cmp(&ra).unwrap_or(Ordering::Equal))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl EvaluationReport {
    /// Sorts rows by (model, loss, label count, reservation descending,
    /// seed) and computes the seed means.
    pub fn from_rows(averaging: Averaging, mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| {
            group_cmp((&a.model, &a.loss, a.label_count), a.reservation, (&b.model, &b.loss, b.label_count), b.reservation)
                .then(a.seed.cmp(&b.seed))
                .then(a.config_hash.cmp(&b.config_hash))
        });
        let mut aggregates: Vec<AggregateRow> = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let head = &rows[start];
            let end = start
                + rows[start..]
                    .iter()
                    .take_while(|r| {
                        r.model == head.model
                            && r.loss == head.loss
                            && r.label_count == head.label_count
                            && r.reservation == head.reservation
                    })
                    .count();
            let group = &rows[start..end];
            let metric = |f: fn(&MetricRow) -> f64| mean(group.iter().map(|r| r.metrics.as_ref().map(f)));
            aggregates.push(AggregateRow {
                model: head.model.clone(),
                loss: head.loss.clone(),
                label_count: head.label_count,
                reservation: head.reservation,
                seeds: group.len(),
                precision: metric(|m| m.precision),
                recall: metric(|m| m.recall),
                f1: metric(|m| m.f1),
                accuracy: metric(|m| m.accuracy),
                mcc: metric(|m| m.mcc),
                ao_score: mean(group.iter().map(|r| r.ao_score)),
                avg_rank: mean(group.iter().map(|r| r.avg_rank)),
            });
            start = end;
        }
        EvaluationReport { averaging, rows, aggregates }
    }

    /// Combines several reports; they must share one averaging mode.
    pub fn merge(reports: Vec<EvaluationReport>) -> Result<Self, OrchestrateError> {
        let Some(averaging) = reports.first().map(|r| r.averaging) else {
            return Err(OrchestrateError::Report("nothing to merge".into()));
        };
        if reports.iter().any(|r| r.averaging != averaging) {
            return Err(OrchestrateError::Report("reports use different averaging modes".into()));
        }
        Ok(Self::from_rows(averaging, reports.into_iter().flat_map(|r| r.rows).collect()))
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn pct(res: f64) -> String {
    format!("{}%", (res * 1000.0).round() / 10.0)
}

fn averaging_name(a: Averaging) -> &'static str {
    match a {
        Averaging::Macro => "macro",
        Averaging::Weighted => "weighted",
        Averaging::Micro => "micro",
    }
}

fn render_markdown(report: &EvaluationReport) -> String {
    let levels: Vec<f64> = {
        let set: BTreeSet<u64> = report.aggregates.iter().map(|a| a.reservation.to_bits()).collect();
        let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        v
    };
    let mut out = String::from("# Evaluation report\n\n");
    let hashes: BTreeSet<&str> = report.rows.iter().map(|r| r.config_hash.as_str()).collect();
    out.push_str(&format!(
        "{} averaging; summary values are means over seeds. Configs: {}.\n\n",
        averaging_name(report.averaging),
        hashes.iter().map(|h| &h[..h.len().min(12)]).collect::<Vec<_>>().join(", ")
    ));
    out.push_str("## Summary\n\n| Model | Loss | Labels |");
    let mut rule = String::from("|---|---|---:|");
    for &l in &levels {
        for m in ["F1", "Acc", "MCC"] {
            out.push_str(&format!(" Res={} {m} |", pct(l)));
            rule.push_str("---:|");
        }
    }
    out.push_str(" AO | Rank |\n");
    rule.push_str("---:|---:|\n");
    out.push_str(&rule);
    let mut i = 0;
    while i < report.aggregates.len() {
        let head = &report.aggregates[i];
        let group: Vec<&AggregateRow> = report.aggregates[i..]
            .iter()
            .take_while(|a| a.model == head.model && a.loss == head.loss && a.label_count == head.label_count)
            .collect();
        i += group.len();
        out.push_str(&format!("| {} | {} | {} |", head.model, head.loss, head.label_count));
        for &l in &levels {
            match group.iter().find(|a| a.reservation == l) {
                Some(a) => out.push_str(&format!(" {} | {} | {} |", num(a.f1), num(a.accuracy), num(a.mcc))),
                None => out.push_str(" - | - | - |"),
            }
        }
        out.push_str(&format!(" {} | {} |\n", num(head.ao_score), num(head.avg_rank)));
    }
    out.push_str("\n## Per seed\n\n");
    out.push_str("| Model | Loss | Labels | Seed | Res | Kept | Precision | Recall | F1 | Accuracy | MCC | AO | Rank |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in &report.rows {
        let m = r.metrics.as_ref();
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.model,
            r.loss,
            r.label_count,
            r.seed,
            pct(r.reservation),
            r.kept,
            num(m.map(|m| m.precision)),
            num(m.map(|m| m.recall)),
            num(m.map(|m| m.f1)),
            num(m.map(|m| m.accuracy)),
            num(m.map(|m| m.mcc)),
            num(r.ao_score),
            num(r.avg_rank),
        ));
    }
    out
}

fn render_csv(report: &EvaluationReport) -> Result<String, OrchestrateError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| OrchestrateError::Report(e.to_string());
    w.write_record([
        "config_hash", "model", "loss", "label_count", "seed", "reservation", "kept", "abstained", "precision",
        "recall", "f1", "accuracy", "mcc", "ao_score", "avg_rank",
    ])
    .map_err(err)?;
    for r in &report.rows {
        let m = r.metrics.as_ref();
        w.write_record([
            r.config_hash.clone(),
            r.model.clone(),
            r.loss.clone(),
            r.label_count.to_string(),
            r.seed.to_string(),
            format!("{:.2}", r.reservation),
            r.kept.to_string(),
            r.abstained.to_string(),
            num(m.map(|m| m.precision)),
            num(m.map(|m| m.recall)),
            num(m.map(|m| m.f1)),
            num(m.map(|m| m.accuracy)),
            num(m.map(|m| m.mcc)),
            num(r.ao_score),
            num(r.avg_rank),
        ])
        .map_err(err)?;
    }
    for a in &report.aggregates {
        w.write_record([
            String::new(),
            a.model.clone(),
            a.loss.clone(),
            a.label_count.to_string(),
            "mean".into(),
            format!("{:.2}", a.reservation),
            String::new(),
            String::new(),
            num(a.precision),
            num(a.recall),
            num(a.f1),
            num(a.accuracy),
            num(a.mcc),
            num(a.ao_score),
            num(a.avg_rank),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| OrchestrateError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| OrchestrateError::Report(e.to_string()))
}

/// Renders a report; an empty report is an error rather than an empty
/// table. Values are printed with two decimals.
pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> Result<String, OrchestrateError> {
    if report.rows.is_empty() {
        return Err(OrchestrateError::Report("report has no rows".into()));
    }
    match format {
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Csv => render_csv(report),
    }
}
